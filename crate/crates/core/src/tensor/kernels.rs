//! Raw forward/backward kernels on flat buffers.

use super::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<T: Element>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let spatial = oh * ow;
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * spatial;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * spatial]
    };
    for n in 0..g.batch {
        let x = &input[n * in_len..(n + 1) * in_len];
        let y = &mut out[n * out_len..(n + 1) * out_len];
        for (co, chunk) in y.chunks_mut(spatial).enumerate() {
            chunk.fill(bias[co]);
        }
        let rhs = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        T::gemm(g.out_channels, g.col_rows(), spatial, weight, false, rhs, false, y, true);
    }
    out
}

/// Gradients of a convolution; any of the outputs may be skipped.
pub(crate) struct ConvGrads<'a, T> {
    pub input: Option<&'a mut [T]>,
    pub weight: Option<&'a mut [T]>,
    pub bias: Option<&'a mut [T]>,
}

pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grads: ConvGrads<'_, T>,
) {
    let spatial = g.out_h() * g.out_w();
    let in_len = g.in_channels * g.in_h * g.in_w;
    let out_len = g.out_channels * spatial;
    let rows = g.col_rows();
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * spatial }];
    let mut grad_cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * spatial }];
    for n in 0..g.batch {
        let dy = &grad_out[n * out_len..(n + 1) * out_len];
        if let Some(db) = grads.bias.as_deref_mut() {
            for (co, chunk) in dy.chunks(spatial).enumerate() {
                db[co] += chunk.iter().copied().sum();
            }
        }
        if let Some(dw) = grads.weight.as_deref_mut() {
            let x = &input[n * in_len..(n + 1) * in_len];
            let rhs = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut cols);
                &cols
            };
            // dW[co, r] += Σ_s dy[co, s] · cols[r, s]
            T::gemm(g.out_channels, spatial, rows, dy, false, rhs, true, dw, true);
        }
        if let Some(dx) = grads.input.as_deref_mut() {
            let dx = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(rows, g.out_channels, spatial, weight, true, dy, false, dx, true);
            } else {
                T::gemm(rows, g.out_channels, spatial, weight, true, dy, false, &mut grad_cols, false);
                col2im(g, &grad_cols, dx);
            }
        }
    }
}

/// Source taps for one output coordinate of a half-pixel bilinear resample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

pub(crate) fn bilinear_taps<T: Element>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: T::lit(frac),
            }
        })
        .collect()
}

pub(crate) fn resize_forward<T: Element>(
    planes: usize,
    (ih, iw): (usize, usize),
    (oh, ow): (usize, usize),
    input: &[T],
) -> Vec<T> {
    if (ih, iw) == (oh, ow) {
        return input.to_vec();
    }
    let ys = bilinear_taps::<T>(ih, oh);
    let xs = bilinear_taps::<T>(iw, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * ih * iw..(p + 1) * ih * iw];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, ty) in ys.iter().enumerate() {
            let r0 = &src[ty.lo * iw..(ty.lo + 1) * iw];
            let r1 = &src[ty.hi * iw..(ty.hi + 1) * iw];
            let wy = ty.frac;
            for (ox, tx) in xs.iter().enumerate() {
                let wx = tx.frac;
                let top = r0[tx.lo] * (T::one() - wx) + r0[tx.hi] * wx;
                let bottom = r1[tx.lo] * (T::one() - wx) + r1[tx.hi] * wx;
                dst[oy * ow + ox] = top * (T::one() - wy) + bottom * wy;
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Element>(
    planes: usize,
    (ih, iw): (usize, usize),
    (oh, ow): (usize, usize),
    grad_out: &[T],
    grad_in: &mut [T],
) {
    if (ih, iw) == (oh, ow) {
        for (d, g) in grad_in.iter_mut().zip(grad_out) {
            *d += *g;
        }
        return;
    }
    let ys = bilinear_taps::<T>(ih, oh);
    let xs = bilinear_taps::<T>(iw, ow);
    for p in 0..planes {
        let dst = &mut grad_in[p * ih * iw..(p + 1) * ih * iw];
        let src = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, ty) in ys.iter().enumerate() {
            let wy = ty.frac;
            for (ox, tx) in xs.iter().enumerate() {
                let wx = tx.frac;
                let g = src[oy * ow + ox];
                let top = g * (T::one() - wy);
                let bottom = g * wy;
                dst[ty.lo * iw + tx.lo] += top * (T::one() - wx);
                dst[ty.lo * iw + tx.hi] += top * wx;
                dst[ty.hi * iw + tx.lo] += bottom * (T::one() - wx);
                dst[ty.hi * iw + tx.hi] += bottom * wx;
            }
        }
    }
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_follow_half_pixel_convention() {
        let taps = bilinear_taps::<f64>(2, 4);
        let vals: Vec<f64> = taps
            .iter()
            .map(|t| [0.0, 1.0][t.lo] * (1.0 - t.frac) + [0.0, 1.0][t.hi] * t.frac)
            .collect();
        assert_eq!(vals, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn strided_conv_output_size() {
        let g = ConvGeometry {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            in_h: 7,
            in_w: 8,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (4, 4));
    }
}
