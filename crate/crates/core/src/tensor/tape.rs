use super::kernels::{self, ConvGeometry, ConvGrads};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Resize {
        input: Var,
        planes: usize,
        from: (usize, usize),
        to: (usize, usize),
    },
    Concat {
        a: Var,
        b: Var,
        batch: usize,
        a_len: usize,
        b_len: usize,
    },
    WeightedBce {
        pred: Var,
        target: Var,
        pos_weight: Vec<T>,
        neg_weight: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes that do not depend on a `requires_grad` leaf are constants
/// and receive no gradient.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record a leaf; it participates in differentiation iff the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn param(&mut self, tensor: &Tensor<T>, trainable: bool) -> Var {
        let mut t = Tensor::new(tensor.shape(), tensor.data().to_vec()).expect("shape preserved");
        t.set_requires_grad(trainable);
        self.leaf(t)
    }

    /// Copy of `var`'s value that does not carry gradient.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(Error::Dimension(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Dimension(format!(
                "conv2d: kernel must be square and odd, got {kh}×{kw}"
            )));
        }
        if self.value(bias).numel() != cout {
            return Err(Error::Dimension(format!(
                "conv2d: bias has {} entries for {cout} output channels",
                self.value(bias).numel()
            )));
        }
        if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "conv2d: {kh}×{kw} kernel does not fit a {h}×{w} input with padding {padding}"
            )));
        }
        let geometry = ConvGeometry {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            in_h: h,
            in_w: w,
            kernel: kh,
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(
            &geometry,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, cout, geometry.out_h(), geometry.out_w()], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v.max(T::zero())).collect();
        let value = Tensor::new(src.shape(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| kernels::sigmoid(*v)).collect();
        let value = Tensor::new(src.shape(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Half-pixel-center bilinear resample of the two trailing axes.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Dimension(format!(
                "resize target {out_h}×{out_w} must be at least 1×1"
            )));
        }
        let planes = n * c;
        let data = kernels::resize_forward(planes, (h, w), (out_h, out_w), self.value(x).data());
        let value = Tensor::new(&[n, c, out_h, out_w], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::Resize {
                input: x,
                planes,
                from: (h, w),
                to: (out_h, out_w),
            },
            rg,
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Dimension(format!(
                "concat: batch/spatial dims {n}×{h}×{w} and {nb}×{hb}×{wb} differ"
            )));
        }
        let (a_len, b_len) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (a_len + b_len));
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * a_len..(i + 1) * a_len]);
            data.extend_from_slice(&self.value(b).data()[i * b_len..(i + 1) * b_len]);
        }
        let value = Tensor::new(&[n, ca + cb, h, w], data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            value,
            Op::Concat {
                a,
                b,
                batch: n,
                a_len,
                b_len,
            },
            rg,
        ))
    }

    /// Class-weighted binary cross-entropy, averaged over pixels and then over
    /// the batch. `pred` and `target` share a shape whose leading axis is the
    /// batch; `pos_weight[n]`/`neg_weight[n]` weight the positive/negative
    /// terms of sample `n`. Only `pred` is differentiated.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        target: Var,
        pos_weight: &[T],
        neg_weight: &[T],
    ) -> Result<Var> {
        self.same_shape(pred, target, "weighted_bce")?;
        let batch = self.value(pred).shape()[0];
        if pos_weight.len() != batch || neg_weight.len() != batch {
            return Err(Error::Dimension(format!(
                "weighted_bce: {batch} samples but {}/{} weights",
                pos_weight.len(),
                neg_weight.len()
            )));
        }
        if batch == 0 || self.value(pred).numel() == 0 {
            return Err(Error::Dimension("weighted_bce on an empty tensor".into()));
        }
        let per = self.value(pred).numel() / batch;
        let eps = T::lit(BCE_EPS);
        let hi = T::one() - eps;
        let p = self.value(pred).data();
        let y = self.value(target).data();
        let mut total = T::zero();
        for n in 0..batch {
            let mut acc = T::zero();
            for i in n * per..(n + 1) * per {
                let pc = p[i].max(eps).min(hi);
                acc += pos_weight[n] * y[i] * pc.ln()
                    + neg_weight[n] * (T::one() - y[i]) * (T::one() - pc).ln();
            }
            total += -acc / T::lit(per as f64);
        }
        let value = Tensor::scalar(total / T::lit(batch as f64));
        let rg = self.needs(&[pred]);
        Ok(self.push(
            value,
            Op::WeightedBce {
                pred,
                target,
                pos_weight: pos_weight.to_vec(),
                neg_weight: neg_weight.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar. Gradients of nodes used by several
    /// consumers are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            } => {
                let mut gi = wants(*input).then(|| vec![T::zero(); self.value(*input).numel()]);
                let mut gw = wants(*weight).then(|| vec![T::zero(); self.value(*weight).numel()]);
                let mut gb = wants(*bias).then(|| vec![T::zero(); self.value(*bias).numel()]);
                kernels::conv2d_backward(
                    geometry,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    ConvGrads {
                        input: gi.as_deref_mut(),
                        weight: gw.as_deref_mut(),
                        bias: gb.as_deref_mut(),
                    },
                );
                for (var, grad) in [(*input, gi), (*weight, gw), (*bias, gb)] {
                    if let Some(grad) = grad {
                        accumulate(grads, var, &grad);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let d: Vec<T> = g.iter().zip(vb).map(|(g, y)| *g * *y).collect();
                    accumulate(grads, *a, &d);
                }
                if wants(*b) {
                    let d: Vec<T> = g.iter().zip(va).map(|(g, x)| *g * *x).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::Relu(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| if *v > T::zero() { *g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<T> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| *g * *s * (T::one() - *s))
                    .collect();
                accumulate(grads, *x, &d);
            }
            Op::Resize {
                input,
                planes,
                from,
                to,
            } => {
                let mut d = vec![T::zero(); self.value(*input).numel()];
                kernels::resize_backward(*planes, *from, *to, g, &mut d);
                accumulate(grads, *input, &d);
            }
            Op::Concat {
                a,
                b,
                batch,
                a_len,
                b_len,
            } => {
                let stride = a_len + b_len;
                if wants(*a) {
                    let d: Vec<T> = (0..*batch)
                        .flat_map(|n| g[n * stride..n * stride + a_len].iter().copied())
                        .collect();
                    accumulate(grads, *a, &d);
                }
                if wants(*b) {
                    let d: Vec<T> = (0..*batch)
                        .flat_map(|n| g[n * stride + a_len..(n + 1) * stride].iter().copied())
                        .collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::WeightedBce {
                pred,
                target,
                pos_weight,
                neg_weight,
            } => {
                let p = self.value(*pred).data();
                let y = self.value(*target).data();
                let batch = pos_weight.len();
                let per = p.len() / batch;
                let eps = T::lit(BCE_EPS);
                let hi = T::one() - eps;
                let scale = g[0] / T::lit((batch * per) as f64);
                let mut d = vec![T::zero(); p.len()];
                for n in 0..batch {
                    for i in n * per..(n + 1) * per {
                        if p[i] < eps || p[i] > hi {
                            continue;
                        }
                        d[i] = -scale
                            * (pos_weight[n] * y[i] / p[i]
                                - neg_weight[n] * (T::one() - y[i]) / (T::one() - p[i]));
                    }
                }
                accumulate(grads, *pred, &d);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                accumulate(grads, *x, &d);
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], var: Var, delta: &[T]) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += *d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}
