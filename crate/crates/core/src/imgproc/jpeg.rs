//! Lossy part of a baseline JPEG round trip: colour transform, 8×8 DCT,
//! quantisation and the inverse path. No entropy coding, no chroma
//! subsampling.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::Image;
use crate::error::{Error, Result};

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn scale_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((u32::from(*b) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Luma and chroma quantisation tables for a quality factor in [1,100].
pub fn quant_tables(quality: u8) -> Result<([f64; 64], [f64; 64])> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Argument(format!(
            "JPEG quality {quality} outside [1,100]"
        )));
    }
    Ok((
        scale_table(&LUMA_BASE, quality),
        scale_table(&CHROMA_BASE, quality),
    ))
}

/// cos((2x+1)uπ/16) · c(u), with c the orthonormal DCT-II scale.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Simulated JPEG compression at `quality`, returned at 8-bit precision.
pub fn jpeg_degrade(image: &Image, quality: u8) -> Result<Image> {
    let (luma_q, chroma_q) = quant_tables(quality)?;
    let (h, w) = (image.height(), image.width());
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    // Y, Cb, Cr planes in [0,255], edge-replicated to the padded size.
    let mut planes = vec![vec![0.0f64; ph * pw]; 3];
    for y in 0..ph {
        for x in 0..pw {
            let [r, g, b] = image.get(y.min(h - 1), x.min(w - 1)).map(|v| f64::from(v) * 255.0);
            let i = y * pw + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
            planes[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            planes[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
    }
    for (c, plane) in planes.iter_mut().enumerate() {
        let table = if c == 0 { &luma_q } else { &chroma_q };
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = plane[(by + y) * pw + bx + x] - 128.0;
                    }
                }
                let mut coef = dct2(&block);
                for (v, q) in coef.iter_mut().zip(table) {
                    *v = (*v / q).round() * q;
                }
                let rec = idct2(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        plane[(by + y) * pw + bx + x] = rec[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let i = y * pw + x;
            let (yy, cb, cr) = (planes[0][i], planes[1][i] - 128.0, planes[2][i] - 128.0);
            let rgb = [
                yy + 1.402 * cr,
                yy - 0.344_136 * cb - 0.714_136 * cr,
                yy + 1.772 * cb,
            ];
            pixels.extend(rgb.map(|v| (v.round().clamp(0.0, 255.0) / 255.0) as f32));
        }
    }
    Image::new(h, w, pixels)
}

/// Peak signal-to-noise ratio in dB for signals in [0,1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Dimension("PSNR of differently sized images".into()));
    }
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}
