//! Finite-difference checks of every differentiable tape op and of a tiny
//! two-level cascade, in double precision.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::cascade::{CascadeModel, ModelConfig};
use crate::error::Result;
use crate::imgproc::{build_pyramid, BinaryMask, Image};
use crate::rng::rng_for;
use crate::tensor::gradcheck::{check, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::tensor::{Tape, Tensor, Var};
use crate::train::balance_weights;

fn normal(shape: &[usize], scale: f64, rng: &mut crate::rng::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Values bounded away from zero so relu's kink is never straddled.
fn off_kink(shape: &[usize], rng: &mut crate::rng::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ r ⊙ x` with a fixed random `r`, so every output element contributes.
fn project(tape: &mut Tape<f64>, x: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = rng_for(rng_seed, "gradcheck-projection", 0);
    let r = normal(tape.value(x).shape(), 1.0, &mut rng);
    let r = tape.constant(r);
    let y = tape.mul(x, r)?;
    Ok(tape.sum(y))
}

/// Results for every op check plus the composed cascade.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = rng_for(seed, "gradcheck", 0);
    let (h, tol) = (DEFAULT_STEP, DEFAULT_TOLERANCE);
    let mut out = Vec::new();

    for (stride, padding) in [(1, 1), (1, 0), (2, 1)] {
        let inputs = [
            normal(&[2, 3, 6, 5], 1.0, &mut rng),
            normal(&[4, 3, 3, 3], 0.5, &mut rng),
            normal(&[4], 0.5, &mut rng),
        ];
        out.push(check(
            &format!("conv2d stride {stride} padding {padding}"),
            &inputs,
            h,
            tol,
            |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, padding)?;
                project(t, y, seed)
            },
        )?);
    }
    let inputs = [
        normal(&[1, 2, 4, 4], 1.0, &mut rng),
        normal(&[3, 2, 1, 1], 1.0, &mut rng),
        normal(&[3], 1.0, &mut rng),
    ];
    out.push(check("conv2d 1x1", &inputs, h, tol, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 0)?;
        project(t, y, seed)
    })?);

    let pair = [normal(&[2, 2, 3, 3], 1.0, &mut rng), normal(&[2, 2, 3, 3], 1.0, &mut rng)];
    out.push(check("add", &pair, h, tol, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, seed)
    })?);
    out.push(check("mul", &pair, h, tol, |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, seed)
    })?);
    out.push(check("add shared operand", &pair[..1], h, tol, |t, v| {
        let y = t.mul(v[0], v[0])?;
        let y = t.add(y, v[0])?;
        project(t, y, seed)
    })?);

    let x = [off_kink(&[2, 3, 4, 4], &mut rng)];
    out.push(check("relu", &x, h, tol, |t, v| {
        let y = t.relu(v[0]);
        project(t, y, seed)
    })?);
    let x = [normal(&[2, 3, 4, 4], 2.0, &mut rng)];
    out.push(check("sigmoid", &x, h, tol, |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, seed)
    })?);
    out.push(check("sum", &x, h, tol, |t, v| Ok(t.sum(v[0])))?);

    for (oh, ow) in [(9, 7), (3, 2), (5, 5), (1, 1)] {
        let x = [normal(&[2, 2, 5, 4], 1.0, &mut rng)];
        out.push(check(
            &format!("resize_bilinear 5x4 to {oh}x{ow}"),
            &x,
            h,
            tol,
            |t, v| {
                let y = t.resize_bilinear(v[0], oh, ow)?;
                project(t, y, seed)
            },
        )?);
    }

    let cat = [normal(&[2, 3, 3, 4], 1.0, &mut rng), normal(&[2, 1, 3, 4], 1.0, &mut rng)];
    out.push(check("concat_channels", &cat, h, tol, |t, v| {
        let y = t.concat_channels(v[0], v[1])?;
        project(t, y, seed)
    })?);

    let pred = [Tensor::from_fn(&[3, 1, 4, 4], |_| rng.random_range(0.05..0.95))];
    let target = Tensor::from_fn(&[3, 1, 4, 4], |_| f64::from(u8::from(rng.random_bool(0.4))));
    let pos: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..5.0)).collect();
    let neg: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..2.0)).collect();
    out.push(check("weighted_bce", &pred, h, tol, |t, v| {
        let y = t.constant(target.clone());
        t.weighted_bce(v[0], y, &pos, &neg)
    })?);

    out.push(cascade_check(seed, h, tol)?);
    Ok(out)
}

/// Balanced BCE summed over the cumulative masks of a 2-level cascade,
/// differentiated with respect to every parameter.
fn cascade_check(seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    let config = ModelConfig {
        levels: 2,
        channels: 3,
        resblocks: 1,
        sigma_step: 2.0,
        resolution: 16,
        ..ModelConfig::default()
    };
    let model = CascadeModel::<f64>::new(config.clone(), seed)?;
    let mut rng = rng_for(seed, "gradcheck-cascade", 0);
    let image = Image::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()])?;
    let gt = BinaryMask::from_fn(16, 16, |y, x| (4..11).contains(&y) && (3..9).contains(&x));
    let pyramid = build_pyramid(&image, 2, 2.0)?;
    let levels = crate::cascade::pyramid_inputs::<f64>(&[pyramid], 2)?;
    let target = gt.to_tensor().cast::<f64>();
    let (p, n, _) = balance_weights(&gt);
    check("cascade 2-level", model.params(), h, tol, |t, params| {
        let inputs: Vec<Var> = levels.iter().map(|x| t.constant(x.clone())).collect();
        let out = CascadeModel::graph(&config, t, params, &inputs, 1)?;
        let y = t.constant(target.clone());
        let a = t.weighted_bce(out.cumulative[0], y, &[p], &[n])?;
        let b = t.weighted_bce(out.cumulative[1], y, &[p], &[n])?;
        t.add(a, b)
    })
}
