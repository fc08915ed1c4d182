//! Deterministic fixtures shared by the benchmarks.

use graphseg::rng::rng_for;
use graphseg::{Image, Tensor};
use rand::Rng;

/// Tensor of the given shape with a fixed pseudo-random fill in [−1, 1).
pub fn fixture_tensor(shape: &[usize], tag: u64) -> Tensor<f32> {
    let mut rng = rng_for(0, "bench", tag);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Smooth colour gradient with a fixed checker texture.
pub fn fixture_image(size: usize) -> Image {
    Image::from_fn(size, size, |y, x| {
        let u = y as f32 / size as f32;
        let v = x as f32 / size as f32;
        let c = if (y / 8 + x / 8) % 2 == 0 { 0.1 } else { 0.0 };
        [u * 0.8 + c, v * 0.6 + c, 0.5 - 0.3 * u + c]
    })
    .expect("positive size")
}
