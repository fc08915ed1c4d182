use criterion::{criterion_group, criterion_main, Criterion};
use graphseg::imgproc::jpeg_degrade;
use graphseg::Tape;
use graphseg_bench::{fixture_image, fixture_tensor};
use std::hint::black_box;

fn conv2d(c: &mut Criterion) {
    let x = fixture_tensor(&[8, 16, 64, 64], 0);
    let w = fixture_tensor(&[16, 16, 3, 3], 1);
    let b = fixture_tensor(&[16], 2);
    c.bench_function("conv2d forward 8x16x64x64 k3", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
            black_box(t.conv2d(xv, wv, bv, 1, 1).unwrap());
        })
    });
    c.bench_function("conv2d forward+backward 8x16x64x64 k3", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone().with_requires_grad(true));
            let wv = t.leaf(w.clone().with_requires_grad(true));
            let bv = t.leaf(b.clone().with_requires_grad(true));
            let y = t.conv2d(xv, wv, bv, 1, 1).unwrap();
            let s = t.sum(y);
            black_box(t.backward(s).unwrap());
        })
    });
}

fn jpeg(c: &mut Criterion) {
    let img = fixture_image(256);
    c.bench_function("jpeg_degrade 256x256 q75", |bench| {
        bench.iter(|| black_box(jpeg_degrade(&img, 75).unwrap()))
    });
}

criterion_group!(benches, conv2d, jpeg);
criterion_main!(benches);
