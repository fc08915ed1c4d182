use criterion::{criterion_group, criterion_main, Criterion};
use graphseg::rng::rng_for;
use graphseg::synth::{synthesize, Procedural};
use graphseg::{CascadeModel, Category, ModelConfig, SizeLevel, SynthesisConfig};
use graphseg_bench::fixture_image;
use std::hint::black_box;

fn synthesis(c: &mut Criterion) {
    let base = fixture_image(256);
    for cat in Category::ALL {
        let cfg = SynthesisConfig::standard(cat, SizeLevel::Medium);
        let mut i = 0;
        c.bench_function(&format!("synthesize {cat} medium 256"), |bench| {
            bench.iter(|| {
                i += 1;
                let mut rng = rng_for(0, "bench-synth", i);
                black_box(synthesize(&base, &Procedural, &cfg, &mut rng).unwrap())
            })
        });
    }
}

fn cascade(c: &mut Criterion) {
    let model = CascadeModel::<f32>::new(
        ModelConfig {
            resolution: 64,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    let img = fixture_image(64);
    c.bench_function("cascade predict_soft 3 levels 64x64", |bench| {
        bench.iter(|| black_box(model.predict_soft(&img).unwrap()))
    });
}

criterion_group!(benches, synthesis, cascade);
criterion_main!(benches);
