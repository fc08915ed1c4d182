use graphseg::rng::rng_for;
use graphseg::synth::{Category, DataConfig};
use graphseg::train::{downsample_gt, run_training, stage_loss, TrainConfig};
use graphseg::{BinaryMask, CascadeModel, Image, ModelConfig, StageConfig};
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        levels: 2,
        channels: 3,
        resblocks: 1,
        sigma_step: 2.0,
        resolution: 16,
        ..ModelConfig::default()
    }
}

fn batch(seed: u64, n: usize) -> (Vec<Image>, Vec<BinaryMask>) {
    let mut rng = rng_for(seed, "tests/batch", 0);
    let images = (0..n)
        .map(|_| Image::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap())
        .collect();
    let gts = (0..n)
        .map(|_| {
            let p = rng.random::<f64>();
            BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(p))
        })
        .collect();
    (images, gts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stage_loss_ignores_batch_order(seed in 0u64..1000, n in 2usize..5, rot in 1usize..4, level in 0usize..2) {
        let model = CascadeModel::<f64>::new(tiny(), seed).unwrap();
        let (mut images, mut gts) = batch(seed, n);
        let a = stage_loss(&model, &images, &gts, level).unwrap();
        images.rotate_left(rot % n);
        gts.rotate_left(rot % n);
        let b = stage_loss(&model, &images, &gts, level).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn downsampled_masks_keep_solid_regions(h in 1usize..20, w in 1usize..20, th in 1usize..20, tw in 1usize..20, on in any::<bool>()) {
        let (th, tw) = (th.min(h), tw.min(w));
        let full = BinaryMask::from_fn(h, w, |_, _| on);
        let small = downsample_gt(&full, th, tw).unwrap();
        prop_assert_eq!((small.height(), small.width()), (th, tw));
        prop_assert_eq!(small.count(), if on { th * tw } else { 0 });
    }

    #[test]
    fn downsampling_by_one_is_the_identity(bits in proptest::collection::vec(any::<bool>(), 35)) {
        let m = BinaryMask::from_fn(5, 7, |y, x| bits[y * 7 + x]);
        prop_assert_eq!(downsample_gt(&m, 5, 7).unwrap(), m);
    }
}

#[test]
fn coarse_levels_stay_frozen_but_shape_the_output() {
    let config = TrainConfig {
        model: ModelConfig {
            channels: 4,
            resolution: 32,
            ..tiny()
        },
        data: DataConfig {
            resolution: 32,
            categories: vec![Category::Sticker],
            size_weights: [0.0, 0.0, 1.0],
            ..DataConfig::default()
        },
        stages: Some(
            (0..2)
                .map(|l| StageConfig {
                    steps: 6,
                    batch_size: 2,
                    validation_samples: 4,
                    ..StageConfig::new(l)
                })
                .collect(),
        ),
        seed: 8,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_training(&config, Some(dir.path()), None, &mut ()).unwrap();
    let (after_stage0, _) = graphseg::cascade::load_model(&dir.path().join("stage0.json")).unwrap();
    let level0 = config.model.level_range(0);
    assert_eq!(outcome.model.params()[level0.clone()], after_stage0.params()[level0.clone()]);

    let image = Image::from_fn(32, 32, |y, x| [(y as f32) / 32.0, (x as f32) / 32.0, 0.5]).unwrap();
    let before = outcome.model.predict_soft(&image).unwrap();
    let mut flipped = outcome.model.clone();
    let head_bias = level0.end - 1;
    for v in flipped.params_mut()[head_bias].data_mut() {
        *v -= 2.0;
    }
    let after = flipped.predict_soft(&image).unwrap();
    assert_ne!(before, after);
}
