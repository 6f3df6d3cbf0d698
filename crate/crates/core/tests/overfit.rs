//! One-image overfit: both the example-guided translation and the cycle
//! should reproduce the single training image.

use anodet_core::nn::AdamConfig;
use anodet_core::tensor::Array;
use anodet_core::training::{cycle_images, LossWeights, Trainer};
use anodet_core::translator::{Domain, StyleSource, TranslatorConfig, TranslatorModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mae(a: &Array<f32>, b: &Array<f32>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

#[test]
fn single_image_is_reproduced() {
    let size = 16;
    let x = Array::<f32>::from_fn(&[3, size, size], |i| {
        let (c, p) = (i / (size * size), i % (size * size));
        let (r, q) = ((p / size) as f32, (p % size) as f32);
        (0.6 * ((r * 0.5 + c as f32).sin() * (q * 0.4).cos())).clamp(-1.0, 1.0)
    });
    let cfg = TranslatorConfig {
        base_width: 8,
        n_res: 1,
        style_downsample: 2,
        mlp_dim: 16,
        upsample_kernel: 3,
        dis_width: 4,
        dis_layers: 2,
        dis_scales: 1,
        ..TranslatorConfig::default()
    };
    let adam = AdamConfig {
        lr: 2e-3,
        ..AdamConfig::default()
    };
    let mut trainer = Trainer::new(TranslatorModel::<f32>::new(cfg, 0).unwrap(), adam, 0);
    let batch = x.clone().unsqueeze0();
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut translate_err, mut cycle_err) = (f64::MAX, f64::MAX);
    for step in 1..=3000 {
        trainer.train_step(&batch, &batch, &w).unwrap();
        if step % 100 == 0 {
            let m = &trainer.model;
            translate_err = mae(&x, &m.translate(&x, Domain::X, Domain::Y, StyleSource::FromImage).unwrap());
            cycle_err = mae(&x, &cycle_images(m, &x, Domain::X, &mut rng).unwrap());
            if translate_err < 0.05 && cycle_err < 0.05 {
                break;
            }
        }
    }
    assert!(translate_err < 0.05, "translation MAE {translate_err}");
    assert!(cycle_err < 0.05, "cycle MAE {cycle_err}");
}
