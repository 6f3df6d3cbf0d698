//! Joint optimization of the translator on the two healthy domains.
//!
//! Each step runs the autoencoding paths, the style-sampled cross
//! translations, latent re-encoding and the cycle path, then updates the
//! generator once and the discriminators once on the same batch.

mod losses;
mod run;

pub use losses::{adversarial_losses, recon_loss};
pub use run::{
    load_domain_pools, run_training, BatchSampler, DomainPools, MetricsLog, TrainConfig, TrainOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Adam, AdamConfig, Ctx, Group};
use crate::tensor::{Array, Scalar, Tape, Var};
use crate::translator::{sample_style, Checkpoint, Domain, TrainSnapshot, TranslatorModel};

/// Relative weights of the generator objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_img_recon: f64,
    pub w_content_recon: f64,
    pub w_style_recon: f64,
    pub w_cycle: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_img_recon: 10.0,
            w_content_recon: 1.0,
            w_style_recon: 1.0,
            w_cycle: 10.0,
            w_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_img_recon,
            self.w_content_recon,
            self.w_style_recon,
            self.w_cycle,
            self.w_adv,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.w_adv <= 0.0 {
            return Err(Error::Config("w_adv must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted loss terms of one step. Terms whose weight is zero are skipped
/// and reported as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub img_recon: f64,
    pub content_recon: f64,
    pub style_recon: f64,
    pub cycle: f64,
    pub gen_adv: f64,
    pub gen_total: f64,
    pub dis_adv: f64,
}

impl StepMetrics {
    pub const NAMES: [&'static str; 7] = [
        "img_recon",
        "content_recon",
        "style_recon",
        "cycle",
        "gen_adv",
        "gen_total",
        "dis_adv",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.img_recon,
            self.content_recon,
            self.style_recon,
            self.cycle,
            self.gen_adv,
            self.gen_total,
            self.dis_adv,
        ]
    }
}

/// Graph handles of one generator forward pass.
pub struct GeneratorGraph<'t, T: Scalar> {
    pub total: Var<'t, T>,
    /// `x` translated into `Y` with a sampled style.
    pub fake_y: Var<'t, T>,
    /// `y` translated into `X` with a sampled style.
    pub fake_x: Var<'t, T>,
    pub metrics: StepMetrics,
}

fn sum_opt<'t, T: Scalar>(acc: Option<Var<'t, T>>, v: Var<'t, T>) -> Result<Option<Var<'t, T>>> {
    Ok(Some(match acc {
        Some(a) => a.add(v)?,
        None => v,
    }))
}

/// Build the full generator objective for batches `x` (domain X) and `y`
/// (domain Y) with the given prior-sampled styles `(n, style_dim)`.
pub fn generator_objective<'t, T: Scalar>(
    model: &TranslatorModel<T>,
    ctx: &Ctx<'t, '_, T>,
    x: Var<'t, T>,
    y: Var<'t, T>,
    style_x: Var<'t, T>,
    style_y: Var<'t, T>,
    w: &LossWeights,
) -> Result<GeneratorGraph<'t, T>> {
    let content_x = model.forward_content(ctx, x, Domain::X)?;
    let content_y = model.forward_content(ctx, y, Domain::Y)?;
    let own_style_x = model.forward_style(ctx, x, Domain::X)?;
    let own_style_y = model.forward_style(ctx, y, Domain::Y)?;

    let mut metrics = StepMetrics::default();
    let mut total: Option<Var<'t, T>> = None;

    if w.w_img_recon > 0.0 {
        let x_rec = model.forward_decode(ctx, content_x, own_style_x, Domain::X)?;
        let y_rec = model.forward_decode(ctx, content_y, own_style_y, Domain::Y)?;
        let l = x_rec.l1(x)?.add(y_rec.l1(y)?)?.scale(w.w_img_recon);
        metrics.img_recon = l.item().as_f64();
        total = sum_opt(total, l)?;
    }

    let fake_y = model.forward_decode(ctx, content_x, style_y, Domain::Y)?;
    let fake_x = model.forward_decode(ctx, content_y, style_x, Domain::X)?;

    if w.w_content_recon > 0.0 || w.w_style_recon > 0.0 || w.w_cycle > 0.0 {
        let content_x_re = model.forward_content(ctx, fake_y, Domain::Y)?;
        let content_y_re = model.forward_content(ctx, fake_x, Domain::X)?;
        if w.w_content_recon > 0.0 {
            let l = content_x_re
                .l1(content_x)?
                .add(content_y_re.l1(content_y)?)?
                .scale(w.w_content_recon);
            metrics.content_recon = l.item().as_f64();
            total = sum_opt(total, l)?;
        }
        if w.w_style_recon > 0.0 {
            let style_y_re = model.forward_style(ctx, fake_y, Domain::Y)?;
            let style_x_re = model.forward_style(ctx, fake_x, Domain::X)?;
            let l = style_y_re
                .l1(style_y)?
                .add(style_x_re.l1(style_x)?)?
                .scale(w.w_style_recon);
            metrics.style_recon = l.item().as_f64();
            total = sum_opt(total, l)?;
        }
        if w.w_cycle > 0.0 {
            let x_cyc = model.forward_decode(ctx, content_x_re, own_style_x, Domain::X)?;
            let y_cyc = model.forward_decode(ctx, content_y_re, own_style_y, Domain::Y)?;
            let l = x_cyc.l1(x)?.add(y_cyc.l1(y)?)?.scale(w.w_cycle);
            metrics.cycle = l.item().as_f64();
            total = sum_opt(total, l)?;
        }
    }

    let mut adv: Option<Var<'t, T>> = None;
    for (fake, d) in [(fake_y, Domain::Y), (fake_x, Domain::X)] {
        for logits in model.forward_discriminator(ctx, fake, d)? {
            adv = sum_opt(adv, logits.mse_to(1.0))?;
        }
    }
    let adv = adv.expect("at least one discriminator scale").scale(w.w_adv);
    metrics.gen_adv = adv.item().as_f64();
    let total = match total {
        Some(t) => t.add(adv)?,
        None => adv,
    };
    metrics.gen_total = total.item().as_f64();
    Ok(GeneratorGraph {
        total,
        fake_y,
        fake_x,
        metrics,
    })
}

/// `G_x(E_cy(G_y(E_cx(x), s)), E_sx(x))` with `s` drawn from the prior (and
/// the mirror image for a `Y` source). `image` is `(C,H,W)`.
pub fn cycle_images<T: Scalar>(
    model: &TranslatorModel<T>,
    image: &Array<T>,
    source: Domain,
    rng: &mut (impl rand::Rng + ?Sized),
) -> Result<Array<T>> {
    let target = source.other();
    let content = model.encode_content(image, source)?;
    let own_style = model.encode_style(image, source)?;
    let sampled = sample_style(rng, model.config().style_dim);
    let there = model.decode(&content, &sampled, target)?;
    let back_content = model.encode_content(&there, target)?;
    model.decode(&back_content, &own_style, source)
}

fn check_finite(metrics: &StepMetrics) -> Result<()> {
    for (name, v) in StepMetrics::NAMES.iter().zip(metrics.values()) {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {name} became {v} at step {}",
                metrics.step
            )));
        }
    }
    Ok(())
}

/// Model weights plus everything needed to continue optimization.
pub struct Trainer<T: Scalar = f32> {
    pub model: TranslatorModel<T>,
    adam_generator: Adam,
    adam_discriminator: Adam,
    step: u64,
    rng: ChaCha8Rng,
}

/// Output of [`Trainer::generator_update`].
pub struct GeneratorUpdate<T> {
    pub metrics: StepMetrics,
    pub fake_y: Array<T>,
    pub fake_x: Array<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: TranslatorModel<T>, adam: AdamConfig, seed: u64) -> Self {
        let adam_generator = Adam::new(adam, model.params(), Group::Generator);
        let adam_discriminator = Adam::new(adam, model.params(), Group::Discriminator);
        Trainer {
            model,
            adam_generator,
            adam_discriminator,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    fn check_batches(&self, x: &Array<T>, y: &Array<T>) -> Result<()> {
        let (xn, xc, xh, xw) = x.dims4()?;
        let (yn, yc, yh, yw) = y.dims4()?;
        if (xn, xc, xh, xw) != (yn, yc, yh, yw) {
            return Err(shape_err!(
                "domain batches differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            ));
        }
        if xn == 0 {
            return Err(shape_err!("empty batch"));
        }
        Ok(())
    }

    /// One generator update with freshly sampled cross-translation styles.
    /// Discriminator weights are read but not modified.
    pub fn generator_update(&mut self, x: &Array<T>, y: &Array<T>, w: &LossWeights) -> Result<GeneratorUpdate<T>> {
        self.check_batches(x, y)?;
        let n = x.shape()[0];
        let dim = self.model.config().style_dim;
        let mut draw = || {
            let data: Vec<T> = (0..n).flat_map(|_| sample_style::<T>(&mut self.rng, dim).0).collect();
            Array::from_vec(&[n, dim], data)
        };
        let style_x = draw()?;
        let style_y = draw()?;

        let tape = Tape::new();
        let ctx = Ctx {
            tape: &tape,
            store: &self.model.store,
            train_generator: true,
            train_discriminator: false,
        };
        let graph = generator_objective(
            &self.model,
            &ctx,
            tape.constant(x.clone()),
            tape.constant(y.clone()),
            tape.constant(style_x),
            tape.constant(style_y),
            w,
        )?;
        let mut metrics = graph.metrics;
        metrics.step = self.step + 1;
        check_finite(&metrics)?;
        let grads = tape.backward(graph.total)?;
        let (fake_y, fake_x) = (graph.fake_y.value(), graph.fake_x.value());
        self.adam_generator.step(&mut self.model.store, &grads);
        Ok(GeneratorUpdate {
            metrics,
            fake_y,
            fake_x,
        })
    }

    /// One discriminator update on real batches and (detached) translations.
    /// Returns the summed least-squares discriminator loss.
    pub fn discriminator_update(
        &mut self,
        x: &Array<T>,
        y: &Array<T>,
        fake_x: &Array<T>,
        fake_y: &Array<T>,
    ) -> Result<f64> {
        self.check_batches(x, y)?;
        self.check_batches(fake_x, fake_y)?;
        let tape = Tape::new();
        let ctx = Ctx {
            tape: &tape,
            store: &self.model.store,
            train_generator: false,
            train_discriminator: true,
        };
        let mut loss: Option<Var<'_, T>> = None;
        for (real, fake, d) in [(x, fake_x, Domain::X), (y, fake_y, Domain::Y)] {
            let real_out = self.model.forward_discriminator(&ctx, tape.constant(real.clone()), d)?;
            let fake_out = self.model.forward_discriminator(&ctx, tape.constant(fake.clone()), d)?;
            for (r, f) in real_out.into_iter().zip(fake_out) {
                let term = r.mse_to(1.0).scale(0.5).add(f.mse_to(0.0).scale(0.5))?;
                loss = sum_opt(loss, term)?;
            }
        }
        let loss = loss.expect("at least one discriminator scale");
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "discriminator loss became {value} at step {}",
                self.step + 1
            )));
        }
        let grads = tape.backward(loss)?;
        self.adam_discriminator.step(&mut self.model.store, &grads);
        Ok(value)
    }

    /// Generator update followed by a discriminator update on the same batch.
    pub fn train_step(&mut self, x: &Array<T>, y: &Array<T>, w: &LossWeights) -> Result<StepMetrics> {
        let g = self.generator_update(x, y, w)?;
        let d = self.discriminator_update(x, y, &g.fake_x, &g.fake_y)?;
        self.step += 1;
        let mut metrics = g.metrics;
        metrics.dis_adv = d;
        check_finite(&metrics)?;
        Ok(metrics)
    }
}

impl Trainer<f32> {
    pub fn snapshot(&self, settings: serde_json::Value) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: Some(TrainSnapshot {
                step: self.step,
                rng: self.rng.clone(),
                adam_generator: self.adam_generator.state(),
                adam_discriminator: self.adam_discriminator.state(),
                settings,
            }),
        }
    }

    /// Continue from a checkpoint; weights-only checkpoints restart the
    /// optimizer at step 0 with a fresh rng from `seed`.
    pub fn resume(ck: Checkpoint, adam: AdamConfig, seed: u64) -> Result<Self> {
        let mut t = Trainer::new(ck.model, adam, seed);
        if let Some(s) = ck.train {
            t.adam_generator
                .load_state(&s.adam_generator)
                .map_err(Error::Checkpoint)?;
            t.adam_discriminator
                .load_state(&s.adam_discriminator)
                .map_err(Error::Checkpoint)?;
            t.step = s.step;
            t.rng = s.rng;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::tests::tiny_config;
    use rand::Rng;

    fn batch(n: usize, size: usize, seed: u64) -> Array<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(&[n, 3, size, size], |_| rng.random_range(-1.0f32..1.0))
    }

    fn trainer(seed: u64) -> Trainer<f32> {
        let model = TranslatorModel::new(tiny_config(), 11).unwrap();
        Trainer::new(model, AdamConfig::default(), seed)
    }

    #[test]
    fn zero_weights_report_zero_terms() {
        let mut t = trainer(1);
        let w = LossWeights {
            w_img_recon: 0.0,
            w_content_recon: 0.0,
            w_style_recon: 0.0,
            w_cycle: 0.0,
            w_adv: 1.0,
        };
        let m = t.train_step(&batch(2, 16, 1), &batch(2, 16, 2), &w).unwrap();
        assert_eq!((m.img_recon, m.content_recon, m.style_recon, m.cycle), (0.0, 0.0, 0.0, 0.0));
        assert!(m.gen_adv > 0.0);
        assert_eq!(m.gen_total, m.gen_adv);
    }

    #[test]
    fn all_terms_non_negative_and_step_counts() {
        let mut t = trainer(2);
        for i in 0..2 {
            let m = t
                .train_step(&batch(2, 16, 3), &batch(2, 16, 4), &LossWeights::default())
                .unwrap();
            assert_eq!(m.step, i + 1);
            assert!(m.values().iter().all(|&v| v >= 0.0));
        }
        assert_eq!(t.step(), 2);
    }

    #[test]
    fn identical_seeds_give_identical_metrics() {
        let run = || {
            let mut t = trainer(5);
            (0..3)
                .map(|_| {
                    t.train_step(&batch(2, 16, 6), &batch(2, 16, 7), &LossWeights::default())
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn updates_touch_only_their_group() {
        let mut t = trainer(3);
        let (x, y) = (batch(2, 16, 8), batch(2, 16, 9));
        let snapshot = |t: &Trainer<f32>, g: Group| -> Vec<Array<f32>> {
            t.model
                .params()
                .iter()
                .filter(|p| p.group == g)
                .map(|p| p.value.clone())
                .collect()
        };
        let dis_before = snapshot(&t, Group::Discriminator);
        let gen_before = snapshot(&t, Group::Generator);
        let g = t.generator_update(&x, &y, &LossWeights::default()).unwrap();
        assert_eq!(snapshot(&t, Group::Discriminator), dis_before);
        assert_ne!(snapshot(&t, Group::Generator), gen_before);

        let gen_mid = snapshot(&t, Group::Generator);
        t.discriminator_update(&x, &y, &g.fake_x, &g.fake_y).unwrap();
        assert_eq!(snapshot(&t, Group::Generator), gen_mid);
        assert_ne!(snapshot(&t, Group::Discriminator), dis_before);
    }

    #[test]
    fn different_rng_states_change_cross_translations() {
        let (x, y) = (batch(2, 16, 10), batch(2, 16, 11));
        let mut a = trainer(100);
        let mut b = trainer(200);
        let ga = a.generator_update(&x, &y, &LossWeights::default()).unwrap();
        let gb = b.generator_update(&x, &y, &LossWeights::default()).unwrap();
        assert_ne!(ga.fake_y, gb.fake_y);
        assert_ne!(ga.fake_x, gb.fake_x);
    }

    #[test]
    fn mismatched_batches_are_shape_errors() {
        let mut t = trainer(4);
        let err = t
            .train_step(&batch(2, 16, 1), &batch(2, 8, 1), &LossWeights::default())
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn cycle_preserves_shape_and_is_rng_deterministic() {
        let model = TranslatorModel::<f32>::new(tiny_config(), 5).unwrap();
        let img = batch(1, 16, 12).batch_item(0).reshape(&[3, 16, 16]).unwrap();
        let run = |seed| cycle_images(&model, &img, Domain::X, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = run(1);
        assert_eq!(a.shape(), img.shape());
        assert_eq!(a, run(1));
        assert_eq!(cycle_images(&model, &img, Domain::Y, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().shape(), img.shape());
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(LossWeights { w_adv: 0.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { w_cycle: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
