//! Content/style disentangled two-domain translator.
//!
//! Each domain `X`, `Y` owns a content encoder, a style encoder, a decoder and
//! a discriminator. Content codes live in one shared spatial space and style
//! codes in one shared vector space with prior `N(0, I)`, so any content can
//! be decoded with any style by either decoder. Style enters a decoder only
//! through the AdaIN scales/shifts produced by a single MLP.

mod checkpoint;
mod networks;

pub use checkpoint::{config_fingerprint, Checkpoint, TrainSnapshot, CHECKPOINT_TAG};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{Ctx, ParamStore};
use crate::tensor::{Array, PadMode, Scalar, Tape, Var};
use networks::{split_adain, ContentEncoder, Decoder, Discriminator, StyleEncoder, StyleMlp};

/// One of the two healthy translation domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::X => 0,
            Domain::Y => 1,
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::X => "X",
            Domain::Y => "Y",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Domain::X),
            "Y" | "y" => Ok(Domain::Y),
            _ => Err(invalid!("unknown domain {s:?}")),
        }
    }
}

/// Architecture hyper-parameters. Defaults give the full-size model:
/// 64-wide stems, two downsampling stages (256 content channels), four
/// residual blocks and an 8-dimensional style code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub channels: usize,
    pub base_width: usize,
    /// Stride-2 stages in the content encoder, mirrored by the decoder.
    pub n_downsample: usize,
    pub n_res: usize,
    pub style_dim: usize,
    pub style_downsample: usize,
    pub mlp_dim: usize,
    pub mlp_layers: usize,
    pub upsample_kernel: usize,
    pub dis_width: usize,
    pub dis_layers: usize,
    pub dis_scales: usize,
    pub pad_mode: PadMode,
    pub adain_eps: f64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            channels: 3,
            base_width: 64,
            n_downsample: 2,
            n_res: 4,
            style_dim: 8,
            style_downsample: 4,
            mlp_dim: 256,
            mlp_layers: 3,
            upsample_kernel: 5,
            dis_width: 64,
            dis_layers: 4,
            dis_scales: 3,
            pad_mode: PadMode::Reflect,
            adain_eps: 1e-5,
        }
    }
}

impl TranslatorConfig {
    pub fn content_channels(&self) -> usize {
        self.base_width << self.n_downsample
    }

    /// Spatial reduction factor `2^k` of the content code.
    pub fn content_stride(&self) -> usize {
        1 << self.n_downsample
    }

    /// Length of the MLP output: one `(gamma, beta)` pair per channel of
    /// every AdaIN residual block.
    pub fn adain_param_count(&self) -> usize {
        2 * self.n_res * self.content_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("base_width", self.base_width),
            ("style_dim", self.style_dim),
            ("mlp_dim", self.mlp_dim),
            ("mlp_layers", self.mlp_layers),
            ("dis_width", self.dis_width),
            ("dis_layers", self.dis_layers),
            ("dis_scales", self.dis_scales),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.upsample_kernel.is_multiple_of(2) {
            return Err(Error::Config("upsample_kernel must be odd".into()));
        }
        if self.adain_eps <= 0.0 || !self.adain_eps.is_finite() {
            return Err(Error::Config("adain_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Spatial content map `(channels_c, H/2^k, W/2^k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCode<T = f32>(pub Array<T>);

/// Style vector of length `style_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode<T = f32>(pub Vec<T>);

impl<T: Scalar> StyleCode<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per residual block `(gamma, beta)`, each of length `channels_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaInParams<T = f32> {
    pub blocks: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdaInParams<T> {
    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|(g, b)| g.len() + b.len()).sum()
    }
}

/// Where the style of a translation comes from.
pub enum StyleSource<'a> {
    /// Draw from the shared prior.
    Sampled(&'a mut dyn rand::RngCore),
    /// Encode the input image with the target domain's style encoder.
    FromImage,
}

/// Draw an i.i.d. standard normal style vector.
pub fn sample_style<T: Scalar>(rng: &mut (impl Rng + ?Sized), style_dim: usize) -> StyleCode<T> {
    StyleCode(
        (0..style_dim)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
}

/// Adaptive instance normalization of `features` (`(C,H,W)` or `(N,C,H,W)`):
/// each channel is normalized over its spatial positions, then scaled by
/// `gamma` and shifted by `beta`. Parameters are per channel and shared by
/// every sample of a batch.
pub fn adain<T: Scalar>(features: &Array<T>, gamma: &[T], beta: &[T], eps: f64) -> Result<Array<T>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(invalid!("adain epsilon must be positive, got {eps}"));
    }
    let batched = match features.ndim() {
        3 => features.clone().unsqueeze0(),
        4 => features.clone(),
        _ => return Err(shape_err!("adain expects (C,H,W) or (N,C,H,W), got {:?}", features.shape())),
    };
    let (n, c, _, _) = batched.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!(
            "adain: {c} channels but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        ));
    }
    let tile = |v: &[T]| Array::from_fn(&[n, c], |i| v[i % c]);
    let tape = Tape::inference();
    let x = tape.constant(batched);
    let y = x
        .instance_norm(eps)?
        .channel_affine(tape.constant(tile(gamma)), tape.constant(tile(beta)))?;
    y.value().reshape(features.shape())
}

fn as_batch<T: Scalar>(image: &Array<T>, channels: usize) -> Result<Array<T>> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(shape_err!("expected a (C,H,W) image, got {s:?}")),
    };
    if c != channels {
        return Err(shape_err!("expected {channels} channels, got {c}"));
    }
    if h == 0 || w == 0 {
        return Err(invalid!("empty image"));
    }
    Ok(image.clone().unsqueeze0())
}

fn unbatch<T: Scalar>(a: Array<T>) -> Result<Array<T>> {
    let shape = a.shape()[1..].to_vec();
    a.reshape(&shape)
}

/// All sub-networks and their weights.
#[derive(Clone)]
pub struct TranslatorModel<T: Scalar = f32> {
    config: TranslatorConfig,
    pub(crate) store: ParamStore<T>,
    content_enc: [ContentEncoder; 2],
    style_enc: [StyleEncoder; 2],
    decoders: [Decoder; 2],
    mlp: StyleMlp,
    discriminators: [Discriminator; 2],
}

impl<T: Scalar> TranslatorModel<T> {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: TranslatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = &config;
        let content_enc = [
            ContentEncoder::new(&mut store, "enc_content_x", cfg, &mut rng),
            ContentEncoder::new(&mut store, "enc_content_y", cfg, &mut rng),
        ];
        let style_enc = [
            StyleEncoder::new(&mut store, "enc_style_x", cfg, &mut rng),
            StyleEncoder::new(&mut store, "enc_style_y", cfg, &mut rng),
        ];
        let decoders = [
            Decoder::new(&mut store, "dec_x", cfg, &mut rng),
            Decoder::new(&mut store, "dec_y", cfg, &mut rng),
        ];
        let mlp = StyleMlp::new(&mut store, "mlp", cfg, &mut rng);
        let discriminators = [
            Discriminator::new(&mut store, "dis_x", cfg, &mut rng),
            Discriminator::new(&mut store, "dis_y", cfg, &mut rng),
        ];
        Ok(TranslatorModel {
            config,
            store,
            content_enc,
            style_enc,
            decoders,
            mlp,
            discriminators,
        })
    }

    pub fn config(&self) -> &TranslatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> TranslatorModel<U> {
        TranslatorModel {
            config: self.config.clone(),
            store: self.store.cast(),
            content_enc: self.content_enc.clone(),
            style_enc: self.style_enc.clone(),
            decoders: self.decoders.clone(),
            mlp: self.mlp.clone(),
            discriminators: self.discriminators.clone(),
        }
    }

    /// Parameter indices of the style MLP, weight then bias per layer.
    pub fn mlp_param_indices(&self) -> Vec<usize> {
        self.mlp
            .linear_layers()
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    // ---- graph-level building blocks (batched, on a tape) ----

    /// Content code of a batch `(N, C, H, W)`.
    pub fn forward_content<'t>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, d: Domain) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let stride = self.config.content_stride();
        if shape.len() != 4 || !shape[2].is_multiple_of(stride) || !shape[3].is_multiple_of(stride) {
            return Err(shape_err!(
                "content encoder needs spatial size divisible by {stride}, got {shape:?}"
            ));
        }
        self.content_enc[d.index()].forward(ctx, x)
    }

    /// Style codes `(N, style_dim)` of a batch.
    pub fn forward_style<'t>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, d: Domain) -> Result<Var<'t, T>> {
        self.style_enc[d.index()].forward(ctx, x)
    }

    /// AdaIN `(gamma, beta)` per residual block for styles `(N, style_dim)`.
    pub fn forward_adain<'t>(&self, ctx: &Ctx<'t, '_, T>, s: Var<'t, T>) -> Result<Vec<(Var<'t, T>, Var<'t, T>)>> {
        match s.shape()[..] {
            [_, d] if d == self.config.style_dim => {}
            ref other => {
                return Err(shape_err!(
                    "style code must be (n, {}), got {:?}",
                    self.config.style_dim,
                    other
                ))
            }
        }
        let raw = self.mlp.forward(ctx, s)?;
        split_adain(raw, self.config.n_res, self.config.content_channels())
    }

    pub fn forward_decode<'t>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        content: Var<'t, T>,
        style: Var<'t, T>,
        d: Domain,
    ) -> Result<Var<'t, T>> {
        let cs = content.shape();
        let ss = style.shape();
        if cs.len() != 4 || cs[1] != self.config.content_channels() {
            return Err(shape_err!(
                "content code must have {} channels, got {cs:?}",
                self.config.content_channels()
            ));
        }
        if ss.len() != 2 || ss[0] != cs[0] {
            return Err(shape_err!("style batch {ss:?} does not match content batch {cs:?}"));
        }
        let adain = self.forward_adain(ctx, style)?;
        self.decoders[d.index()].forward(ctx, content, &adain)
    }

    /// Discriminator logit maps for domain `d`, one per scale.
    pub fn forward_discriminator<'t>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
        d: Domain,
    ) -> Result<Vec<Var<'t, T>>> {
        self.discriminators[d.index()].forward(ctx, x)
    }

    // ---- single-image API ----

    pub fn encode_content(&self, image: &Array<T>, domain: Domain) -> Result<ContentCode<T>> {
        let tape = Tape::inference();
        let ctx = Ctx::inference(&tape, &self.store);
        let x = tape.constant(as_batch(image, self.config.channels)?);
        let c = self.forward_content(&ctx, x, domain)?;
        Ok(ContentCode(unbatch(c.value())?))
    }

    pub fn encode_style(&self, image: &Array<T>, domain: Domain) -> Result<StyleCode<T>> {
        let tape = Tape::inference();
        let ctx = Ctx::inference(&tape, &self.store);
        let x = tape.constant(as_batch(image, self.config.channels)?);
        let s = self.forward_style(&ctx, x, domain)?;
        Ok(StyleCode(s.value().into_vec()))
    }

    pub fn style_to_adain(&self, style: &StyleCode<T>) -> Result<AdaInParams<T>> {
        if style.len() != self.config.style_dim {
            return Err(shape_err!(
                "style code has length {}, model expects {}",
                style.len(),
                self.config.style_dim
            ));
        }
        let tape = Tape::inference();
        let ctx = Ctx::inference(&tape, &self.store);
        let s = tape.constant(Array::from_vec(&[1, style.len()], style.0.clone())?);
        let blocks = self
            .forward_adain(&ctx, s)?
            .into_iter()
            .map(|(g, b)| (g.value().into_vec(), b.value().into_vec()))
            .collect();
        Ok(AdaInParams { blocks })
    }

    pub fn decode(&self, content: &ContentCode<T>, style: &StyleCode<T>, domain: Domain) -> Result<Array<T>> {
        if content.0.ndim() != 3 {
            return Err(shape_err!("content code must be (C,H,W), got {:?}", content.0.shape()));
        }
        if style.len() != self.config.style_dim {
            return Err(shape_err!(
                "style code has length {}, model expects {}",
                style.len(),
                self.config.style_dim
            ));
        }
        let tape = Tape::inference();
        let ctx = Ctx::inference(&tape, &self.store);
        let c = tape.constant(content.0.clone().unsqueeze0());
        let s = tape.constant(Array::from_vec(&[1, style.len()], style.0.clone())?);
        unbatch(self.forward_decode(&ctx, c, s, domain)?.value())
    }

    /// `decode(encode_content(image, source), style, target)`.
    pub fn translate(
        &self,
        image: &Array<T>,
        source: Domain,
        target: Domain,
        style: StyleSource<'_>,
    ) -> Result<Array<T>> {
        let content = self.encode_content(image, source)?;
        let style = match style {
            StyleSource::Sampled(rng) => sample_style(rng, self.config.style_dim),
            StyleSource::FromImage => self.encode_style(image, target)?,
        };
        self.decode(&content, &style, target)
    }
}
