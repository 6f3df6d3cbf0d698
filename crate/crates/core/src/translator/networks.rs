use rand::Rng;

use super::TranslatorConfig;
use crate::error::{shape_err, Result};
use crate::nn::{Conv2d, Ctx, Group, Linear, ParamStore};
use crate::tensor::{PadMode, Scalar, Var};

const IN_EPS: f64 = 1e-5;

fn same_pad(k: usize) -> usize {
    k / 2
}

/// Plain residual block with instance normalization.
#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        mode: PadMode,
        rng: &mut impl Rng,
    ) -> Self {
        ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), group, dim, dim, 3, 1, 1, mode, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), group, dim, dim, 3, 1, 1, mode, rng),
        }
    }
}

/// Stem, strided downsampling and residual blocks, all instance-normalized.
#[derive(Clone, Debug)]
pub(crate) struct ContentEncoder {
    stem: Conv2d,
    downs: Vec<Conv2d>,
    res: Vec<ResBlock>,
}

impl ContentEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TranslatorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let g = Group::Generator;
        let mode = cfg.pad_mode;
        let mut dim = cfg.base_width;
        let stem = Conv2d::new(store, &format!("{name}.stem"), g, cfg.channels, dim, 7, 1, 3, mode, rng);
        let downs = (0..cfg.n_downsample)
            .map(|i| {
                let c = Conv2d::new(store, &format!("{name}.down{i}"), g, dim, dim * 2, 4, 2, 1, mode, rng);
                dim *= 2;
                c
            })
            .collect();
        let res = (0..cfg.n_res)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), g, dim, mode, rng))
            .collect();
        ContentEncoder { stem, downs, res }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = self.stem.forward(ctx, x)?.instance_norm(IN_EPS)?.relu();
        for d in &self.downs {
            h = d.forward(ctx, h)?.instance_norm(IN_EPS)?.relu();
        }
        for b in &self.res {
            let r = b.conv1.forward(ctx, h)?.instance_norm(IN_EPS)?.relu();
            let r = b.conv2.forward(ctx, r)?.instance_norm(IN_EPS)?;
            h = h.add(r)?;
        }
        Ok(h)
    }
}

/// Unnormalized convolutional encoder ending in global pooling and a linear
/// projection to the style vector.
#[derive(Clone, Debug)]
pub(crate) struct StyleEncoder {
    stem: Conv2d,
    downs: Vec<Conv2d>,
    head: Linear,
}

impl StyleEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TranslatorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let g = Group::Generator;
        let mode = cfg.pad_mode;
        let mut dim = cfg.base_width;
        let stem = Conv2d::new(store, &format!("{name}.stem"), g, cfg.channels, dim, 7, 1, 3, mode, rng);
        let downs = (0..cfg.style_downsample)
            .map(|i| {
                // width doubles for the first two stages only
                let out = if i < 2 { dim * 2 } else { dim };
                let c = Conv2d::new(store, &format!("{name}.down{i}"), g, dim, out, 4, 2, 1, mode, rng);
                dim = out;
                c
            })
            .collect();
        let head = Linear::new(store, &format!("{name}.head"), g, dim, cfg.style_dim, rng);
        StyleEncoder { stem, downs, head }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = self.stem.forward(ctx, x)?.relu();
        for d in &self.downs {
            h = d.forward(ctx, h)?.relu();
        }
        self.head.forward(ctx, h.global_avg_pool()?)
    }
}

/// Maps a style code to every AdaIN scale/shift of one decoder.
#[derive(Clone, Debug)]
pub(crate) struct StyleMlp {
    layers: Vec<Linear>,
}

impl StyleMlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TranslatorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let out = cfg.adain_param_count();
        let n = cfg.mlp_layers.max(1);
        let layers = (0..n)
            .map(|i| {
                let fan_in = if i == 0 { cfg.style_dim } else { cfg.mlp_dim };
                let fan_out = if i + 1 == n { out } else { cfg.mlp_dim };
                Linear::new(store, &format!("{name}.fc{i}"), Group::Generator, fan_in, fan_out, rng)
            })
            .collect();
        StyleMlp { layers }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = s;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(ctx, h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn linear_layers(&self) -> &[Linear] {
        &self.layers
    }
}

/// Per-block `(gamma, beta)` slices of the MLP output, each `(n, channels)`.
pub(crate) fn split_adain<'t, T: Scalar>(
    params: Var<'t, T>,
    blocks: usize,
    channels: usize,
) -> Result<Vec<(Var<'t, T>, Var<'t, T>)>> {
    (0..blocks)
        .map(|b| {
            let base = 2 * b * channels;
            Ok((params.narrow(base, channels)?, params.narrow(base + channels, channels)?))
        })
        .collect()
}

/// AdaIN residual blocks, nearest-neighbour upsampling and a `tanh` output.
#[derive(Clone, Debug)]
pub(crate) struct Decoder {
    res: Vec<ResBlock>,
    ups: Vec<Conv2d>,
    out: Conv2d,
    adain_eps: f64,
}

impl Decoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TranslatorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let g = Group::Generator;
        let mode = cfg.pad_mode;
        let mut dim = cfg.content_channels();
        let res = (0..cfg.n_res)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), g, dim, mode, rng))
            .collect();
        let k = cfg.upsample_kernel;
        let ups = (0..cfg.n_downsample)
            .map(|i| {
                let c = Conv2d::new(store, &format!("{name}.up{i}"), g, dim, dim / 2, k, 1, same_pad(k), mode, rng);
                dim /= 2;
                c
            })
            .collect();
        let out = Conv2d::new(store, &format!("{name}.out"), g, dim, cfg.channels, 7, 1, 3, mode, rng);
        Decoder {
            res,
            ups,
            out,
            adain_eps: cfg.adain_eps,
        }
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        content: Var<'t, T>,
        adain: &[(Var<'t, T>, Var<'t, T>)],
    ) -> Result<Var<'t, T>> {
        if adain.len() != self.res.len() {
            return Err(shape_err!(
                "decoder has {} AdaIN blocks, got {} parameter pairs",
                self.res.len(),
                adain.len()
            ));
        }
        let mut h = content;
        for (b, &(gamma, beta)) in self.res.iter().zip(adain) {
            // both convolutions of a block share its (gamma, beta)
            let r = b.conv1.forward(ctx, h)?;
            let r = r.instance_norm(self.adain_eps)?.channel_affine(gamma, beta)?.relu();
            let r = b.conv2.forward(ctx, r)?;
            let r = r.instance_norm(self.adain_eps)?.channel_affine(gamma, beta)?;
            h = h.add(r)?;
        }
        for u in &self.ups {
            h = u.forward(ctx, h.upsample2x()?)?.relu();
        }
        Ok(self.out.forward(ctx, h)?.tanh())
    }
}

/// Multi-scale least-squares patch discriminator.
#[derive(Clone, Debug)]
pub(crate) struct Discriminator {
    scales: Vec<(Vec<Conv2d>, Conv2d)>,
}

impl Discriminator {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &TranslatorConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let g = Group::Discriminator;
        let scales = (0..cfg.dis_scales)
            .map(|s| {
                let mut dim = cfg.dis_width;
                let mut cin = cfg.channels;
                let mut layers = Vec::with_capacity(cfg.dis_layers);
                for l in 0..cfg.dis_layers {
                    let name = format!("{name}.s{s}.conv{l}");
                    layers.push(Conv2d::new(store, &name, g, cin, dim, 4, 2, 1, cfg.pad_mode, rng));
                    cin = dim;
                    dim *= 2;
                }
                let head = Conv2d::new(store, &format!("{name}.s{s}.head"), g, cin, 1, 1, 1, 0, PadMode::Zero, rng);
                (layers, head)
            })
            .collect();
        Discriminator { scales }
    }

    /// Logit maps, finest scale first.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let mut input = x;
        let mut outs = Vec::with_capacity(self.scales.len());
        for (i, (layers, head)) in self.scales.iter().enumerate() {
            let mut h = input;
            for l in layers {
                h = l.forward(ctx, h)?.leaky_relu(0.2);
            }
            outs.push(head.forward(ctx, h)?);
            if i + 1 < self.scales.len() {
                input = input.avgpool2()?;
            }
        }
        Ok(outs)
    }
}
