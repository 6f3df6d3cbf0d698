use rand::Rng;

use super::{Group, ParamStore};
use crate::error::Result;
use crate::tensor::{PadMode, Scalar, Tape, Var};

/// What a forward pass can see: the tape, the weights, and which parameter
/// groups should receive gradients.
pub struct Ctx<'t, 'p, T: Scalar> {
    pub tape: &'t Tape<T>,
    pub store: &'p ParamStore<T>,
    pub train_generator: bool,
    pub train_discriminator: bool,
}

impl<'t, 'p, T: Scalar> Ctx<'t, 'p, T> {
    pub fn inference(tape: &'t Tape<T>, store: &'p ParamStore<T>) -> Self {
        Ctx {
            tape,
            store,
            train_generator: false,
            train_discriminator: false,
        }
    }

    pub fn param(&self, index: usize) -> Var<'t, T> {
        let p = self.store.get(index);
        let trainable = match p.group {
            Group::Generator => self.train_generator,
            Group::Discriminator => self.train_discriminator,
        };
        self.tape.param(index, &p.value, trainable)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl Conv2d {
    /// Square `k×k` convolution with Normal(0, 0.02) weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), &[cout, cin, k, k], 0.02, group, rng);
        let bias = store.add(
            format!("{name}.bias"),
            crate::tensor::Array::zeros(&[cout]),
            group,
        );
        Conv2d {
            weight,
            bias,
            stride,
            pad,
            mode,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(
            ctx.param(self.weight),
            Some(ctx.param(self.bias)),
            self.stride,
            self.pad,
            self.mode,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = store.add_normal(format!("{name}.weight"), &[fan_out, fan_in], std, group, rng);
        let bias = store.add(
            format!("{name}.bias"),
            crate::tensor::Array::zeros(&[fan_out]),
            group,
        );
        Linear { weight, bias }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(ctx.param(self.weight), Some(ctx.param(self.bias)))
    }
}
