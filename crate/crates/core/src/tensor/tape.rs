use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom};
use super::{matmul_into, Array, MatRef, Scalar};
use crate::error::{shape_err, Error, Result};

/// Border handling for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    Reflect,
}

enum Op<T> {
    Leaf {
        param: Option<usize>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Scale(usize, T),
    Relu(usize),
    LeakyRelu(usize, T),
    Tanh(usize),
    InstanceNorm {
        x: usize,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    Upsample2x(usize),
    AvgPool2(usize),
    GlobalAvgPool(usize),
    Narrow {
        x: usize,
        start: usize,
    },
    MeanAbsDiff(usize, usize),
    MeanSqDiffConst(usize, T),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass so gradients can be pulled back.
///
/// A tape built with [`Tape::inference`] records nothing needed for the
/// backward pass and refuses to run it.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<(usize, bool), usize>>,
    record: bool,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            record: true,
        }
    }

    pub fn inference() -> Self {
        Tape {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.record,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that is not a parameter; `requires_grad` exposes its gradient
    /// through [`Grads::wrt`].
    pub fn leaf(&self, value: Array<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Leaf for parameter `index`. Repeated requests within one tape share a
    /// node, so every use of a weight accumulates into one gradient.
    pub fn param(&self, index: usize, value: &Array<T>, trainable: bool) -> Var<'_, T> {
        let key = (index, trainable && self.record);
        if let Some(&id) = self.params.borrow().get(&key) {
            return Var { tape: self, id };
        }
        let v = self.push(
            value.clone(),
            Op::Leaf {
                param: key.1.then_some(index),
            },
            key.1,
        );
        self.params.borrow_mut().insert(key, v.id);
        v
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Grads<T>> {
        if !self.record {
            return Err(Error::InvalidInput(
                "backward on an inference tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out = Grads {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };
        if !nodes[loss.id].needs_grad {
            return Ok(out);
        }
        grads[loss.id] = Some(vec![T::one()]);

        fn acc<T: Scalar>(
            grads: &mut [Option<Vec<T>>],
            nodes: &[Node<T>],
            id: usize,
            delta: Vec<T>,
        ) {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(g) => {
                    for (a, b) in g.iter_mut().zip(delta) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf { param } => {
                    match param {
                        Some(p) => out.params.insert(*p, g),
                        None => out.leaves.insert(id, g),
                    };
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    let need_dx = nodes[*x].needs_grad;
                    let cg = ops::conv2d_backward(geom, cols, nodes[*w].value.data(), &g, need_dx);
                    if let Some(dx) = cg.dx {
                        acc(&mut grads, &nodes, *x, dx);
                    }
                    acc(&mut grads, &nodes, *w, cg.dw);
                    if let Some(b) = b {
                        acc(&mut grads, &nodes, *b, cg.db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &nodes[*x].value;
                    let wv = &nodes[*w].value;
                    let (n, i) = (xv.shape()[0], xv.shape()[1]);
                    let o = wv.shape()[0];
                    if nodes[*x].needs_grad {
                        let mut dx = vec![T::zero(); n * i];
                        matmul_into(MatRef::new(&g, n, o), MatRef::new(wv.data(), o, i), T::zero(), &mut dx);
                        acc(&mut grads, &nodes, *x, dx);
                    }
                    if nodes[*w].needs_grad {
                        let mut dw = vec![T::zero(); o * i];
                        matmul_into(
                            MatRef::new(&g, n, o).t(),
                            MatRef::new(xv.data(), n, i),
                            T::zero(),
                            &mut dw,
                        );
                        acc(&mut grads, &nodes, *w, dw);
                    }
                    if let Some(b) = b {
                        let mut db = vec![T::zero(); o];
                        for row in g.chunks(o) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        acc(&mut grads, &nodes, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *b, g.clone());
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Scale(a, s) => {
                    let d = g.iter().map(|&v| v * *s).collect();
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Relu(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                        .collect();
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::LeakyRelu(a, slope) => {
                    let d = g
                        .iter()
                        .zip(nodes[*a].value.data())
                        .map(|(&gv, &x)| if x > T::zero() { gv } else { gv * *slope })
                        .collect();
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &y)| gv * (T::one() - y * y))
                        .collect();
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let plane = node.value.len() / inv_std.len();
                    let d = ops::instance_norm_backward(node.value.data(), inv_std, &g, plane);
                    acc(&mut grads, &nodes, *x, d);
                }
                Op::ChannelAffine { x, gamma, beta } => {
                    let xv = &nodes[*x].value;
                    let gv = nodes[*gamma].value.data();
                    let planes = gv.len();
                    let plane = xv.len() / planes;
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dg = vec![T::zero(); planes];
                    let mut db = vec![T::zero(); planes];
                    for p in 0..planes {
                        let r = p * plane..(p + 1) * plane;
                        for ((d, &gy), &xx) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xv.data()[r])
                        {
                            *d = gy * gv[p];
                            dg[p] += gy * xx;
                            db[p] += gy;
                        }
                    }
                    acc(&mut grads, &nodes, *x, dx);
                    acc(&mut grads, &nodes, *gamma, dg);
                    acc(&mut grads, &nodes, *beta, db);
                }
                Op::Upsample2x(x) => {
                    let (n, c, h, w) = nodes[*x].value.dims4().expect("rank checked in forward");
                    acc(&mut grads, &nodes, *x, ops::upsample2x_backward(&g, n * c, h, w));
                }
                Op::AvgPool2(x) => {
                    let (n, c, h, w) = nodes[*x].value.dims4().expect("rank checked in forward");
                    acc(&mut grads, &nodes, *x, ops::avgpool2_backward(&g, n * c, h, w));
                }
                Op::GlobalAvgPool(x) => {
                    let (n, c, h, w) = nodes[*x].value.dims4().expect("rank checked in forward");
                    let hw = h * w;
                    let inv = T::one() / T::of(hw as f64);
                    let mut dx = vec![T::zero(); n * c * hw];
                    for (p, &gv) in g.iter().enumerate() {
                        dx[p * hw..(p + 1) * hw].fill(gv * inv);
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Narrow { x, start } => {
                    let xs = nodes[*x].value.shape();
                    let (n, d) = (xs[0], xs[1]);
                    let len = node.value.shape()[1];
                    let mut dx = vec![T::zero(); n * d];
                    for r in 0..n {
                        dx[r * d + start..r * d + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::MeanAbsDiff(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let scale = g[0] / T::of(av.len() as f64);
                    let da: Vec<T> = av
                        .iter()
                        .zip(bv)
                        .map(|(&x, &y)| {
                            if x > y {
                                scale
                            } else if x < y {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, da.iter().map(|&v| -v).collect());
                    }
                    acc(&mut grads, &nodes, *a, da);
                }
                Op::MeanSqDiffConst(a, t) => {
                    let av = nodes[*a].value.data();
                    let scale = T::of(2.0) * g[0] / T::of(av.len() as f64);
                    let d = av.iter().map(|&x| (x - *t) * scale).collect();
                    acc(&mut grads, &nodes, *a, d);
                }
            }
        }
        Ok(out)
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    params: HashMap<usize, Vec<T>>,
    leaves: HashMap<usize, Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a trainable parameter leaf, if it was reached.
    pub fn param(&self, index: usize) -> Option<&[T]> {
        self.params.get(&index).map(Vec::as_slice)
    }

    /// Gradient of a non-parameter leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.leaves.get(&v.id).map(Vec::as_slice)
    }

    pub fn param_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.keys().copied()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Array<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    fn needs(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn with<R>(&self, f: impl FnOnce(&Array<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// Copy of this value as a fresh constant on the same tape.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    pub fn conv2d(
        &self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let nodes = tape.nodes.borrow();
        let xv = &nodes[self.id].value;
        let wv = &nodes[w.id].value;
        let wd = match wv.shape() {
            &[o, i, kh, kw] => (o, i, kh, kw),
            s => return Err(shape_err!("conv weight must be rank 4, got {s:?}")),
        };
        let geom = ConvGeom::new(xv.dims4()?, wd, stride, pad, mode)?;
        if let Some(b) = b {
            if nodes[b.id].value.len() != geom.cout {
                return Err(shape_err!("conv bias length mismatch"));
            }
        }
        let needs = nodes[self.id].needs_grad
            || nodes[w.id].needs_grad
            || b.is_some_and(|b| nodes[b.id].needs_grad);
        let keep = needs && tape.record;
        let (out, cols) = ops::conv2d_forward(
            &geom,
            xv.data(),
            wv.data(),
            b.map(|b| nodes[b.id].value.data()),
            keep,
        );
        drop(nodes);
        let value = Array::from_vec(&[geom.n, geom.cout, geom.ho, geom.wo], out)?;
        Ok(tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
                cols: cols.unwrap_or_default(),
            },
            needs,
        ))
    }

    /// `x·wᵀ + b` for `x: (n, in)`, `w: (out, in)`.
    pub fn linear(&self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let nodes = tape.nodes.borrow();
        let xv = &nodes[self.id].value;
        let wv = &nodes[w.id].value;
        let (n, i) = match xv.shape() {
            &[n, i] => (n, i),
            s => return Err(shape_err!("linear input must be (n, features), got {s:?}")),
        };
        let o = match wv.shape() {
            &[o, wi] if wi == i => o,
            s => return Err(shape_err!("linear weight {s:?} does not accept {i} features")),
        };
        let mut out = vec![T::zero(); n * o];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bv = nodes[b.id].value.data();
            if bv.len() != o {
                return Err(shape_err!("linear bias length mismatch"));
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv);
            }
            beta = T::one();
        }
        matmul_into(MatRef::new(xv.data(), n, i), MatRef::new(wv.data(), o, i).t(), beta, &mut out);
        let needs = nodes[self.id].needs_grad
            || nodes[w.id].needs_grad
            || b.is_some_and(|b| nodes[b.id].needs_grad);
        drop(nodes);
        Ok(tape.push(
            Array::from_vec(&[n, o], out)?,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            needs,
        ))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(shape_err!("add: {:?} vs {:?}", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
            Array::from_vec(a.shape(), data)?
        };
        let needs = self.needs() || other.needs();
        Ok(self.tape.push(value, Op::Add(self.id, other.id), needs))
    }

    pub fn scale(&self, s: f64) -> Var<'t, T> {
        let s = T::of(s);
        let value = self.with(|a| a.map(|v| v * s));
        self.tape.push(value, Op::Scale(self.id, s), self.needs())
    }

    pub fn relu(&self) -> Var<'t, T> {
        let value = self.with(|a| a.map(|v| v.max(T::zero())));
        self.tape.push(value, Op::Relu(self.id), self.needs())
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t, T> {
        let slope = T::of(slope);
        let value = self.with(|a| a.map(|v| if v > T::zero() { v } else { v * slope }));
        self.tape.push(value, Op::LeakyRelu(self.id, slope), self.needs())
    }

    pub fn tanh(&self) -> Var<'t, T> {
        let value = self.with(|a| a.map(|v| v.tanh()));
        self.tape.push(value, Op::Tanh(self.id), self.needs())
    }

    /// Normalize each (sample, channel) plane to zero mean, unit variance.
    pub fn instance_norm(&self, eps: f64) -> Result<Var<'t, T>> {
        let (value, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (n, c, h, w) = x.dims4()?;
            let (out, inv) = ops::instance_norm_forward(x.data(), n * c, h * w, T::of(eps));
            (Array::from_vec(x.shape(), out)?, inv)
        };
        let needs = self.needs();
        let inv_std = if needs && self.tape.record {
            inv_std
        } else {
            Vec::new()
        };
        Ok(self.tape.push(
            value,
            Op::InstanceNorm {
                x: self.id,
                inv_std,
            },
            needs,
        ))
    }

    /// `gamma[n,c] * x + beta[n,c]` with `gamma`, `beta` of shape `(n, c)`.
    pub fn channel_affine(&self, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (n, c, h, w) = x.dims4()?;
            let (g, b) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            if g.shape() != [n, c] || b.shape() != [n, c] {
                return Err(shape_err!(
                    "affine params {:?}/{:?} do not match {n}x{c} channels",
                    g.shape(),
                    b.shape()
                ));
            }
            let plane = h * w;
            let mut out = x.data().to_vec();
            for (p, chunk) in out.chunks_mut(plane).enumerate() {
                let (gv, bv) = (g.data()[p], b.data()[p]);
                for v in chunk {
                    *v = gv * *v + bv;
                }
            }
            Array::from_vec(x.shape(), out)?
        };
        let needs = self.needs() || gamma.needs() || beta.needs();
        Ok(self.tape.push(
            value,
            Op::ChannelAffine {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
            },
            needs,
        ))
    }

    pub fn upsample2x(&self) -> Result<Var<'t, T>> {
        let value = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4()?;
            Array::from_vec(&[n, c, 2 * h, 2 * w], ops::upsample2x_forward(x.data(), n * c, h, w))
        })?;
        Ok(self.tape.push(value, Op::Upsample2x(self.id), self.needs()))
    }

    pub fn avgpool2(&self) -> Result<Var<'t, T>> {
        let value = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4()?;
            if h < 2 || w < 2 {
                return Err(shape_err!("avgpool2 on {h}x{w} input"));
            }
            Array::from_vec(&[n, c, h / 2, w / 2], ops::avgpool2_forward(x.data(), n * c, h, w))
        })?;
        Ok(self.tape.push(value, Op::AvgPool2(self.id), self.needs()))
    }

    /// `(n, c, h, w) -> (n, c)`.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let value = self.with(|x| -> Result<_> {
            let (n, c, h, w) = x.dims4()?;
            let hw = T::of((h * w) as f64);
            let data = x
                .data()
                .chunks(h * w)
                .map(|p| p.iter().copied().sum::<T>() / hw)
                .collect();
            Array::from_vec(&[n, c], data)
        })?;
        Ok(self.tape.push(value, Op::GlobalAvgPool(self.id), self.needs()))
    }

    /// Columns `start..start+len` of an `(n, d)` matrix.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let value = self.with(|x| -> Result<_> {
            let (n, d) = match x.shape() {
                &[n, d] => (n, d),
                s => return Err(shape_err!("narrow needs (n, d), got {s:?}")),
            };
            if start + len > d {
                return Err(shape_err!("narrow {start}+{len} exceeds {d}"));
            }
            let mut data = Vec::with_capacity(n * len);
            for r in 0..n {
                data.extend_from_slice(&x.data()[r * d + start..r * d + start + len]);
            }
            Array::from_vec(&[n, len], data)
        })?;
        Ok(self.tape.push(
            value,
            Op::Narrow {
                x: self.id,
                start,
            },
            self.needs(),
        ))
    }

    /// Mean absolute difference, a scalar.
    pub fn l1(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(shape_err!("l1: {:?} vs {:?}", a.shape(), b.shape()));
            }
            let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum();
            s / T::of(a.len() as f64)
        };
        let needs = self.needs() || other.needs();
        Ok(self
            .tape
            .push(Array::scalar(v), Op::MeanAbsDiff(self.id, other.id), needs))
    }

    /// `mean((x - target)^2)`, a scalar.
    pub fn mse_to(&self, target: f64) -> Var<'t, T> {
        let t = T::of(target);
        let v = self.with(|a| {
            let s: T = a.data().iter().map(|&x| (x - t) * (x - t)).sum();
            s / T::of(a.len() as f64)
        });
        self.tape
            .push(Array::scalar(v), Op::MeanSqDiffConst(self.id, t), self.needs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(loss)/d(input) for a closure over a tape.
    fn check_input_grad(
        x0: Array<f64>,
        f: impl for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>,
    ) {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let loss = f(&tape, x);
        let grads = tape.backward(loss).unwrap();
        let g = grads.wrt(x).unwrap().to_vec();
        let eps = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let t = Tape::new();
                let v = t.leaf(xp, true);
                f(&t, v).item()
            };
            let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let err = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-4);
            assert!(err < 1e-5, "elem {i}: analytic {} numeric {}", g[i], num);
        }
    }

    fn sample(shape: &[usize], seed: u64) -> Array<f64> {
        let mut s = seed;
        Array::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn conv_gradients() {
        let w0 = sample(&[3, 2, 3, 3], 7);
        let b0 = sample(&[3], 9);
        for mode in [PadMode::Zero, PadMode::Reflect] {
            check_input_grad(sample(&[2, 2, 5, 6], 1), |t, x| {
                let w = t.leaf(w0.clone(), true);
                let b = t.leaf(b0.clone(), true);
                x.conv2d(w, Some(b), 2, 1, mode).unwrap().mse_to(0.3)
            });
        }
    }

    #[test]
    fn norm_affine_gradients() {
        let g0 = sample(&[2, 3], 3);
        let b0 = sample(&[2, 3], 4);
        check_input_grad(sample(&[2, 3, 4, 4], 2), |t, x| {
            let g = t.leaf(g0.clone(), true);
            let b = t.leaf(b0.clone(), true);
            let y = x.instance_norm(1e-5).unwrap().channel_affine(g, b).unwrap();
            y.tanh().mse_to(0.1)
        });
    }

    #[test]
    fn resampling_and_pool_gradients() {
        check_input_grad(sample(&[1, 2, 4, 6], 5), |_, x| {
            let y = x.upsample2x().unwrap().leaky_relu(0.2).avgpool2().unwrap();
            let z = y.avgpool2().unwrap().global_avg_pool().unwrap();
            z.mse_to(-0.2).add(y.mse_to(0.5)).unwrap()
        });
    }

    #[test]
    fn linear_narrow_l1_gradients() {
        let w0 = sample(&[6, 4], 11);
        let b0 = sample(&[6], 12);
        let target = sample(&[3, 2], 13);
        check_input_grad(sample(&[3, 4], 10), |t, x| {
            let w = t.leaf(w0.clone(), true);
            let b = t.leaf(b0.clone(), true);
            let y = x.linear(w, Some(b)).unwrap().relu();
            let part = y.narrow(2, 2).unwrap().scale(1.5);
            part.l1(t.constant(target.clone())).unwrap()
        });
    }

    #[test]
    fn shared_param_accumulates() {
        let tape = Tape::<f64>::new();
        let w = Array::from_vec(&[1, 1], vec![2.0]).unwrap();
        let x = tape.constant(Array::from_vec(&[1, 1], vec![3.0]).unwrap());
        let p1 = tape.param(0, &w, true);
        let p2 = tape.param(0, &w, true);
        assert_eq!(p1.id(), p2.id());
        let y = x.linear(p1, None).unwrap().linear(p2, None).unwrap();
        // y = 3 w², dy/dw = 6w = 12; loss = mean((y - 0)^2) = y², dloss/dw = 2y·12
        let loss = y.mse_to(0.0);
        let g = tape.backward(loss).unwrap();
        assert!((g.param(0).unwrap()[0] - 2.0 * 12.0 * 12.0).abs() < 1e-9);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let w = Array::from_vec(&[1, 1], vec![2.0]).unwrap();
        let x = tape.leaf(Array::from_vec(&[1, 1], vec![3.0]).unwrap(), true);
        let p = tape.param(5, &w, false);
        let loss = x.linear(p, None).unwrap().mse_to(0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.param(5).is_none());
        assert!((g.wrt(x).unwrap()[0] - 2.0 * 6.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Array::scalar(1.0), true);
        assert!(tape.backward(x.scale(2.0)).is_err());
    }
}
