use serde::{Deserialize, Serialize};

use super::{Group, ParamStore};
use crate::tensor::{Grads, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the learning rate by `lr_gamma` every `lr_step_size` steps.
    pub lr_step_size: u64,
    pub lr_gamma: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            lr_step_size: 100_000,
            lr_gamma: 0.5,
        }
    }
}

/// Moment buffers, in the order of [`ParamStore::indices_in`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub steps: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adaptive moment estimation over one parameter group.
pub struct Adam {
    pub config: AdamConfig,
    group: Group,
    indices: Vec<usize>,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, store: &ParamStore<T>, group: Group) -> Self {
        let indices = store.indices_in(group);
        let zeros: Vec<Vec<f64>> = indices
            .iter()
            .map(|&i| vec![0.0; store.get(i).value.len()])
            .collect();
        Adam {
            config,
            group,
            indices,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn current_lr(&self) -> f64 {
        let decays = self.steps / self.config.lr_step_size.max(1);
        self.config.lr * self.config.lr_gamma.powi(decays as i32)
    }

    /// Apply one update to every parameter of this group that has a gradient.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (slot, &idx) in self.indices.iter().enumerate() {
            let Some(g) = grads.param(idx) else {
                continue;
            };
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let value = store.value_mut(idx).data_mut();
            for (((w, &gi), mi), vi) in value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let update = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.config.eps);
                *w = T::of(w.as_f64() - update);
            }
        }
    }

    pub fn state(&self) -> AdamState {
        AdamState {
            steps: self.steps,
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }

    pub fn load_state(&mut self, state: &AdamState) -> Result<(), String> {
        let shapes_ok = |b: &Vec<Vec<f64>>| {
            b.len() == self.m.len() && b.iter().zip(&self.m).all(|(a, e)| a.len() == e.len())
        };
        if !shapes_ok(&state.m) || !shapes_ok(&state.v) {
            return Err("optimizer state does not match the parameter layout".into());
        }
        self.steps = state.steps;
        self.m = state.m.clone();
        self.v = state.v.clone();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Array, Tape};

    #[test]
    fn minimizes_a_quadratic_and_respects_groups() {
        let mut store = ParamStore::<f64>::new();
        let g = store.add("g", Array::from_vec(&[2], vec![3.0, -2.0]).unwrap(), Group::Generator);
        let d = store.add("d", Array::from_vec(&[1], vec![5.0]).unwrap(), Group::Discriminator);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &store, Group::Generator);
        for _ in 0..500 {
            let tape = Tape::new();
            let a = tape.param(g, &store.get(g).value, true);
            let b = tape.param(d, &store.get(d).value, true);
            let loss = a.mse_to(0.5).add(b.mse_to(0.0)).unwrap();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut store, &grads);
        }
        for &v in store.get(g).value.data() {
            assert!((v - 0.5).abs() < 1e-2, "{v}");
        }
        assert_eq!(store.get(d).value.data(), &[5.0]);
    }

    #[test]
    fn learning_rate_decays_stepwise() {
        let store = ParamStore::<f32>::new();
        let cfg = AdamConfig {
            lr_step_size: 10,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &store, Group::Generator);
        assert_eq!(opt.current_lr(), 1e-4);
        opt.steps = 10;
        assert!((opt.current_lr() - 5e-5).abs() < 1e-12);
        opt.steps = 25;
        assert!((opt.current_lr() - 2.5e-5).abs() < 1e-12);
    }
}
