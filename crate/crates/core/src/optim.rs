//! Adam and the shared mini-batch trainer.
//!
//! Both the MC-dropout model and the plain baseline train through
//! [`DropoutSgd`]: mean squared error with a fresh dropout mask per example
//! per step, plus an optional per-layer quadratic penalty. The baseline
//! passes zero penalty coefficients and drives the epoch loop itself for
//! early stopping.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{self, Architecture, DesignMatrix, MaskView, Workspace};
use crate::seeding;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with the default moment decay constants.
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    #[inline]
    pub fn updates(&self) -> u64 {
        self.t
    }
}

/// Mini-batch SGD state over one training set.
pub(crate) struct DropoutSgd<'a> {
    arch: &'a Architecture,
    data: &'a DesignMatrix,
    rate: f64,
    scale: f64,
    /// Per-layer penalty coefficients `c_l`; the objective adds
    /// `sum_l c_l ||w_l||^2`.
    decay: Vec<f64>,
    batch_size: usize,
    values: Vec<f64>,
    adam: Adam,
    rng: ChaCha8Rng,
    ws: Workspace,
    grad: Vec<f64>,
    order: Vec<usize>,
    mask: Vec<Vec<bool>>,
    epoch: usize,
}

impl<'a> DropoutSgd<'a> {
    pub fn new(
        arch: &'a Architecture,
        data: &'a DesignMatrix,
        rate: f64,
        decay: Vec<f64>,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if data.dim() != arch.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "training data",
                expected: arch.input_dim(),
                actual: data.dim(),
            });
        }
        if batch_size == 0 || batch_size > data.n() {
            return Err(Error::InvalidConfig(format!(
                "batch_size must lie in [1, {}], got {batch_size}",
                data.n()
            )));
        }
        if decay.len() != arch.num_layers() {
            return Err(Error::LayoutMismatch(format!(
                "{} decay coefficients for a {}-layer network",
                decay.len(),
                arch.num_layers()
            )));
        }
        let mut init_rng = seeding::rng_for(&[seed, seeding::label("sgd-init")]);
        let values = net::ParamVector::init(arch, &mut init_rng).into_values();
        let n_params = values.len();
        Ok(Self {
            arch,
            data,
            rate,
            scale: 1.0 / (1.0 - rate),
            decay,
            batch_size,
            values,
            adam: Adam::new(n_params, learning_rate),
            rng: seeding::rng_for(&[seed, seeding::label("sgd-epochs")]),
            ws: Workspace::new(arch),
            grad: vec![0.0; n_params],
            order: (0..data.n()).collect(),
            mask: arch
                .hidden_layers()
                .iter()
                .map(|&w| vec![true; w])
                .collect(),
            epoch: 0,
        })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn updates(&self) -> u64 {
        self.adam.updates()
    }

    fn draw_mask(&mut self) {
        for layer in &mut self.mask {
            for keep in layer.iter_mut() {
                *keep = self.rng.random::<f64>() >= self.rate;
            }
        }
    }

    fn penalty(&self) -> f64 {
        let layout = self.arch.layout();
        let mut p = 0.0;
        for (lay, &c) in layout.iter().zip(&self.decay) {
            if c == 0.0 {
                continue;
            }
            let sq: f64 = self.values[lay.offset..lay.offset + lay.len()]
                .iter()
                .map(|w| w * w)
                .sum();
            p += c * sq;
        }
        p
    }

    /// One pass over the data: `ceil(N / batch_size)` Adam updates with a
    /// fresh mask per example. Returns the deterministic full-data objective
    /// (unmasked MSE plus penalty) evaluated after the epoch.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        self.order.shuffle(&mut self.rng);
        let n = self.data.n();
        let n_batches = n.div_ceil(self.batch_size);
        for batch in 0..n_batches {
            let lo = batch * self.batch_size;
            let hi = (lo + self.batch_size).min(n);
            let b = (hi - lo) as f64;
            self.grad.fill(0.0);
            let mut batch_sq = 0.0;
            for pos in lo..hi {
                let idx = self.order[pos];
                self.draw_mask();
                let view = MaskView {
                    keep: &self.mask,
                    scale: self.scale,
                };
                let x = self.data.row(idx);
                let y = self.data.targets()[idx];
                let f = net::forward_ws(self.arch, &self.values, x, Some(view), &mut self.ws);
                let r = f - y;
                batch_sq += r * r;
                net::backward_ws(
                    self.arch,
                    &self.values,
                    2.0 * r / b,
                    Some(view),
                    &mut self.ws,
                    &mut self.grad,
                );
            }
            if !batch_sq.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: batch + 1,
                });
            }
            let layout = self.arch.layout();
            for (lay, &c) in layout.iter().zip(&self.decay) {
                if c == 0.0 {
                    continue;
                }
                for (g, &w) in self.grad[lay.offset..lay.offset + lay.len()]
                    .iter_mut()
                    .zip(&self.values[lay.offset..lay.offset + lay.len()])
                {
                    *g += 2.0 * c * w;
                }
            }
            self.adam.step(&mut self.values, &self.grad);
        }

        let mut sq = 0.0;
        for (row, &y) in self.data.rows().iter().zip(self.data.targets()) {
            let f = net::forward_ws(self.arch, &self.values, row, None, &mut self.ws);
            let r = f - y;
            sq += r * r;
        }
        let loss = sq / n as f64 + self.penalty();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: n_batches,
            });
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = (x - 3)^2; gradient 2(x - 3).
        let mut adam = Adam::new(1, 0.05);
        let mut x = vec![0.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "x = {}", x[0]);
        assert_eq!(adam.updates(), 2000);
    }

    #[test]
    fn epoch_runs_ceil_n_over_b_updates() {
        let arch = Architecture::new(1, vec![], Activation::Tanh).unwrap();
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let data = DesignMatrix::new(rows, targets).unwrap();
        let mut sgd = DropoutSgd::new(&arch, &data, 0.0, vec![0.0], 1e-2, 3, 0).unwrap();
        sgd.run_epoch().unwrap();
        assert_eq!(sgd.updates(), 4); // ceil(10 / 3)
    }

    #[test]
    fn batch_size_bounds_checked() {
        let arch = Architecture::new(1, vec![], Activation::Tanh).unwrap();
        let data = DesignMatrix::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        assert!(DropoutSgd::new(&arch, &data, 0.0, vec![0.0], 1e-2, 0, 0).is_err());
        assert!(DropoutSgd::new(&arch, &data, 0.0, vec![0.0], 1e-2, 3, 0).is_err());
    }
}
