//! The auto-decoder: an MLP conditioned on a glyph label and a per-family
//! latent code, trained jointly with the latent table.

mod checkpoint;
mod network;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use network::{conditioning, BatchEval, ForwardCache, LayerSpec, Network, NetworkConfig, ParamGrads, CHUNK};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// ADAM moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected update. Non-finite gradients abort before anything
    /// is touched; `name` maps an index to the tensor it belongs to.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], name: impl Fn(usize) -> String) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "ADAM state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} in {}",
                grads[i],
                name(i)
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One latent code per font family.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub dim: usize,
    pub codes: Vec<f64>,
    /// A frozen table ignores updates.
    pub frozen: bool,
}

impl LatentTable {
    pub fn zeros(families: usize, dim: usize) -> Self {
        LatentTable {
            dim,
            codes: vec![0.0; families * dim],
            frozen: false,
        }
    }

    /// Codes drawn from `N(0, 0.01^2)`.
    pub fn init(families: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).unwrap();
        LatentTable {
            dim,
            codes: (0..families * dim).map(|_| normal.sample(rng)).collect(),
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.codes.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, family: usize) -> &[f64] {
        &self.codes[family * self.dim..(family + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.dim];
        for c in self.codes.chunks_exact(self.dim.max(1)) {
            for (a, b) in m.iter_mut().zip(c) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Apply an ADAM step with the given table-shaped gradient. No-op when frozen.
    pub fn update(&mut self, adam: &mut AdamState, grads: &[f64]) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let dim = self.dim;
        adam.step(&mut self.codes, grads, |i| {
            format!("latent code {} (component {})", i / dim.max(1), i % dim.max(1))
        })
    }
}
