use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

/// Candidate scorer over fixed-length feature vectors.
///
/// Parameters are stored flat. For the MLP the layout is
/// `[W1 (hidden x dim, row major) | b1 (hidden) | w2 (hidden) | b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub architecture: Architecture,
    pub dim: usize,
    pub params: Vec<f64>,
    pub init_seed: u64,
}

impl ScorerModel {
    pub fn n_params(architecture: Architecture, dim: usize) -> usize {
        match architecture {
            Architecture::Linear => dim,
            Architecture::Mlp { hidden } => hidden * dim + 2 * hidden + 1,
        }
    }

    /// All-zero parameters; every candidate scores 0.
    pub fn zeros(architecture: Architecture, dim: usize) -> Self {
        ScorerModel { architecture, dim, params: vec![0.0; Self::n_params(architecture, dim)], init_seed: 0 }
    }

    /// Linear starts at zero; the MLP draws weights from
    /// `U(-1/sqrt(dim), 1/sqrt(dim))` with zero biases.
    pub fn init(architecture: Architecture, dim: usize, init_seed: u64) -> Self {
        let mut model = Self::zeros(architecture, dim);
        model.init_seed = init_seed;
        if let Architecture::Mlp { hidden } = architecture {
            let bound = 1.0 / (dim as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
            let (w1, rest) = model.params.split_at_mut(hidden * dim);
            for w in w1 {
                *w = rng.random_range(-bound..bound);
            }
            for w in &mut rest[hidden..2 * hidden] {
                *w = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn with_params(architecture: Architecture, dim: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::n_params(architecture, dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: params.len() });
        }
        Ok(ScorerModel { architecture, dim, params, init_seed: 0 })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> f64 {
        match self.architecture {
            Architecture::Linear => self.params.iter().zip(x).map(|(w, v)| w * v).sum(),
            Architecture::Mlp { hidden } => {
                let d = self.dim;
                let (w1, rest) = self.params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut out = b2[0];
                for j in 0..hidden {
                    let pre: f64 = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    out += w2[j] * pre.tanh();
                }
                out
            }
        }
    }

    pub fn score<F: AsRef<[f64]>>(&self, features: &[F]) -> Result<Vec<f64>> {
        features
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.check(x.as_ref())?;
                let s = self.forward(x.as_ref());
                if s.is_finite() { Ok(s) } else { Err(Error::NonFiniteScore(i)) }
            })
            .collect()
    }

    /// Adds `upstream * d score(x) / d params` into `grad`.
    pub fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        match self.architecture {
            Architecture::Linear => {
                for (g, v) in grad.iter_mut().zip(x) {
                    *g += upstream * v;
                }
            }
            Architecture::Mlp { hidden } => {
                let d = self.dim;
                let (w1, rest) = self.params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let w2 = &rest[..hidden];
                let (g_w1, g_rest) = grad.split_at_mut(hidden * d);
                let (g_b1, g_rest) = g_rest.split_at_mut(hidden);
                let (g_w2, g_b2) = g_rest.split_at_mut(hidden);
                g_b2[0] += upstream;
                for j in 0..hidden {
                    let pre: f64 = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                    let a = pre.tanh();
                    g_w2[j] += upstream * a;
                    let back = upstream * w2[j] * (1.0 - a * a);
                    g_b1[j] += back;
                    for (g, v) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += back * v;
                    }
                }
            }
        }
    }
}
