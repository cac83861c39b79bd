//! Pairwise RankNet loss over control-score ordered pairs.

use serde::{Deserialize, Serialize};

use crate::control::ControlScoreVector;
use crate::error::{Error, Result};

/// Ordered pairs `(i, j)` with `r_i > r_j`, 0-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn build_pairs(r: &ControlScoreVector) -> PairSet {
    build_pairs_from(&r.scores)
}

pub fn build_pairs_from(r: &[u32]) -> PairSet {
    let mut pairs = Vec::new();
    for (i, ri) in r.iter().enumerate() {
        for (j, rj) in r.iter().enumerate() {
            if ri > rj {
                pairs.push((i, j));
            }
        }
    }
    PairSet { pairs }
}

/// `-ln sigmoid(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankNetOutput {
    pub loss: f64,
    /// Gradient with respect to each candidate score.
    pub grad: Vec<f64>,
    /// True when the pair set was empty and the instance contributes nothing.
    pub skipped: bool,
}

/// Mean over pairs of `-ln sigmoid(s_i - s_j)` and its exact gradient.
/// An empty pair set yields zero loss and gradient and is flagged skipped.
pub fn ranknet_loss_and_grad(scores: &[f64], pairs: &PairSet) -> Result<RankNetOutput> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let mut grad = vec![0.0; scores.len()];
    if pairs.is_empty() {
        return Ok(RankNetOutput { loss: 0.0, grad, skipped: true });
    }
    let norm = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for &(i, j) in &pairs.pairs {
        if i >= scores.len() || j >= scores.len() {
            return Err(Error::IndexOutOfBounds { index: i.max(j), len: scores.len() });
        }
        let diff = scores[i] - scores[j];
        loss += neg_log_sigmoid(diff);
        let push = 1.0 - sigmoid(diff);
        grad[i] -= push;
        grad[j] += push;
    }
    for g in &mut grad {
        *g *= norm;
    }
    Ok(RankNetOutput { loss: loss * norm, grad, skipped: false })
}
