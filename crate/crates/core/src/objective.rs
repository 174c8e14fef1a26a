//! Training objectives: autoregressive cross-entropy, the sparsity-aware
//! expert balancing loss, and their weighted sum.
//!
//! The balance loss for one layer over N tokens is
//! `E * sum_e p_hat[e] * pi_bar[e]`, where `p_hat[e]` is the fraction of
//! tokens whose argmax routing probability is expert e (ascending-index
//! tie-break) and `pi_bar[e]` is the mean routing probability to e.
//! `p_hat` is piecewise constant, so gradients flow through `pi_bar` only.

use serde::{Deserialize, Serialize};

use crate::moe::RoutingRecord;
use crate::numkit::logsumexp;
use crate::{Error, Result};

/// Cross-entropy in both the summed and per-token-mean form. The optimizer
/// consumes the mean (step sizes independent of sequence length); the sum
/// is the literal per-position objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub sum: f64,
    pub mean: f64,
    pub tokens: usize,
}

/// `-sum_t log softmax(logits_t)[target_t]`, numerically stable.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<CrossEntropy> {
    if logits.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} logit rows but {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Empty("cross_entropy input"));
    }
    let mut sum = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::InvalidArgument(format!(
                "target class {t} out of range for vocab {}",
                row.len()
            )));
        }
        sum += logsumexp(row)? - row[t];
    }
    Ok(CrossEntropy {
        sum,
        mean: sum / logits.len() as f64,
        tokens: logits.len(),
    })
}

/// Gradient of the summed cross-entropy w.r.t. one logit row:
/// `softmax(logits) - onehot(target)`, scaled by `scale`.
pub fn cross_entropy_logit_grad(logits: &[f64], target: usize, scale: f64) -> Result<Vec<f64>> {
    let mut g = crate::numkit::softmax(logits)?;
    for (i, v) in g.iter_mut().enumerate() {
        let onehot = if i == target { 1.0 } else { 0.0 };
        *v = scale * (*v - onehot);
    }
    Ok(g)
}

/// Per-layer expert load statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub layer_index: usize,
    /// Fraction of tokens whose top-1 expert is e.
    pub p_hat: Vec<f64>,
    /// Mean routing probability to e.
    pub pi_bar: Vec<f64>,
}

/// Balance loss of one layer's records.
///
/// Records are reduced in ascending token-index order, so the result is
/// bitwise invariant to the order records arrive in.
pub fn balance_loss(records: &[&RoutingRecord], num_experts: usize) -> Result<(f64, LoadStats)> {
    if records.is_empty() {
        return Err(Error::Empty("balance_loss records"));
    }
    let mut ordered: Vec<&RoutingRecord> = records.to_vec();
    ordered.sort_by_key(|r| r.token_index);
    let layer_index = ordered[0].layer_index;
    let n = ordered.len() as f64;
    let mut p_hat = vec![0.0; num_experts];
    let mut pi_bar = vec![0.0; num_experts];
    for r in &ordered {
        if r.probs.len() != num_experts {
            return Err(Error::InvalidArgument(format!(
                "record has {} probabilities, expected {num_experts}",
                r.probs.len()
            )));
        }
        // Argmax with ascending-index tie-break, recomputed from the
        // probabilities so the statistic is self-contained.
        let mut arg = 0;
        for (e, &p) in r.probs.iter().enumerate() {
            if p > r.probs[arg] {
                arg = e;
            }
        }
        p_hat[arg] += 1.0;
        for (acc, &p) in pi_bar.iter_mut().zip(&r.probs) {
            *acc += p;
        }
    }
    for v in p_hat.iter_mut() {
        *v /= n;
    }
    for v in pi_bar.iter_mut() {
        *v /= n;
    }
    let loss = num_experts as f64 * p_hat.iter().zip(&pi_bar).map(|(&a, &b)| a * b).sum::<f64>();
    Ok((
        loss,
        LoadStats {
            layer_index,
            p_hat,
            pi_bar,
        },
    ))
}

/// The combined training objective for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_ce: f64,
    pub l_moe: f64,
    pub total: f64,
    pub lambda: f64,
    pub per_layer_moe: Vec<f64>,
}

/// `total = l_ce + lambda * mean(per_layer_moe)`.
///
/// Averaging over MoE layers keeps the meaning of lambda independent of
/// how many layers carry experts. With no MoE layers the balance term
/// is zero.
pub fn total_loss(l_ce: f64, per_layer_moe: &[f64], lambda: f64) -> Result<LossReport> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let l_moe = if per_layer_moe.is_empty() {
        0.0
    } else {
        per_layer_moe.iter().sum::<f64>() / per_layer_moe.len() as f64
    };
    Ok(LossReport {
        l_ce,
        l_moe,
        total: l_ce + lambda * l_moe,
        lambda,
        per_layer_moe: per_layer_moe.to_vec(),
    })
}
