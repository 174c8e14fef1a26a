//! Differentiable scalar and vector operations used by the model graph,
//! with their analytic vector-Jacobian products.

use crate::{Error, Result};

/// Numerically stable softmax (max-subtraction); entries are strictly
/// positive and sum to 1.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".to_string()));
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

/// VJP of softmax: given `y = softmax(s)` and upstream `dy`, returns `ds`.
pub fn softmax_vjp(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - dot)).collect()
}

/// log(sum(exp(v))) with max-subtraction.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("logsumexp input"));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activation kinds used by adapters and experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu(x),
            Activation::Gelu => gelu(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu_prime(x),
            Activation::Gelu => gelu_prime(x),
        }
    }
}

/// silu(x) = x * sigmoid(x)
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// gelu(x) via the tanh approximation:
/// 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Cached intermediates of a layernorm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

/// y_i = gain_i * (x_i - mean) / sqrt(var + eps) + bias_i, population variance.
pub fn layernorm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    Ok(layernorm_cached(x, gain, bias, eps)?.0)
}

pub fn layernorm_cached(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, LayerNormCache)> {
    if x.is_empty() {
        return Err(Error::Empty("layernorm input"));
    }
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::InvalidArgument(format!(
            "layernorm length mismatch: x={}, gain={}, bias={}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("layernorm eps must be > 0".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let out = normalized
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&h, (&g, &b))| g * h + b)
        .collect();
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// VJP of layernorm. Returns `dx` and accumulates `dgain`/`dbias`.
pub fn layernorm_vjp(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = cache.normalized.len();
    let nf = n as f64;
    // dh_i = gain_i * dy_i, where h is the normalized vector.
    let dh: Vec<f64> = gain.iter().zip(dy).map(|(&g, &d)| g * d).collect();
    let mean_dh = dh.iter().sum::<f64>() / nf;
    let mean_dh_h = dh
        .iter()
        .zip(&cache.normalized)
        .map(|(&a, &b)| a * b)
        .sum::<f64>()
        / nf;
    for i in 0..n {
        dgain[i] += dy[i] * cache.normalized[i];
        dbias[i] += dy[i];
    }
    cache
        .normalized
        .iter()
        .zip(&dh)
        .map(|(&h, &d)| (d - mean_dh - h * mean_dh_h) * cache.inv_std)
        .collect()
}
