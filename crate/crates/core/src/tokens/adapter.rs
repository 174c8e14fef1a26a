//! Two-layer projection heads aligning raw modality features to the
//! shared token width.
//!
//! Structure per row: `x -> x*w1 + b1 -> act -> *w2 + b2 -> [layernorm]`.
//! The trailing layernorm is present for rgb, bev, pc and voxel adapters
//! and absent for rgbd.

use rand::Rng;

use crate::numkit::{
    layernorm_cached, layernorm_vjp, vec_mat, Activation, LayerNormCache, Matrix, Param,
};
use crate::tokens::{ModalityTag, RawFeatureBlock};
use crate::{Error, Result};

/// Trailing layernorm parameters (per-feature gain and bias).
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: Param,
    pub bias: Param,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn unit(width: usize) -> Self {
        let mut gain = Matrix::zeros(1, width);
        gain.fill(1.0);
        LayerNormParams {
            gain: Param::new(gain, true),
            bias: Param::new(Matrix::zeros(1, width), true),
            eps: 1e-5,
        }
    }
}

/// Shape and wiring of one adapter.
#[derive(Debug, Clone, Copy)]
pub struct AdapterConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub with_layernorm: bool,
}

/// A two-layer MLP projection head for one modality.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub modality: ModalityTag,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub norm: Option<LayerNormParams>,
    pub activation: Activation,
}

/// Per-row intermediates of an adapter forward over a block.
#[derive(Debug, Clone)]
pub struct AdapterBlockCache {
    inputs: Vec<Vec<f64>>,
    pre1: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    ln: Vec<Option<LayerNormCache>>,
}

impl Adapter {
    /// Gaussian init at 1/sqrt(fan_in); biases zero; layernorm at identity.
    pub fn init<R: Rng>(modality: ModalityTag, cfg: &AdapterConfig, rng: &mut R) -> Self {
        let s1 = 1.0 / (cfg.input_dim as f64).sqrt();
        let s2 = 1.0 / (cfg.hidden_dim as f64).sqrt();
        Adapter {
            modality,
            w1: Param::new(
                Matrix::gaussian(cfg.input_dim, cfg.hidden_dim, s1, rng),
                true,
            ),
            b1: Param::new(Matrix::zeros(1, cfg.hidden_dim), true),
            w2: Param::new(
                Matrix::gaussian(cfg.hidden_dim, cfg.output_dim, s2, rng),
                true,
            ),
            b2: Param::new(Matrix::zeros(1, cfg.output_dim), true),
            norm: cfg
                .with_layernorm
                .then(|| LayerNormParams::unit(cfg.output_dim)),
            activation: cfg.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.value.cols()
    }

    /// Projects a raw block to `count x output_dim`.
    pub fn adapt(&self, block: &RawFeatureBlock) -> Result<Matrix> {
        Ok(self.adapt_cached(block)?.0)
    }

    /// Forward pass keeping the intermediates needed by [`Adapter::backward`].
    pub fn adapt_cached(&self, block: &RawFeatureBlock) -> Result<(Matrix, AdapterBlockCache)> {
        if block.features.cols() != self.input_dim() && block.features.rows() > 0 {
            return Err(Error::Config(format!(
                "adapter for modality {} expects input dim {}, block has {}",
                self.modality,
                self.input_dim(),
                block.features.cols()
            )));
        }
        let n = block.features.rows();
        let mut out = Matrix::zeros(n, self.output_dim());
        let mut cache = AdapterBlockCache {
            inputs: Vec::with_capacity(n),
            pre1: Vec::with_capacity(n),
            hidden: Vec::with_capacity(n),
            ln: Vec::with_capacity(n),
        };
        for r in 0..n {
            let x = block.features.row(r);
            let pre1 = vec_mat(x, &self.w1.value, Some(&self.b1.value))?;
            let hidden: Vec<f64> = pre1.iter().map(|&v| self.activation.apply(v)).collect();
            let pre2 = vec_mat(&hidden, &self.w2.value, Some(&self.b2.value))?;
            let (y, ln) = match &self.norm {
                Some(p) => {
                    let (y, c) =
                        layernorm_cached(&pre2, p.gain.value.data(), p.bias.value.data(), p.eps)?;
                    (y, Some(c))
                }
                None => (pre2, None),
            };
            out.row_mut(r).copy_from_slice(&y);
            cache.inputs.push(x.to_vec());
            cache.pre1.push(pre1);
            cache.hidden.push(hidden);
            cache.ln.push(ln);
        }
        Ok((out, cache))
    }

    /// Accumulates parameter gradients for upstream `d_out` (one row per
    /// block row). Raw features are leaves, so no input gradient is
    /// returned.
    pub fn backward(&mut self, cache: &AdapterBlockCache, d_out: &Matrix) -> Result<()> {
        for r in 0..d_out.rows() {
            let dy = d_out.row(r).to_vec();
            let d_pre2 = match (&mut self.norm, &cache.ln[r]) {
                (Some(p), Some(ln)) => layernorm_vjp(
                    ln,
                    p.gain.value.data(),
                    &dy,
                    p.gain.grad.data_mut(),
                    p.bias.grad.data_mut(),
                ),
                _ => dy,
            };
            let hidden = &cache.hidden[r];
            // dw2 += hidden^T (outer) d_pre2 ; db2 += d_pre2
            for (h, &hv) in hidden.iter().enumerate() {
                let grow = self.w2.grad.row_mut(h);
                for (g, &d) in grow.iter_mut().zip(&d_pre2) {
                    *g += hv * d;
                }
            }
            for (g, &d) in self.b2.grad.data_mut().iter_mut().zip(&d_pre2) {
                *g += d;
            }
            // d_hidden = d_pre2 * w2^T, then through the activation.
            let mut d_pre1 = vec![0.0; hidden.len()];
            for (h, dp) in d_pre1.iter_mut().enumerate() {
                let row = self.w2.value.row(h);
                let mut acc = 0.0;
                for (w, &d) in row.iter().zip(&d_pre2) {
                    acc += w * d;
                }
                *dp = acc * self.activation.derivative(cache.pre1[r][h]);
            }
            let x = &cache.inputs[r];
            for (i, &xv) in x.iter().enumerate() {
                let grow = self.w1.grad.row_mut(i);
                for (g, &d) in grow.iter_mut().zip(&d_pre1) {
                    *g += xv * d;
                }
            }
            for (g, &d) in self.b1.grad.data_mut().iter_mut().zip(&d_pre1) {
                *g += d;
            }
        }
        Ok(())
    }
}
