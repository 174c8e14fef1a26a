//! Sparse mixture-of-experts layer.
//!
//! A linear soft router scores each token against every expert
//! (`score_e = w_e . x`), the scores are softmaxed into routing
//! probabilities, and the token is dispatched to its top-k experts. The
//! layer output is the probability-weighted sum of the selected expert
//! outputs; the probabilities are NOT renormalized over the selection
//! (several MoE systems renormalize — this one deliberately does not).
//!
//! Selection is treated as non-differentiable: gradients flow through the
//! routing probabilities and the selected experts only, and unselected
//! experts receive exactly zero gradient from a token.

mod stack;

pub use stack::{forward_stack, forward_stack_threaded, Block, ModelStack, TokenCache};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numkit::{softmax, softmax_vjp, vec_mat, Matrix, Param};
use crate::tokens::ModalityTag;
use crate::{Error, Result};

/// Linear soft router; row `e` holds the routing parameter for expert `e`.
#[derive(Debug, Clone)]
pub struct Router {
    pub weights: Param,
}

impl Router {
    pub fn init<R: Rng>(num_experts: usize, dim: usize, rng: &mut R) -> Self {
        // Routing parameters start near zero (scale 0.02) so initial
        // routing is close to uniform.
        Router {
            weights: Param::new(Matrix::gaussian(num_experts, dim, 0.02, rng), true),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.weights.value.rows()
    }
}

/// Gated MLP used both as the dense FFN and as an expert:
/// `y = (silu(x*gate) ⊙ (x*up)) * down`, no biases.
#[derive(Debug, Clone)]
pub struct GatedMlp {
    pub gate: Param,
    pub up: Param,
    pub down: Param,
}

/// An expert module inside an MoE layer.
pub type Expert = GatedMlp;
/// The dense feed-forward block replicated into experts at stage 2.
pub type DenseFfn = GatedMlp;

/// Intermediates of one gated-MLP forward.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    gate_pre: Vec<f64>,
    up_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl GatedMlp {
    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let s_in = 1.0 / (dim as f64).sqrt();
        // Small down-projection: residual branches start near identity,
        // keeping the stream scale stable through depth.
        let s_out = 0.2 / (hidden as f64).sqrt();
        GatedMlp {
            gate: Param::new(Matrix::gaussian(dim, hidden, s_in, rng), true),
            up: Param::new(Matrix::gaussian(dim, hidden, s_in, rng), true),
            down: Param::new(Matrix::gaussian(hidden, dim, s_out, rng), true),
        }
    }

    pub fn dim(&self) -> usize {
        self.gate.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gate.value.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let gate_pre = vec_mat(x, &self.gate.value, None)?;
        let up_pre = vec_mat(x, &self.up.value, None)?;
        let hidden: Vec<f64> = gate_pre
            .iter()
            .zip(&up_pre)
            .map(|(&g, &u)| crate::numkit::silu(g) * u)
            .collect();
        let y = vec_mat(&hidden, &self.down.value, None)?;
        Ok((
            y,
            MlpCache {
                input: x.to_vec(),
                gate_pre,
                up_pre,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `d_out` and returns the
    /// gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &MlpCache, d_out: &[f64]) -> Vec<f64> {
        let hdim = self.hidden_dim();
        // d_hidden = d_out * down^T ; ddown += hidden^T d_out
        let mut d_hidden = vec![0.0; hdim];
        for h in 0..hdim {
            let row = self.down.value.row(h);
            let mut acc = 0.0;
            for (w, &d) in row.iter().zip(d_out) {
                acc += w * d;
            }
            d_hidden[h] = acc;
            let grow = self.down.grad.row_mut(h);
            let hv = cache.hidden[h];
            for (g, &d) in grow.iter_mut().zip(d_out) {
                *g += hv * d;
            }
        }
        // hidden = silu(g) ⊙ u
        let mut d_gate_pre = vec![0.0; hdim];
        let mut d_up_pre = vec![0.0; hdim];
        for h in 0..hdim {
            let g = cache.gate_pre[h];
            d_up_pre[h] = d_hidden[h] * crate::numkit::silu(g);
            d_gate_pre[h] = d_hidden[h] * cache.up_pre[h] * crate::numkit::silu_prime(g);
        }
        let dim = self.dim();
        let mut dx = vec![0.0; dim];
        for (i, &xv) in cache.input.iter().enumerate() {
            let g_gate = self.gate.grad.row_mut(i);
            for (g, &d) in g_gate.iter_mut().zip(&d_gate_pre) {
                *g += xv * d;
            }
            let g_up = self.up.grad.row_mut(i);
            for (g, &d) in g_up.iter_mut().zip(&d_up_pre) {
                *g += xv * d;
            }
            let mut acc = 0.0;
            let row_gate = self.gate.value.row(i);
            let row_up = self.up.value.row(i);
            for h in 0..hdim {
                acc += row_gate[h] * d_gate_pre[h] + row_up[h] * d_up_pre[h];
            }
            dx[i] = acc;
        }
        dx
    }
}

/// One MoE layer: router, E experts, and the dispatch width k.
#[derive(Debug, Clone)]
pub struct MoeLayer {
    pub router: Router,
    pub experts: Vec<Expert>,
    pub k: usize,
}

impl MoeLayer {
    pub fn new(router: Router, experts: Vec<Expert>, k: usize) -> Result<Self> {
        let e = experts.len();
        if e < 2 {
            return Err(Error::Config(format!(
                "MoE layer needs >= 2 experts, got {e}"
            )));
        }
        if router.num_experts() != e {
            return Err(Error::Config(format!(
                "router has {} rows but layer has {e} experts",
                router.num_experts()
            )));
        }
        if k < 1 || k > e {
            return Err(Error::InvalidArgument(format!(
                "k={k} out of range 1..={e}"
            )));
        }
        Ok(MoeLayer { router, experts, k })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }
}

/// Router scores and probabilities for one token.
pub fn route(router: &Router, token: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = &router.weights.value;
    if token.len() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "route",
            lhs_rows: 1,
            lhs_cols: token.len(),
            rhs_rows: w.rows(),
            rhs_cols: w.cols(),
        });
    }
    let scores: Vec<f64> = (0..w.rows())
        .map(|e| w.row(e).iter().zip(token).map(|(a, b)| a * b).sum())
        .collect();
    let probs = softmax(&scores)?;
    Ok((scores, probs))
}

/// Indices of the k largest probabilities, sorted by descending
/// probability then ascending index (ties go to the lower expert index).
pub fn select_topk(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > probs.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} out of range 1..={}",
            probs.len()
        )));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// `expert_forward` is the gated-MLP forward of one expert.
pub fn expert_forward(expert: &Expert, token: &[f64]) -> Result<Vec<f64>> {
    expert.forward(token)
}

/// Per-token routing outcome at one MoE layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub token_index: usize,
    pub modality: ModalityTag,
    pub layer_index: usize,
    pub probs: Vec<f64>,
    pub selected: Vec<usize>,
    pub top1: usize,
}

/// All routing records of a forward pass, ordered by
/// (token_index, layer_index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTrace {
    pub e: usize,
    pub k: usize,
    pub moe_layers: Vec<usize>,
    pub records: Vec<RoutingRecord>,
}

impl RoutingTrace {
    pub fn empty(e: usize, k: usize, moe_layers: Vec<usize>) -> Self {
        RoutingTrace {
            e,
            k,
            moe_layers,
            records: Vec::new(),
        }
    }

    pub fn records_for_layer(&self, layer: usize) -> impl Iterator<Item = &RoutingRecord> {
        self.records.iter().filter(move |r| r.layer_index == layer)
    }

    /// Number of distinct tokens in the trace.
    pub fn token_count(&self) -> usize {
        let mut seen: Vec<usize> = self.records.iter().map(|r| r.token_index).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Structural checks for externally supplied traces: every record's
    /// probabilities, selection, and layer index must be consistent with
    /// the header.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.probs.len() != self.e {
                return Err(Error::InvalidArgument(format!(
                    "trace record {i}: {} probabilities, header says e={}",
                    r.probs.len(),
                    self.e
                )));
            }
            if r.selected.is_empty() || r.selected.len() > self.k.max(1) {
                return Err(Error::InvalidArgument(format!(
                    "trace record {i}: {} selected experts, header says k={}",
                    r.selected.len(),
                    self.k
                )));
            }
            if r.top1 >= self.e || r.selected.iter().any(|&s| s >= self.e) {
                return Err(Error::InvalidArgument(format!(
                    "trace record {i}: expert id out of range for e={}",
                    self.e
                )));
            }
            if !self.moe_layers.contains(&r.layer_index) {
                return Err(Error::InvalidArgument(format!(
                    "trace record {i}: layer {} not in {:?}",
                    r.layer_index, self.moe_layers
                )));
            }
        }
        Ok(())
    }
}

/// Intermediates of one MoE-layer forward for one token.
#[derive(Debug, Clone)]
pub struct MoeTokenCache {
    input: Vec<f64>,
    probs: Vec<f64>,
    selected: Vec<usize>,
    expert_caches: Vec<MlpCache>,
    expert_outputs: Vec<Vec<f64>>,
}

impl MoeTokenCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }
}

/// Forward through an MoE layer: weighted sum of the top-k expert outputs.
pub fn moe_forward(layer: &MoeLayer, token: &[f64]) -> Result<(Vec<f64>, MoeTokenCache)> {
    let (_, probs) = route(&layer.router, token)?;
    let selected = select_topk(&probs, layer.k)?;
    let mut out = vec![0.0; token.len()];
    let mut expert_caches = Vec::with_capacity(selected.len());
    let mut expert_outputs = Vec::with_capacity(selected.len());
    for &e in &selected {
        let (y, cache) = layer.experts[e].forward_cached(token)?;
        for (o, &v) in out.iter_mut().zip(&y) {
            *o += probs[e] * v;
        }
        expert_caches.push(cache);
        expert_outputs.push(y);
    }
    Ok((
        out,
        MoeTokenCache {
            input: token.to_vec(),
            probs,
            selected,
            expert_caches,
            expert_outputs,
        },
    ))
}

impl MoeLayer {
    /// Backward for one token.
    ///
    /// `d_out` is the upstream gradient on the layer output;
    /// `d_probs_extra` is an optional direct gradient on the routing
    /// probabilities (the balance loss contributes one). Gradients are
    /// accumulated into router and selected-expert parameters; unselected
    /// experts are untouched.
    pub fn backward(
        &mut self,
        cache: &MoeTokenCache,
        d_out: &[f64],
        d_probs_extra: Option<&[f64]>,
    ) -> Vec<f64> {
        let e_total = self.num_experts();
        let mut d_probs = match d_probs_extra {
            Some(g) => g.to_vec(),
            None => vec![0.0; e_total],
        };
        let mut dx = vec![0.0; cache.input.len()];
        for (slot, &e) in cache.selected.iter().enumerate() {
            // CE path through the mixture weight.
            d_probs[e] += d_out
                .iter()
                .zip(&cache.expert_outputs[slot])
                .map(|(a, b)| a * b)
                .sum::<f64>();
            // Scaled path through the expert itself.
            let scaled: Vec<f64> = d_out.iter().map(|&d| cache.probs[e] * d).collect();
            let dxe = self.experts[e].backward(&cache.expert_caches[slot], &scaled);
            for (a, b) in dx.iter_mut().zip(&dxe) {
                *a += b;
            }
        }
        let d_scores = softmax_vjp(&cache.probs, &d_probs);
        for e in 0..e_total {
            let gr = self.router.weights.grad.row_mut(e);
            for (g, &xv) in gr.iter_mut().zip(&cache.input) {
                *g += d_scores[e] * xv;
            }
            let wr = self.router.weights.value.row(e);
            for (a, &wv) in dx.iter_mut().zip(wr) {
                *a += d_scores[e] * wv;
            }
        }
        dx
    }
}

/// Builds an MoE layer by replicating a dense FFN into `num_experts`
/// experts (optionally Gaussian-jittered) and drawing a fresh router.
pub fn init_experts_from_ffn<R: Rng>(
    ffn: &DenseFfn,
    num_experts: usize,
    k: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<MoeLayer> {
    if jitter < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "jitter must be >= 0, got {jitter}"
        )));
    }
    let router = Router::init(num_experts, ffn.dim(), rng);
    let mut experts = Vec::with_capacity(num_experts);
    for _ in 0..num_experts {
        let mut ex = ffn.clone();
        ex.gate.grad.fill(0.0);
        ex.up.grad.fill(0.0);
        ex.down.grad.fill(0.0);
        if jitter > 0.0 {
            for m in [&mut ex.gate.value, &mut ex.up.value, &mut ex.down.value] {
                for v in m.data_mut() {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    *v += jitter * z;
                }
            }
        }
        ex.gate.trainable = true;
        ex.up.trainable = true;
        ex.down.trainable = true;
        experts.push(ex);
    }
    MoeLayer::new(router, experts, k)
}
