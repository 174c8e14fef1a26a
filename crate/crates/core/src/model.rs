//! The full desk-scale model: per-modality adapters feeding a residual
//! block stack with a classification head.
//!
//! Text tokens enter the stack unchanged at the shared width; every other
//! modality passes through its adapter. The backward pass is an explicit
//! composition of per-operation VJPs in a fixed order, so gradients are
//! bitwise reproducible and easy to audit against finite differences.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::moe::{init_experts_from_ffn, Block, ModelStack, RoutingTrace};
use crate::numkit::{Matrix, Param};
use crate::objective::{
    balance_loss, cross_entropy, cross_entropy_logit_grad, total_loss, LoadStats, LossReport,
};
use crate::rng::rng_from;
use crate::tokens::{
    assemble_unified, Adapter, AdapterBlockCache, AdapterConfig, ModalityTag, RawFeatureBlock,
    SynthSample, UnifiedSequence,
};
use crate::{Error, Result};

/// Shape of the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Shared token width (the text width all adapters project to).
    pub token_dim: usize,
    /// Hidden width of the two-layer adapters.
    pub adapter_hidden: usize,
    /// Hidden width of dense FFN blocks and experts.
    pub expert_hidden: usize,
    /// Output classes.
    pub vocab: usize,
    /// Residual blocks in the stack.
    pub num_blocks: usize,
    /// Block positions converted to MoE at stage 2.
    pub moe_positions: Vec<usize>,
    /// Experts per MoE layer.
    pub num_experts: usize,
    /// Experts selected per token.
    pub top_k: usize,
}

impl ModelConfig {
    pub fn desk_default() -> Self {
        ModelConfig {
            token_dim: 32,
            adapter_hidden: 64,
            expert_hidden: 48,
            vocab: 4,
            num_blocks: 4,
            moe_positions: vec![1, 3],
            num_experts: 8,
            top_k: 2,
        }
    }

    /// Production-scale reference shape (not a default): 4096-wide tokens,
    /// adapters from 12288 (multi-view rgb), 1024 (rgbd), 1536 (bev) and
    /// 256 (pc), 8 experts with top-2 dispatch, MoE at blocks
    /// 8, 12, 16, 20, 24 and 28 of a 32-block stack.
    pub fn reference_production() -> (Self, BTreeMap<ModalityTag, usize>) {
        let raw_dims = [
            (ModalityTag::Text, 4096),
            (ModalityTag::Rgb, 12288),
            (ModalityTag::Rgbd, 1024),
            (ModalityTag::Bev, 1536),
            (ModalityTag::Pc, 256),
            (ModalityTag::Voxel, 256),
        ]
        .into_iter()
        .collect();
        (
            ModelConfig {
                token_dim: 4096,
                adapter_hidden: 4096,
                expert_hidden: 11008,
                vocab: 32000,
                num_blocks: 32,
                moe_positions: vec![8, 12, 16, 20, 24, 28],
                num_experts: 8,
                top_k: 2,
            },
            raw_dims,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.moe_positions.iter().any(|&p| p >= self.num_blocks) {
            return Err(Error::Config(format!(
                "moe position out of range: {:?} with {} blocks",
                self.moe_positions, self.num_blocks
            )));
        }
        if self.num_experts < 2 {
            return Err(Error::Config("num_experts must be >= 2".into()));
        }
        if self.top_k < 1 || self.top_k > self.num_experts {
            return Err(Error::Config(format!(
                "top_k {} out of range 1..={}",
                self.top_k, self.num_experts
            )));
        }
        Ok(())
    }
}

/// Adapters plus stack. `stage` records whether MoE conversion happened.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub adapters: BTreeMap<ModalityTag, Adapter>,
    pub stack: ModelStack,
    pub stage: u8,
}

/// Modalities whose adapter carries a trailing layernorm.
fn adapter_has_layernorm(tag: ModalityTag) -> bool {
    matches!(
        tag,
        ModalityTag::Rgb | ModalityTag::Bev | ModalityTag::Pc | ModalityTag::Voxel
    )
}

impl Model {
    /// Fresh stage-1 model: all-dense stack, one adapter per non-text
    /// modality with a configured raw dimension.
    pub fn init_stage1(
        seed: u64,
        config: ModelConfig,
        raw_dims: &BTreeMap<ModalityTag, usize>,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(&d) = raw_dims.get(&ModalityTag::Text) {
            if d != config.token_dim {
                return Err(Error::Config(format!(
                    "text raw dim {d} must equal token_dim {} (text bypasses adapters)",
                    config.token_dim
                )));
            }
        }
        let mut adapters = BTreeMap::new();
        for (i, tag) in ModalityTag::ALL.into_iter().enumerate() {
            if tag == ModalityTag::Text {
                continue;
            }
            let Some(&raw) = raw_dims.get(&tag) else {
                continue;
            };
            if raw == 0 {
                continue;
            }
            let mut rng = rng_from(seed, "init/adapter", &[i as u64]);
            adapters.insert(
                tag,
                Adapter::init(
                    tag,
                    &AdapterConfig {
                        input_dim: raw,
                        hidden_dim: config.adapter_hidden,
                        output_dim: config.token_dim,
                        activation: crate::numkit::Activation::Gelu,
                        with_layernorm: adapter_has_layernorm(tag),
                    },
                    &mut rng,
                ),
            );
        }
        let mut rng = rng_from(seed, "init/stack", &[]);
        let stack = ModelStack::init_dense(
            config.token_dim,
            config.expert_hidden,
            config.vocab,
            config.num_blocks,
            &mut rng,
        );
        Ok(Model {
            config,
            adapters,
            stack,
            stage: 1,
        })
    }

    /// Stage-2 conversion: replicate the dense FFN at each configured
    /// position into experts (plus optional jitter), freeze everything but
    /// routers and experts.
    pub fn convert_to_moe(&mut self, jitter: f64, seed: u64) -> Result<()> {
        for &pos in &self.config.moe_positions.clone() {
            let Block::Dense(ffn) = &self.stack.blocks[pos] else {
                return Err(Error::Config(format!(
                    "block {pos} already converted to MoE"
                )));
            };
            let mut rng = rng_from(seed, "stage2/convert", &[pos as u64]);
            let layer = init_experts_from_ffn(
                ffn,
                self.config.num_experts,
                self.config.top_k,
                jitter,
                &mut rng,
            )?;
            self.stack.blocks[pos] = Block::Moe(layer);
        }
        self.stage = 2;
        for (name, p) in self.params_mut() {
            p.trainable = name.contains(".router") || name.contains(".expert.");
        }
        Ok(())
    }

    /// Canonical parameter walk: adapters (modality order), blocks
    /// (ascending; router before experts), head last.
    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (tag, a) in &self.adapters {
            let p = format!("adapter.{tag}");
            out.push((format!("{p}.w1"), &a.w1));
            out.push((format!("{p}.b1"), &a.b1));
            out.push((format!("{p}.w2"), &a.w2));
            out.push((format!("{p}.b2"), &a.b2));
            if let Some(n) = &a.norm {
                out.push((format!("{p}.ln_gain"), &n.gain));
                out.push((format!("{p}.ln_bias"), &n.bias));
            }
        }
        for (i, block) in self.stack.blocks.iter().enumerate() {
            match block {
                Block::Dense(m) => {
                    out.push((format!("stack.{i}.ffn.gate"), &m.gate));
                    out.push((format!("stack.{i}.ffn.up"), &m.up));
                    out.push((format!("stack.{i}.ffn.down"), &m.down));
                }
                Block::Moe(l) => {
                    out.push((format!("stack.{i}.router"), &l.router.weights));
                    for (e, ex) in l.experts.iter().enumerate() {
                        out.push((format!("stack.{i}.expert.{e}.gate"), &ex.gate));
                        out.push((format!("stack.{i}.expert.{e}.up"), &ex.up));
                        out.push((format!("stack.{i}.expert.{e}.down"), &ex.down));
                    }
                }
            }
        }
        out.push(("head".to_string(), &self.stack.head));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = Vec::new();
        for (tag, a) in &mut self.adapters {
            let p = format!("adapter.{tag}");
            out.push((format!("{p}.w1"), &mut a.w1));
            out.push((format!("{p}.b1"), &mut a.b1));
            out.push((format!("{p}.w2"), &mut a.w2));
            out.push((format!("{p}.b2"), &mut a.b2));
            if let Some(n) = &mut a.norm {
                out.push((format!("{p}.ln_gain"), &mut n.gain));
                out.push((format!("{p}.ln_bias"), &mut n.bias));
            }
        }
        for (i, block) in self.stack.blocks.iter_mut().enumerate() {
            match block {
                Block::Dense(m) => {
                    out.push((format!("stack.{i}.ffn.gate"), &mut m.gate));
                    out.push((format!("stack.{i}.ffn.up"), &mut m.up));
                    out.push((format!("stack.{i}.ffn.down"), &mut m.down));
                }
                Block::Moe(l) => {
                    out.push((format!("stack.{i}.router"), &mut l.router.weights));
                    for (e, ex) in l.experts.iter_mut().enumerate() {
                        out.push((format!("stack.{i}.expert.{e}.gate"), &mut ex.gate));
                        out.push((format!("stack.{i}.expert.{e}.up"), &mut ex.up));
                        out.push((format!("stack.{i}.expert.{e}.down"), &mut ex.down));
                    }
                }
            }
        }
        out.push(("head".to_string(), &mut self.stack.head));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Flattens the values of every parameter whose name passes `filter`.
    pub fn flatten_values<F: Fn(&str) -> bool>(&self, filter: F) -> Vec<f64> {
        let mut out = Vec::new();
        for (name, p) in self.params() {
            if filter(&name) {
                out.extend_from_slice(p.value.data());
            }
        }
        out
    }

    pub fn flatten_grads<F: Fn(&str) -> bool>(&self, filter: F) -> Vec<f64> {
        let mut out = Vec::new();
        for (name, p) in self.params() {
            if filter(&name) {
                out.extend_from_slice(p.grad.data());
            }
        }
        out
    }

    /// Writes a flat value vector back into the filtered parameters.
    pub fn load_values<F: Fn(&str) -> bool>(&mut self, filter: F, flat: &[f64]) -> Result<()> {
        let mut cursor = 0;
        for (name, p) in self.params_mut() {
            if filter(&name) {
                let n = p.value.data().len();
                if cursor + n > flat.len() {
                    return Err(Error::InvalidArgument(
                        "flat parameter vector too short".into(),
                    ));
                }
                p.value
                    .data_mut()
                    .copy_from_slice(&flat[cursor..cursor + n]);
                cursor += n;
            }
        }
        if cursor != flat.len() {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has {} entries, expected {cursor}",
                flat.len()
            )));
        }
        Ok(())
    }

    /// Adapter forward over a sample's raw blocks; text passes unchanged.
    fn align_blocks(
        &self,
        blocks: &[RawFeatureBlock],
        with_cache: bool,
    ) -> Result<(UnifiedSequence, Vec<(ModalityTag, AdapterBlockCache)>)> {
        let mut text = Matrix::zeros(0, self.config.token_dim);
        let mut aligned = BTreeMap::new();
        let mut caches = Vec::new();
        for block in blocks {
            if block.modality == ModalityTag::Text {
                if block.features.rows() > 0 && block.features.cols() != self.config.token_dim {
                    return Err(Error::Config(format!(
                        "text features must already be {} wide, got {}",
                        self.config.token_dim,
                        block.features.cols()
                    )));
                }
                text = block.features.clone();
                continue;
            }
            if block.features.rows() == 0 {
                continue;
            }
            let adapter = self.adapters.get(&block.modality).ok_or_else(|| {
                Error::Config(format!(
                    "no adapter configured for modality {}",
                    block.modality
                ))
            })?;
            if with_cache {
                let (m, c) = adapter.adapt_cached(block)?;
                aligned.insert(block.modality, m);
                caches.push((block.modality, c));
            } else {
                aligned.insert(block.modality, adapter.adapt(block)?);
            }
        }
        Ok((assemble_unified(&text, &aligned)?, caches))
    }

    /// Forward a batch without touching gradients. Returns the loss
    /// report, the routing trace (token indices global over the batch),
    /// and the per-layer load statistics.
    pub fn eval_batch(
        &self,
        samples: &[SynthSample],
        lambda: f64,
    ) -> Result<(LossReport, RoutingTrace, Vec<LoadStats>)> {
        let mut logits_all = Vec::new();
        let mut targets_all = Vec::new();
        let (e, k) = self
            .stack
            .moe_shape()
            .unwrap_or((self.config.num_experts, self.config.top_k));
        let mut trace = RoutingTrace::empty(e, k, self.stack.moe_layer_indices());
        let mut token_base = 0;
        for sample in samples {
            let (seq, _) = self.align_blocks(&sample.blocks, false)?;
            if seq.len() != sample.labels.len() {
                return Err(Error::Config(format!(
                    "{} tokens but {} labels",
                    seq.len(),
                    sample.labels.len()
                )));
            }
            for (i, tok) in seq.tokens.iter().enumerate() {
                let (logits, records, _) =
                    self.stack
                        .forward_token(&tok.values, token_base + i, tok.modality)?;
                logits_all.push(logits);
                trace.records.extend(records);
            }
            targets_all.extend_from_slice(&sample.labels);
            token_base += seq.len();
        }
        let ce = cross_entropy(&logits_all, &targets_all)?;
        let mut per_layer = Vec::new();
        let mut stats = Vec::new();
        for &layer in &self.stack.moe_layer_indices() {
            let records: Vec<_> = trace.records_for_layer(layer).collect();
            let (loss, stat) = balance_loss(&records, e)?;
            per_layer.push(loss);
            stats.push(stat);
        }
        let report = total_loss(ce.mean, &per_layer, lambda)?;
        Ok((report, trace, stats))
    }

    /// Forward + backward over a batch, accumulating parameter gradients
    /// for the combined objective (mean cross-entropy plus
    /// `lambda *` mean balance loss).
    pub fn grad_batch(
        &mut self,
        samples: &[SynthSample],
        lambda: f64,
    ) -> Result<(LossReport, RoutingTrace)> {
        // Forward with caches.
        struct TokenWork {
            cache: crate::moe::TokenCache,
            d_logits: Vec<f64>,
        }
        let (e, k) = self
            .stack
            .moe_shape()
            .unwrap_or((self.config.num_experts, self.config.top_k));
        let moe_layers = self.stack.moe_layer_indices();
        let mut trace = RoutingTrace::empty(e, k, moe_layers.clone());
        let mut logits_all = Vec::new();
        let mut targets_all = Vec::new();
        let mut works: Vec<TokenWork> = Vec::new();
        let mut adapter_jobs = Vec::new(); // (modality, cache, token range)
        let mut token_base = 0;
        for sample in samples {
            let (seq, caches) = self.align_blocks(&sample.blocks, true)?;
            if seq.len() != sample.labels.len() {
                return Err(Error::Config(format!(
                    "{} tokens but {} labels",
                    seq.len(),
                    sample.labels.len()
                )));
            }
            // Token ranges per adapted block, in canonical order after text.
            let hist = seq.histogram();
            let mut offset = token_base + hist.get(&ModalityTag::Text).copied().unwrap_or(0);
            for tag in ModalityTag::ALL.into_iter().skip(1) {
                let n = hist.get(&tag).copied().unwrap_or(0);
                if n > 0 {
                    if let Some((_, cache)) = caches.iter().find(|(t, _)| *t == tag) {
                        adapter_jobs.push((tag, cache.clone(), offset..offset + n));
                    }
                }
                offset += n;
            }
            for (i, tok) in seq.tokens.iter().enumerate() {
                let (logits, records, cache) =
                    self.stack
                        .forward_token(&tok.values, token_base + i, tok.modality)?;
                logits_all.push(logits);
                trace.records.extend(records);
                works.push(TokenWork {
                    cache,
                    d_logits: Vec::new(),
                });
            }
            targets_all.extend_from_slice(&sample.labels);
            token_base += seq.len();
        }
        let n_tokens = logits_all.len();
        if n_tokens == 0 {
            return Err(Error::Empty("training batch"));
        }
        let ce = cross_entropy(&logits_all, &targets_all)?;
        let mut per_layer = Vec::new();
        let mut layer_extra: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let num_layers = moe_layers.len();
        for &layer in &moe_layers {
            let records: Vec<_> = trace.records_for_layer(layer).collect();
            let (loss, stat) = balance_loss(&records, e)?;
            per_layer.push(loss);
            // d(total)/d(pi_i[e]) through pi_bar only: lambda * E * p_hat[e]
            // / (N * num_layers). p_hat is piecewise constant.
            let scale = lambda * e as f64 / (records.len() as f64 * num_layers as f64);
            layer_extra.insert(layer, stat.p_hat.iter().map(|&p| p * scale).collect());
        }
        let report = total_loss(ce.mean, &per_layer, lambda)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite("batch loss".to_string()));
        }
        // Seed gradients: mean cross-entropy.
        let ce_scale = 1.0 / n_tokens as f64;
        for (w, (logits, &target)) in works.iter_mut().zip(logits_all.iter().zip(&targets_all)) {
            w.d_logits = cross_entropy_logit_grad(logits, target, ce_scale)?;
        }
        // Backward through the stack, ascending token order.
        let mut d_inputs: Vec<Vec<f64>> = Vec::with_capacity(n_tokens);
        for w in &works {
            let d_input = self.stack.backward_token(&w.cache, &w.d_logits, |layer| {
                layer_extra.get(&layer).cloned()
            });
            d_inputs.push(d_input);
        }
        // Backward through adapters (text tokens are leaves).
        for (tag, cache, range) in adapter_jobs {
            let rows: Vec<Vec<f64>> = d_inputs[range].to_vec();
            let d_out = Matrix::from_rows(&rows)?;
            let adapter = self
                .adapters
                .get_mut(&tag)
                .expect("adapter exists for adapted block");
            adapter.backward(&cache, &d_out)?;
        }
        Ok((report, trace))
    }

    /// Per-token logits over a batch, in assembled token order.
    pub fn logits_batch(&self, samples: &[SynthSample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for sample in samples {
            let (seq, _) = self.align_blocks(&sample.blocks, false)?;
            for (i, tok) in seq.tokens.iter().enumerate() {
                let (logits, _, _) = self.stack.forward_token(&tok.values, i, tok.modality)?;
                out.push(logits);
            }
        }
        Ok(out)
    }

    /// Forward a batch and return just the routing trace (for analytics).
    pub fn trace_batch(&self, samples: &[SynthSample], threads: usize) -> Result<RoutingTrace> {
        let (e, k) = self
            .stack
            .moe_shape()
            .unwrap_or((self.config.num_experts, self.config.top_k));
        let mut trace = RoutingTrace::empty(e, k, self.stack.moe_layer_indices());
        let mut token_base = 0;
        for sample in samples {
            let (seq, _) = self.align_blocks(&sample.blocks, false)?;
            let (_, mut t) = crate::moe::forward_stack_threaded(&self.stack, &seq, threads)?;
            for r in t.records.iter_mut() {
                r.token_index += token_base;
            }
            trace.records.extend(t.records);
            token_base += seq.len();
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::{SynthGenerator, SynthSpec, SyntheticTask};

    fn small_setup() -> (Model, Vec<SynthSample>) {
        let mut spec = SynthSpec::desk_default();
        for d in spec.raw_dims.values_mut() {
            *d = (*d / 4).max(4);
        }
        spec.raw_dims.insert(ModalityTag::Text, 8);
        for c in spec.counts.values_mut() {
            *c = (*c).min(2);
        }
        let cfg = ModelConfig {
            token_dim: 8,
            adapter_hidden: 10,
            expert_hidden: 6,
            vocab: 4,
            num_blocks: 2,
            moe_positions: vec![1],
            num_experts: 4,
            top_k: 2,
        };
        let gen = SynthGenerator::new(21, spec.clone(), SyntheticTask::pc_clusters(4)).unwrap();
        let samples = vec![gen.sample(100), gen.sample(101)];
        let model = Model::init_stage1(21, cfg, &spec.raw_dims).unwrap();
        (model, samples)
    }

    #[test]
    fn stage1_has_dense_blocks_and_all_trainable() {
        let (model, samples) = small_setup();
        assert!(model.stack.moe_layer_indices().is_empty());
        assert!(model.params().iter().all(|(_, p)| p.trainable));
        let (report, trace, _) = model.eval_batch(&samples, 0.01).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(report.l_moe, 0.0);
        assert_eq!(report.total, report.l_ce);
    }

    #[test]
    fn stage2_conversion_freezes_everything_but_router_and_experts() {
        let (mut model, samples) = small_setup();
        model.convert_to_moe(0.0, 99).unwrap();
        assert_eq!(model.stack.moe_layer_indices(), vec![1]);
        for (name, p) in model.params() {
            let should_train = name.contains(".router") || name.contains(".expert.");
            assert_eq!(p.trainable, should_train, "{name}");
        }
        let (report, trace, _) = model.eval_batch(&samples, 0.01).unwrap();
        assert_eq!(trace.records.len(), trace.token_count());
        assert!((report.total - (report.l_ce + 0.01 * report.l_moe)).abs() <= 1e-12);
    }

    #[test]
    fn conversion_with_zero_jitter_and_full_k_preserves_function() {
        let (model, samples) = small_setup();
        let (before, _, _) = model.eval_batch(&samples, 0.0).unwrap();
        let mut converted = model.clone();
        converted.config.top_k = converted.config.num_experts;
        converted.convert_to_moe(0.0, 5).unwrap();
        let (after, _, _) = converted.eval_batch(&samples, 0.0).unwrap();
        assert!(
            (before.l_ce - after.l_ce).abs() <= 1e-12,
            "{} vs {}",
            before.l_ce,
            after.l_ce
        );
    }

    #[test]
    fn adapters_are_shape_correct_for_every_modality() {
        let (model, _) = small_setup();
        for tag in ModalityTag::ALL.into_iter().skip(1) {
            let adapter = &model.adapters[&tag];
            let block = RawFeatureBlock {
                modality: tag,
                features: Matrix::zeros(3, adapter.input_dim()),
            };
            let out = adapter.adapt(&block).unwrap();
            assert_eq!(out.shape(), (3, model.config.token_dim), "{tag}");
        }
        // Text bypasses adapters at the shared width.
        assert!(!model.adapters.contains_key(&ModalityTag::Text));
    }

    #[test]
    fn reference_production_shape_is_consistent() {
        let (cfg, raw_dims) = ModelConfig::reference_production();
        cfg.validate().unwrap();
        assert_eq!(cfg.moe_positions, vec![8, 12, 16, 20, 24, 28]);
        assert_eq!(cfg.num_experts, 8);
        assert_eq!(cfg.top_k, 2);
        assert_eq!(raw_dims[&ModalityTag::Rgb], 12288);
        assert_eq!(raw_dims[&ModalityTag::Text], cfg.token_dim);
    }

    #[test]
    fn flatten_load_roundtrip() {
        let (mut model, _) = small_setup();
        let all = |_: &str| true;
        let flat = model.flatten_values(all);
        let mut perturbed = flat.clone();
        perturbed[0] += 1.0;
        model.load_values(all, &perturbed).unwrap();
        assert_eq!(model.flatten_values(all), perturbed);
        assert!(model.load_values(all, &flat[1..]).is_err());
    }
}
