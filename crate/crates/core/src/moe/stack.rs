//! Residual block stack with dense and MoE blocks.
//!
//! Tokens flow independently (`x <- x + block(x)`); there is no attention,
//! which lets the routing mechanism be studied in isolation. A linear head
//! maps the final hidden state to class logits.

use rand::Rng;

use crate::moe::{
    moe_forward, GatedMlp, MlpCache, MoeLayer, MoeTokenCache, RoutingRecord, RoutingTrace,
};
use crate::numkit::{Matrix, Param};
use crate::parallel::ordered_map;
use crate::tokens::{ModalityTag, UnifiedSequence};
use crate::{Error, Result};

/// One residual block.
#[derive(Debug, Clone)]
pub enum Block {
    Dense(GatedMlp),
    Moe(MoeLayer),
}

/// The block stack plus classification head (`dim x vocab`, no bias).
#[derive(Debug, Clone)]
pub struct ModelStack {
    pub blocks: Vec<Block>,
    pub head: Param,
}

/// Per-token intermediates of a stack forward pass.
#[derive(Debug)]
pub struct TokenCache {
    blocks: Vec<BlockCache>,
    final_hidden: Vec<f64>,
}

#[derive(Debug)]
enum BlockCache {
    Dense(MlpCache),
    Moe(MoeTokenCache),
}

impl ModelStack {
    /// All-dense stack (the stage-1 model shape).
    pub fn init_dense<R: Rng>(
        dim: usize,
        expert_hidden: usize,
        vocab: usize,
        num_blocks: usize,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..num_blocks)
            .map(|_| Block::Dense(GatedMlp::init(dim, expert_hidden, rng)))
            .collect();
        // Small head: logits start near zero even for wide-scale inputs.
        ModelStack {
            blocks,
            head: Param::new(Matrix::gaussian(dim, vocab, 0.02, rng), true),
        }
    }

    pub fn dim(&self) -> usize {
        self.head.value.rows()
    }

    pub fn vocab(&self) -> usize {
        self.head.value.cols()
    }

    pub fn moe_layer_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| matches!(b, Block::Moe(_)).then_some(i))
            .collect()
    }

    /// (E, k) of the MoE layers, if any. All layers share one setting.
    pub fn moe_shape(&self) -> Option<(usize, usize)> {
        self.blocks.iter().find_map(|b| match b {
            Block::Moe(l) => Some((l.num_experts(), l.k)),
            Block::Dense(_) => None,
        })
    }

    /// Forward one token, producing logits and routing records.
    pub fn forward_token(
        &self,
        token: &[f64],
        token_index: usize,
        modality: ModalityTag,
    ) -> Result<(Vec<f64>, Vec<RoutingRecord>, TokenCache)> {
        if token.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_token",
                lhs_rows: 1,
                lhs_cols: token.len(),
                rhs_rows: self.dim(),
                rhs_cols: self.vocab(),
            });
        }
        let mut x = token.to_vec();
        let mut records = Vec::new();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (layer_index, block) in self.blocks.iter().enumerate() {
            match block {
                Block::Dense(mlp) => {
                    let (y, c) = mlp.forward_cached(&x)?;
                    for (a, &b) in x.iter_mut().zip(&y) {
                        *a += b;
                    }
                    caches.push(BlockCache::Dense(c));
                }
                Block::Moe(layer) => {
                    let (y, c) = moe_forward(layer, &x)?;
                    records.push(RoutingRecord {
                        token_index,
                        modality,
                        layer_index,
                        probs: c.probs().to_vec(),
                        selected: c.selected().to_vec(),
                        top1: c.selected()[0],
                    });
                    for (a, &b) in x.iter_mut().zip(&y) {
                        *a += b;
                    }
                    caches.push(BlockCache::Moe(c));
                }
            }
        }
        let logits = crate::numkit::vec_mat(&x, &self.head.value, None)?;
        Ok((
            logits,
            records,
            TokenCache {
                blocks: caches,
                final_hidden: x,
            },
        ))
    }

    /// Backward for one token; returns the gradient w.r.t. the token
    /// input (consumed by adapter backward).
    ///
    /// `d_logits` seeds the chain at the head; `d_probs_extra(layer)`
    /// supplies the balance-loss gradient on the routing probabilities of
    /// an MoE layer (or `None` when only cross-entropy flows).
    pub fn backward_token(
        &mut self,
        cache: &TokenCache,
        d_logits: &[f64],
        mut d_probs_extra: impl FnMut(usize) -> Option<Vec<f64>>,
    ) -> Vec<f64> {
        // Head: grad += final_hidden^T (outer) d_logits; dx = d_logits * head^T.
        let dim = self.dim();
        let mut dx = vec![0.0; dim];
        for i in 0..dim {
            let hv = cache.final_hidden[i];
            let grow = self.head.grad.row_mut(i);
            for (g, &d) in grow.iter_mut().zip(d_logits) {
                *g += hv * d;
            }
            let row = self.head.value.row(i);
            let mut acc = 0.0;
            for (w, &d) in row.iter().zip(d_logits) {
                acc += w * d;
            }
            dx[i] = acc;
        }
        for (layer_index, (block, bc)) in
            self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev()
        {
            let d_block = match (block, bc) {
                (Block::Dense(mlp), BlockCache::Dense(c)) => mlp.backward(c, &dx),
                (Block::Moe(layer), BlockCache::Moe(c)) => {
                    let extra = d_probs_extra(layer_index);
                    layer.backward(c, &dx, extra.as_deref())
                }
                _ => unreachable!("cache shape matches block shape"),
            };
            for (a, &b) in dx.iter_mut().zip(&d_block) {
                *a += b; // residual: identity path plus block path
            }
        }
        dx
    }
}

/// Forward an entire unified sequence; logits per token plus the trace.
pub fn forward_stack(
    stack: &ModelStack,
    seq: &UnifiedSequence,
) -> Result<(Vec<Vec<f64>>, RoutingTrace)> {
    forward_stack_threaded(stack, seq, 1)
}

/// Like [`forward_stack`] but evaluating tokens on up to `threads`
/// workers. Token results are merged in ascending token order, so the
/// output is bitwise identical for any thread count.
pub fn forward_stack_threaded(
    stack: &ModelStack,
    seq: &UnifiedSequence,
    threads: usize,
) -> Result<(Vec<Vec<f64>>, RoutingTrace)> {
    let (e, k) = stack.moe_shape().unwrap_or((0, 0));
    let mut trace = RoutingTrace::empty(e, k, stack.moe_layer_indices());
    let items: Vec<(usize, ModalityTag, Vec<f64>)> = seq
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.modality, t.values.clone()))
        .collect();
    let results = ordered_map(&items, threads, |(i, modality, values)| {
        stack
            .forward_token(values, *i, *modality)
            .map(|(logits, records, _)| (logits, records))
    });
    let mut logits = Vec::with_capacity(items.len());
    for r in results {
        let (l, records) = r?;
        logits.push(l);
        trace.records.extend(records);
    }
    Ok((logits, trace))
}
