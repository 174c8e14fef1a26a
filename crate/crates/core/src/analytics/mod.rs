//! Routing-trace analytics: expert/modality distributions, per-modality
//! expert preferences, load balance, and top routing pathways.
//!
//! All statistics are pure functions of the trace; identical traces give
//! byte-identical reports.

mod export;

pub use export::{write_report, ExportFormat, Report};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::moe::RoutingTrace;
use crate::tokens::ModalityTag;
use crate::{Error, Result};

/// A normalized 2-D distribution with labeled axes. Rows with an empty
/// denominator are all-zero and flagged in `row_valid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatrix {
    pub layer: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub row_valid: Vec<bool>,
}

fn check_layer(trace: &RoutingTrace, layer: usize) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::Empty("routing trace"));
    }
    if !trace.moe_layers.contains(&layer) {
        return Err(Error::InvalidArgument(format!(
            "unknown MoE layer {layer}; trace has layers {:?}",
            trace.moe_layers
        )));
    }
    Ok(())
}

/// Per expert, the fraction of its top-1 tokens belonging to each
/// modality. Rows (experts) sum to 1 or are all-zero when the expert
/// received no tokens.
pub fn expert_modality_distribution(
    trace: &RoutingTrace,
    layer: usize,
) -> Result<DistributionMatrix> {
    check_layer(trace, layer)?;
    let mut counts = vec![vec![0usize; ModalityTag::ALL.len()]; trace.e];
    for r in trace.records_for_layer(layer) {
        let m = ModalityTag::ALL
            .iter()
            .position(|&t| t == r.modality)
            .unwrap();
        counts[r.top1][m] += 1;
    }
    let mut values = Vec::with_capacity(trace.e);
    let mut row_valid = Vec::with_capacity(trace.e);
    for row in &counts {
        let total: usize = row.iter().sum();
        if total == 0 {
            values.push(vec![0.0; row.len()]);
            row_valid.push(false);
        } else {
            values.push(row.iter().map(|&c| c as f64 / total as f64).collect());
            row_valid.push(true);
        }
    }
    Ok(DistributionMatrix {
        layer,
        row_labels: (0..trace.e).map(|e| format!("expert{e}")).collect(),
        col_labels: ModalityTag::ALL.iter().map(|t| t.to_string()).collect(),
        values,
        row_valid,
    })
}

/// Per modality, the fraction of its tokens whose top-1 expert is each
/// expert (normalized within the modality).
pub fn modality_expert_distribution(
    trace: &RoutingTrace,
    layer: usize,
) -> Result<DistributionMatrix> {
    check_layer(trace, layer)?;
    let mut counts = vec![vec![0usize; trace.e]; ModalityTag::ALL.len()];
    for r in trace.records_for_layer(layer) {
        let m = ModalityTag::ALL
            .iter()
            .position(|&t| t == r.modality)
            .unwrap();
        counts[m][r.top1] += 1;
    }
    let mut values = Vec::with_capacity(counts.len());
    let mut row_valid = Vec::with_capacity(counts.len());
    for row in &counts {
        let total: usize = row.iter().sum();
        if total == 0 {
            values.push(vec![0.0; row.len()]);
            row_valid.push(false);
        } else {
            values.push(row.iter().map(|&c| c as f64 / total as f64).collect());
            row_valid.push(true);
        }
    }
    Ok(DistributionMatrix {
        layer,
        row_labels: ModalityTag::ALL.iter().map(|t| t.to_string()).collect(),
        col_labels: (0..trace.e).map(|e| format!("expert{e}")).collect(),
        values,
        row_valid,
    })
}

/// Fraction of token assignments per expert, counting every top-k
/// selection at weight 1/k so the vector sums to 1 regardless of k.
pub fn load_balance(trace: &RoutingTrace, layer: usize) -> Result<Vec<f64>> {
    check_layer(trace, layer)?;
    let mut load = vec![0.0; trace.e];
    let mut tokens = 0usize;
    for r in trace.records_for_layer(layer) {
        for &e in &r.selected {
            load[e] += 1.0;
        }
        tokens += 1;
    }
    let denom = (tokens * trace.k) as f64;
    for v in load.iter_mut() {
        *v /= denom;
    }
    Ok(load)
}

/// One top-1 expert trajectory across the MoE layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pathway {
    pub modality: ModalityTag,
    pub experts: Vec<usize>,
    pub count: usize,
}

/// Per modality, the `top_n` most frequent top-1 expert sequences across
/// MoE layers, ranked by count (ties by lexicographic sequence order).
/// Returned grouped by modality in canonical order.
pub fn top_pathways(trace: &RoutingTrace, top_n: usize) -> Result<Vec<Pathway>> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be >= 1".into()));
    }
    if trace.records.is_empty() {
        return Err(Error::Empty("routing trace"));
    }
    let mut layers = trace.moe_layers.clone();
    layers.sort_unstable();
    // token -> (modality, layer -> top1)
    let mut per_token: BTreeMap<usize, (ModalityTag, BTreeMap<usize, usize>)> = BTreeMap::new();
    for r in &trace.records {
        let entry = per_token
            .entry(r.token_index)
            .or_insert_with(|| (r.modality, BTreeMap::new()));
        entry.1.insert(r.layer_index, r.top1);
    }
    let mut counts: BTreeMap<(ModalityTag, Vec<usize>), usize> = BTreeMap::new();
    for (token, (modality, tops)) in &per_token {
        let mut seq = Vec::with_capacity(layers.len());
        for layer in &layers {
            let Some(&e) = tops.get(layer) else {
                return Err(Error::InvalidArgument(format!(
                    "token {token} has no record at MoE layer {layer}"
                )));
            };
            seq.push(e);
        }
        *counts.entry((*modality, seq)).or_insert(0) += 1;
    }
    let mut out = Vec::new();
    for tag in ModalityTag::ALL {
        let mut rows: Vec<(&Vec<usize>, usize)> = counts
            .iter()
            .filter(|((m, _), _)| *m == tag)
            .map(|((_, seq), &c)| (seq, c))
            .collect();
        // Count descending, then lexicographic sequence ascending (the
        // BTreeMap iteration already yields sequences in ascending order,
        // and the sort below is stable).
        rows.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        for (seq, count) in rows.into_iter().take(top_n) {
            out.push(Pathway {
                modality: tag,
                experts: seq.clone(),
                count,
            });
        }
    }
    Ok(out)
}
