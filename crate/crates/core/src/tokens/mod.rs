//! Modality-tagged tokens and assembly of the unified sequence.
//!
//! Feature blocks from each modality are projected to the shared token
//! width by two-layer adapters and concatenated in a fixed canonical order
//! (text, rgb, rgbd, bev, pc, voxel), so traces are comparable across runs.

mod adapter;
mod synth;

pub use adapter::{Adapter, AdapterBlockCache, AdapterConfig, LayerNormParams};
pub use synth::{synth_features, SynthGenerator, SynthSample, SynthSpec, SyntheticTask};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numkit::Matrix;
use crate::{Error, Result};

/// The closed set of input modalities, in canonical sequence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityTag {
    Text,
    Rgb,
    Rgbd,
    Bev,
    Pc,
    Voxel,
}

impl ModalityTag {
    /// All modalities in canonical order (the assembly order of the
    /// unified sequence).
    pub const ALL: [ModalityTag; 6] = [
        ModalityTag::Text,
        ModalityTag::Rgb,
        ModalityTag::Rgbd,
        ModalityTag::Bev,
        ModalityTag::Pc,
        ModalityTag::Voxel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityTag::Text => "text",
            ModalityTag::Rgb => "rgb",
            ModalityTag::Rgbd => "rgbd",
            ModalityTag::Bev => "bev",
            ModalityTag::Pc => "pc",
            ModalityTag::Voxel => "voxel",
        }
    }
}

impl fmt::Display for ModalityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown modality {s:?}")))
    }
}

/// Raw per-modality features as produced by an encoder stand-in:
/// `count x raw_dim` rows.
#[derive(Debug, Clone)]
pub struct RawFeatureBlock {
    pub modality: ModalityTag,
    pub features: Matrix,
}

/// One token of the unified sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub modality: ModalityTag,
    pub values: Vec<f64>,
}

/// The unified token sequence: text first, then every modality in
/// canonical order, all at the shared width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnifiedSequence {
    pub tokens: Vec<TokenRow>,
}

impl UnifiedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.tokens.first().map(|t| t.values.len())
    }

    /// Token count per modality.
    pub fn histogram(&self) -> BTreeMap<ModalityTag, usize> {
        let mut h = BTreeMap::new();
        for t in &self.tokens {
            *h.entry(t.modality).or_insert(0) += 1;
        }
        h
    }

    /// Line-delimited JSON: one `{"modality": ..., "values": [...]}` record
    /// per token.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.tokens {
            let line = serde_json::to_string(t)
                .map_err(|e| Error::parse("unified sequence", e.to_string()))?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: TokenRow = serde_json::from_str(line).map_err(|e| {
                Error::parse(format!("unified sequence line {}", i + 1), e.to_string())
            })?;
            tokens.push(t);
        }
        Ok(UnifiedSequence { tokens })
    }
}

/// Serializes raw blocks as line-delimited JSON, one record per block with
/// nested rows.
#[derive(Debug, Serialize, Deserialize)]
struct BlockRecord {
    modality: ModalityTag,
    values: Vec<Vec<f64>>,
}

pub fn blocks_to_jsonl(blocks: &[RawFeatureBlock]) -> Result<String> {
    let mut out = String::new();
    for b in blocks {
        let values: Vec<Vec<f64>> = (0..b.features.rows())
            .map(|r| b.features.row(r).to_vec())
            .collect();
        let rec = BlockRecord {
            modality: b.modality,
            values,
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::parse("feature block", e.to_string()))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn blocks_from_jsonl(
    text: &str,
    raw_dims: &BTreeMap<ModalityTag, usize>,
) -> Result<Vec<RawFeatureBlock>> {
    let mut blocks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: BlockRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("feature block line {}", i + 1), e.to_string()))?;
        let cols = rec
            .values
            .first()
            .map(Vec::len)
            .or_else(|| raw_dims.get(&rec.modality).copied())
            .unwrap_or(0);
        let mut features = Matrix::zeros(rec.values.len(), cols);
        for (r, row) in rec.values.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::parse(
                    format!("feature block line {}", i + 1),
                    "ragged rows".to_string(),
                ));
            }
            features.row_mut(r).copy_from_slice(row);
        }
        blocks.push(RawFeatureBlock {
            modality: rec.modality,
            features,
        });
    }
    Ok(blocks)
}

/// Concatenates the text block and adapter-aligned modality blocks into the
/// unified sequence, in canonical order, preserving per-token tags.
pub fn assemble_unified(
    text: &Matrix,
    aligned: &BTreeMap<ModalityTag, Matrix>,
) -> Result<UnifiedSequence> {
    let width = text.cols();
    let mut tokens = Vec::new();
    for r in 0..text.rows() {
        tokens.push(TokenRow {
            modality: ModalityTag::Text,
            values: text.row(r).to_vec(),
        });
    }
    for tag in ModalityTag::ALL.into_iter().skip(1) {
        if let Some(m) = aligned.get(&tag) {
            if m.rows() > 0 && m.cols() != width {
                return Err(Error::ShapeMismatch {
                    op: "assemble_unified",
                    lhs_rows: text.rows(),
                    lhs_cols: width,
                    rhs_rows: m.rows(),
                    rhs_cols: m.cols(),
                });
            }
            for r in 0..m.rows() {
                tokens.push(TokenRow {
                    modality: tag,
                    values: m.row(r).to_vec(),
                });
            }
        }
    }
    Ok(UnifiedSequence { tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, fill: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        m.fill(fill);
        m
    }

    #[test]
    fn assemble_counts_sum() {
        let text = mat(3, 4, 0.1);
        let mut aligned = BTreeMap::new();
        aligned.insert(ModalityTag::Rgb, mat(4, 4, 0.2));
        aligned.insert(ModalityTag::Rgbd, mat(2, 4, 0.3));
        aligned.insert(ModalityTag::Bev, mat(1, 4, 0.4));
        aligned.insert(ModalityTag::Pc, mat(5, 4, 0.5));
        aligned.insert(ModalityTag::Voxel, mat(2, 4, 0.6));
        let seq = assemble_unified(&text, &aligned).unwrap();
        assert_eq!(seq.len(), 17);
        let h = seq.histogram();
        assert_eq!(h[&ModalityTag::Text], 3);
        assert_eq!(h[&ModalityTag::Rgb], 4);
        assert_eq!(h[&ModalityTag::Pc], 5);
        // Canonical order: text tokens first, voxel last.
        assert_eq!(seq.tokens[0].modality, ModalityTag::Text);
        assert_eq!(seq.tokens[16].modality, ModalityTag::Voxel);
    }

    #[test]
    fn assemble_with_empty_blocks_is_text_only() {
        let text = mat(2, 4, 1.0);
        let mut aligned = BTreeMap::new();
        for tag in ModalityTag::ALL.into_iter().skip(1) {
            aligned.insert(tag, Matrix::zeros(0, 4));
        }
        let seq = assemble_unified(&text, &aligned).unwrap();
        assert_eq!(seq.len(), 2);
        assert!(seq.tokens.iter().all(|t| t.modality == ModalityTag::Text));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let text = mat(1, 4, 0.0);
        let mut aligned = BTreeMap::new();
        aligned.insert(ModalityTag::Rgb, mat(2, 5, 0.0));
        assert!(assemble_unified(&text, &aligned).is_err());
    }

    #[test]
    fn jsonl_roundtrip_is_lossless() {
        let text = mat(2, 3, 0.125);
        let mut aligned = BTreeMap::new();
        aligned.insert(ModalityTag::Pc, mat(1, 3, -7.5e-3));
        let seq = assemble_unified(&text, &aligned).unwrap();
        let jsonl = seq.to_jsonl().unwrap();
        let back = UnifiedSequence::from_jsonl(&jsonl).unwrap();
        assert_eq!(seq, back);
        assert_eq!(jsonl, back.to_jsonl().unwrap());
    }

    #[test]
    fn modality_tags_serialize_lowercase() {
        for tag in ModalityTag::ALL {
            let s = serde_json::to_string(&tag).unwrap();
            assert_eq!(s, format!("\"{}\"", tag.as_str()));
            assert_eq!(tag.as_str().parse::<ModalityTag>().unwrap(), tag);
        }
        assert!("depth".parse::<ModalityTag>().is_err());
    }
}
