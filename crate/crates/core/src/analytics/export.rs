//! Report serialization: JSON (lossless round-trip, stable field order)
//! and CSV (comma separator, dot decimal, LF line endings, one row per
//! cell for matrices).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analytics::{DistributionMatrix, Pathway};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Csv,
}

/// A named analytics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum Report {
    ExpertModality(DistributionMatrix),
    ModalityExpert(DistributionMatrix),
    LoadBalance {
        layer: usize,
        fractions: Vec<f64>,
    },
    Pathways {
        top_n: usize,
        pathways: Vec<Pathway>,
    },
}

impl Report {
    pub fn name(&self) -> &'static str {
        match self {
            Report::ExpertModality(_) => "expert_modality",
            Report::ModalityExpert(_) => "modality_expert",
            Report::LoadBalance { .. } => "load_balance",
            Report::Pathways { .. } => "pathways",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse("report", e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("report", e.to_string()))
    }

    /// CSV body. Matrices use the long form `row,col,value` (one line per
    /// cell); load balance uses `expert,fraction`; pathways use
    /// `modality,pathway,count` with `-`-joined expert ids.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            Report::ExpertModality(m) | Report::ModalityExpert(m) => {
                out.push_str("row,col,value\n");
                for (i, row_label) in m.row_labels.iter().enumerate() {
                    for (j, col_label) in m.col_labels.iter().enumerate() {
                        out.push_str(&format!("{row_label},{col_label},{}\n", m.values[i][j]));
                    }
                }
            }
            Report::LoadBalance { fractions, .. } => {
                out.push_str("expert,fraction\n");
                for (e, v) in fractions.iter().enumerate() {
                    out.push_str(&format!("expert{e},{v}\n"));
                }
            }
            Report::Pathways { pathways, .. } => {
                out.push_str("modality,pathway,count\n");
                for p in pathways {
                    let path = p
                        .experts
                        .iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join("-");
                    out.push_str(&format!("{},{path},{}\n", p.modality, p.count));
                }
            }
        }
        out
    }
}

/// Writes a report to `path` in the requested format.
pub fn write_report(report: &Report, format: ExportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ExportFormat::Json => report.to_json()?,
        ExportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}
