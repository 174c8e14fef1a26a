//! Checkpoints: one JSON document holding the run config, stage metadata,
//! the master seed, and every parameter with shape and trainable flag.
//!
//! Parameter names are the model's canonical walk and stay stable across
//! versions. Serialization uses sorted maps and struct field order, so
//! save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::numkit::Matrix;
use crate::rng::fnv1a64;
use crate::trainer::RunConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: [usize; 2],
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: u8,
    pub step: u64,
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub params: BTreeMap<String, ParamRecord>,
}

/// Digest of the canonical config JSON (fnv1a-64, hex).
pub fn config_digest(config: &RunConfig) -> Result<String> {
    let json =
        serde_json::to_string(config).map_err(|e| Error::parse("run config", e.to_string()))?;
    Ok(format!("{:016x}", fnv1a64(json.as_bytes())))
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig, step: u64) -> Result<Self> {
        let mut params = BTreeMap::new();
        for (name, p) in model.params() {
            params.insert(
                name,
                ParamRecord {
                    shape: [p.value.rows(), p.value.cols()],
                    trainable: p.trainable,
                    values: p.value.data().to_vec(),
                },
            );
        }
        Ok(Checkpoint {
            stage: model.stage,
            step,
            seed: config.seed,
            config_digest: config_digest(config)?,
            config: config.clone(),
            params,
        })
    }

    /// Rebuilds the model: structure from the stored config, values and
    /// trainable flags from the records.
    pub fn restore(&self) -> Result<Model> {
        let mut model = Model::init_stage1(
            self.seed,
            self.config.model.clone(),
            &self.config.data.synth.raw_dims,
        )?;
        if self.stage == 2 {
            model.convert_to_moe(0.0, self.seed)?;
        }
        for (name, p) in model.params_mut() {
            let rec = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint missing parameter {name}")))?;
            if rec.shape != [p.value.rows(), p.value.cols()] {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name} has shape {:?}, model expects {}x{}",
                    rec.shape,
                    p.value.rows(),
                    p.value.cols()
                )));
            }
            p.value = Matrix::from_vec(rec.shape[0], rec.shape[1], rec.values.clone())?;
            p.grad = Matrix::zeros(rec.shape[0], rec.shape[1]);
            p.trainable = rec.trainable;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse("checkpoint", e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Digest of the serialized checkpoint bytes.
    pub fn digest(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv1a64(self.to_json()?.as_bytes())))
    }
}
