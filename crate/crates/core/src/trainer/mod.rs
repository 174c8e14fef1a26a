//! Two-stage training.
//!
//! Stage 1 trains adapters, dense FFNs and the head with cross-entropy
//! only (no MoE yet, avoiding the instability of sparsifying an untrained
//! model). Stage 2 replicates each configured dense FFN into experts,
//! freezes everything except routers and experts, and optimizes the
//! combined objective with the balance term.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::{adam_step, AdamHyper, AdamState, Optimizer};
pub use checkpoint::{config_digest, Checkpoint, ParamRecord};
pub use schedule::{lr_at, LrSchedule};

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig};
use crate::moe::RoutingTrace;
use crate::rng::derive_seed;
use crate::tokens::{SynthGenerator, SynthSample, SynthSpec, SyntheticTask};
use crate::{Error, Result};

/// Per-stage optimization plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagePlan {
    pub epochs: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    /// Balance coefficient; only consumed in stage 2.
    pub lambda: f64,
    /// Gaussian jitter applied to replicated experts; only stage 2.
    pub jitter: f64,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            epochs: 1,
            // Desk-scale default; the production-scale reference setting
            // is a constant 2e-5.
            lr: 1e-2,
            schedule: LrSchedule::WarmupCosine,
            warmup_ratio: 0.03,
            weight_decay: 0.0,
            lambda: 0.01,
            jitter: 0.0,
        }
    }
}

/// Synthetic data stream configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub synth: SynthSpec,
    pub task: SyntheticTask,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
}

/// The full run configuration (maps 1:1 to the train config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub stage1: StagePlan,
    pub stage2: StagePlan,
}

impl RunConfig {
    /// Desk default: 2 stage-1 epochs, 1 stage-2 epoch, 8 experts with
    /// top-2 dispatch, lambda 0.01.
    pub fn desk_default() -> Self {
        RunConfig {
            seed: 42,
            model: ModelConfig::desk_default(),
            data: DataConfig {
                synth: SynthSpec::desk_default(),
                task: SyntheticTask::pc_clusters(4),
                batches_per_epoch: 30,
                batch_size: 2,
            },
            stage1: StagePlan {
                epochs: 2,
                ..StagePlan::default()
            },
            stage2: StagePlan {
                epochs: 1,
                ..StagePlan::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.data.batch_size == 0 || self.data.batches_per_epoch == 0 {
            return Err(Error::Config(
                "batch_size and batches_per_epoch must be >= 1".into(),
            ));
        }
        if self.data.task.num_classes > self.model.vocab {
            return Err(Error::Config(format!(
                "task has {} classes but model vocab is {}",
                self.data.task.num_classes, self.model.vocab
            )));
        }
        for plan in [&self.stage1, &self.stage2] {
            if !(0.0..1.0).contains(&plan.warmup_ratio) {
                return Err(Error::Config(format!(
                    "warmup_ratio must be in [0, 1), got {}",
                    plan.warmup_ratio
                )));
            }
            if plan.lr <= 0.0 && plan.epochs > 0 {
                return Err(Error::Config("lr must be > 0".into()));
            }
            if plan.lambda < 0.0 {
                return Err(Error::Config("lambda must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn generator(&self) -> Result<SynthGenerator> {
        SynthGenerator::new(
            derive_seed(self.seed, "task", &[]),
            self.data.synth.clone(),
            self.data.task.clone(),
        )
    }
}

/// One JSONL training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub stage: u8,
    pub l_ce: f64,
    pub l_moe: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn log_to_jsonl(records: &[LogRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::parse("train log", e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Output of one training stage.
#[derive(Debug)]
pub struct StageOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
}

fn draw_batch(gen: &SynthGenerator, config: &RunConfig, stage: u8, step: u64) -> Vec<SynthSample> {
    (0..config.data.batch_size)
        .map(|s| {
            gen.sample(derive_seed(
                config.seed,
                "data",
                &[u64::from(stage), step, s as u64],
            ))
        })
        .collect()
}

fn run_stage(
    model: &mut Model,
    config: &RunConfig,
    stage: u8,
    plan: &StagePlan,
    lambda: f64,
) -> Result<StageOutput> {
    let gen = config.generator()?;
    let total_steps = (plan.epochs * config.data.batches_per_epoch) as u64;
    let mut optimizer = Optimizer::new(AdamHyper {
        weight_decay: plan.weight_decay,
        ..AdamHyper::default()
    });
    let mut log = Vec::with_capacity(total_steps as usize);
    for step in 0..total_steps {
        let batch = draw_batch(&gen, config, stage, step);
        model.zero_grads();
        let (report, _) = model.grad_batch(&batch, lambda).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("stage {stage} step {step}: {msg}")),
            other => other,
        })?;
        let lr = lr_at(step, total_steps, plan.lr, plan.warmup_ratio, plan.schedule);
        optimizer.step(model, lr);
        log.push(LogRecord {
            step,
            stage,
            l_ce: report.l_ce,
            l_moe: report.l_moe,
            total: report.total,
            lr,
        });
    }
    let checkpoint = Checkpoint::from_model(model, config, total_steps)?;
    Ok(StageOutput { checkpoint, log })
}

/// Stage 1: dense model, cross-entropy only.
pub fn stage1_train(config: &RunConfig) -> Result<(Model, StageOutput)> {
    config.validate()?;
    let mut model = Model::init_stage1(
        config.seed,
        config.model.clone(),
        &config.data.synth.raw_dims,
    )?;
    let out = run_stage(&mut model, config, 1, &config.stage1, 0.0)?;
    Ok((model, out))
}

/// Stage 2: convert configured blocks to MoE, freeze everything except
/// routers and experts, optimize the combined objective. Optimizer state
/// starts fresh at the stage boundary.
pub fn stage2_train(model: &mut Model, config: &RunConfig) -> Result<StageOutput> {
    config.validate()?;
    if model.stage != 1 {
        return Err(Error::Config(format!(
            "stage2_train expects a stage-1 model, got stage {}",
            model.stage
        )));
    }
    model.convert_to_moe(config.stage2.jitter, config.seed)?;
    run_stage(model, config, 2, &config.stage2, config.stage2.lambda)
}

/// A held-out batch for analytics traces, derived from the master seed.
pub fn eval_samples(config: &RunConfig, count: usize) -> Result<Vec<SynthSample>> {
    let gen = config.generator()?;
    Ok((0..count)
        .map(|i| gen.sample(derive_seed(config.seed, "eval", &[i as u64])))
        .collect())
}

/// Routing trace of the model over a held-out evaluation stream.
pub fn eval_trace(
    model: &Model,
    config: &RunConfig,
    count: usize,
    threads: usize,
) -> Result<RoutingTrace> {
    let samples = eval_samples(config, count)?;
    model.trace_batch(&samples, threads)
}
