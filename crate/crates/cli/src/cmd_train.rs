//! `moxel train`: stage 1, optionally stage 2, checkpoints + logs + trace.

use std::path::{Path, PathBuf};

use clap::Args;
use moxel::trainer::{
    eval_trace, log_to_jsonl, stage1_train, stage2_train, Checkpoint, LogRecord, RunConfig,
};
use moxel::{Error, Result};

#[derive(Args)]
pub struct TrainArgs {
    /// Path to the run-config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, logs, and the eval trace.
    #[arg(long, default_value = "moxel_out")]
    pub out: PathBuf,
    /// Which stages to run: "both", "1", or "2" (stage 2 needs --from).
    #[arg(long, default_value = "both")]
    pub stage: String,
    /// Stage-1 checkpoint to resume from when --stage 2.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Held-out samples for the post-training routing trace.
    #[arg(long, default_value_t = 8)]
    pub eval_samples: usize,
}

pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn run(args: TrainArgs, threads: usize) -> Result<u8> {
    let cfg = load_config(&args.config, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let mut log: Vec<LogRecord> = Vec::new();

    let (model, final_ckpt) = match args.stage.as_str() {
        "1" => {
            let (model, out1) = stage1_train(&cfg)?;
            out1.checkpoint
                .save(&args.out.join("checkpoint_stage1.json"))?;
            log.extend(out1.log);
            (model, out1.checkpoint)
        }
        "2" => {
            let from = args.from.as_ref().ok_or_else(|| {
                Error::Config("--stage 2 requires --from <stage-1 checkpoint>".into())
            })?;
            let ckpt = Checkpoint::load(from)?;
            if ckpt.stage != 1 {
                return Err(Error::Config(format!(
                    "--from checkpoint has stage {}, expected 1",
                    ckpt.stage
                )));
            }
            let mut model = ckpt.restore()?;
            let out2 = stage2_train(&mut model, &cfg)?;
            out2.checkpoint
                .save(&args.out.join("checkpoint_stage2.json"))?;
            log.extend(out2.log);
            (model, out2.checkpoint)
        }
        "both" => {
            let (mut model, out1) = stage1_train(&cfg)?;
            out1.checkpoint
                .save(&args.out.join("checkpoint_stage1.json"))?;
            log.extend(out1.log);
            let out2 = stage2_train(&mut model, &cfg)?;
            out2.checkpoint
                .save(&args.out.join("checkpoint_stage2.json"))?;
            log.extend(out2.log);
            (model, out2.checkpoint)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown --stage {other:?}; expected both, 1, or 2"
            )))
        }
    };

    write(&args.out.join("train_log.jsonl"), &log_to_jsonl(&log)?)?;

    // Routing trace over the held-out stream (meaningful once MoE layers
    // exist; a stage-1 model writes an empty-record trace).
    let trace = eval_trace(&model, &cfg, args.eval_samples, threads)?;
    let mut trace_json =
        serde_json::to_string_pretty(&trace).map_err(|e| Error::parse("trace", e.to_string()))?;
    trace_json.push('\n');
    write(&args.out.join("trace.json"), &trace_json)?;

    println!(
        "stage {} complete after step {}",
        final_ckpt.stage, final_ckpt.step
    );
    println!("checkpoint digest {}", final_ckpt.digest()?);
    if let Some(last) = log.last() {
        println!(
            "final step: l_ce={} l_moe={} total={}",
            last.l_ce, last.l_moe, last.total
        );
    }
    Ok(0)
}
