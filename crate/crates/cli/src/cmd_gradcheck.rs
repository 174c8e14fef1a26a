//! `moxel gradcheck`: audits the analytic gradients of the stage-2 total
//! loss against central finite differences, per parameter group.

use std::path::PathBuf;

use clap::Args;
use moxel::numkit::grad_check;
use moxel::rng::derive_seed;
use moxel::tokens::ModalityTag;
use moxel::trainer::RunConfig;
use moxel::{Model, ModelConfig, Result};

const TOLERANCE: f64 = 1e-4;

#[derive(Args)]
pub struct GradcheckArgs {
    /// Run-config JSON; omitted means the built-in reduced audit config
    /// (full-size configs work but check many more coordinates).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Deliberately corrupt one analytic gradient entry (test hook for
    /// the failure path).
    #[arg(long)]
    pub corrupt: bool,
}

/// Small audit config: same wiring as the desk default, fewer
/// coordinates, so the full finite-difference sweep stays fast.
fn audit_config() -> RunConfig {
    let mut cfg = RunConfig::desk_default();
    cfg.model = ModelConfig {
        token_dim: 8,
        adapter_hidden: 10,
        expert_hidden: 6,
        vocab: 4,
        num_blocks: 2,
        moe_positions: vec![1],
        num_experts: 4,
        top_k: 2,
    };
    for d in cfg.data.synth.raw_dims.values_mut() {
        *d = 6;
    }
    cfg.data.synth.raw_dims.insert(ModalityTag::Text, 8);
    for c in cfg.data.synth.counts.values_mut() {
        *c = 2;
    }
    cfg
}

pub fn run(args: GradcheckArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(path) => super::cmd_train::load_config(path, None)?,
        None => audit_config(),
    };
    let lambda = cfg.stage2.lambda;
    let mut model = Model::init_stage1(cfg.seed, cfg.model.clone(), &cfg.data.synth.raw_dims)?;
    model.convert_to_moe(0.05, cfg.seed)?;

    let gen = cfg.generator()?;
    let batch = vec![gen.sample(derive_seed(cfg.seed, "gradcheck", &[0]))];

    model.zero_grads();
    model.grad_batch(&batch, lambda)?;

    if lambda == 0.0 {
        println!("balance term: n/a (lambda = 0); checking cross-entropy path only");
    } else {
        println!("balance term: included (lambda = {lambda})");
    }

    let groups: [(&str, fn(&str) -> bool); 4] = [
        ("router", |n| n.contains(".router")),
        ("experts", |n| n.contains(".expert.")),
        ("adapters", |n| n.starts_with("adapter.")),
        ("head", |n| n == "head"),
    ];

    let mut failed: Option<(&str, f64)> = None;
    for (name, filter) in groups {
        let mut analytic = model.flatten_grads(filter);
        if args.corrupt && name == "router" {
            analytic[0] += 1.0;
        }
        let at = model.flatten_values(filter);
        let err = grad_check(
            |flat| {
                model.load_values(filter, flat)?;
                let (r, _, _) = model.eval_batch(&batch, lambda)?;
                Ok(r.total)
            },
            &at,
            &analytic,
            1e-5,
        )?;
        model.load_values(filter, &at)?;
        let status = if err <= TOLERANCE { "ok" } else { "FAIL" };
        println!("{name:<9} max rel err {err:.3e}  {status}");
        if err > TOLERANCE && failed.is_none() {
            failed = Some((name, err));
        }
    }

    match failed {
        Some((group, err)) => {
            eprintln!(
                "gradcheck failed: group {group} at rel err {err:.3e} (tolerance {TOLERANCE:.0e})"
            );
            Ok(3)
        }
        None => {
            println!("all gradient groups within {TOLERANCE:.0e}");
            Ok(0)
        }
    }
}
