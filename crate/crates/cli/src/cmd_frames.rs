//! `moxel sample-frames`: voxel-coverage keyframe selection with
//! blur-aware refinement and a human-readable coverage table.

use std::path::PathBuf;

use clap::Args;
use moxel::mvcs::{
    greedy_select, load_scene, prune_voxels, refine_views, PruneMode, SelectionResult,
};
use moxel::{Error, Result};

#[derive(Args)]
pub struct FramesArgs {
    /// Scene JSON file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Frame budget.
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    /// Coverage distance cutoff in meters.
    #[arg(long, default_value_t = 3.0)]
    pub d_max: f64,
    /// Refinement window (0 disables refinement).
    #[arg(long, default_value_t = 2)]
    pub window: usize,
    /// Keep only floor/ceiling/wall voxels instead of dropping them
    /// (audit mode for the inverted pruning rule).
    #[arg(long)]
    pub structural_only: bool,
    /// Write the selection result JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn selection_to_json(result: &SelectionResult) -> Result<String> {
    let mut s = serde_json::to_string_pretty(result)
        .map_err(|e| Error::parse("selection result", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn run(args: FramesArgs, threads: usize) -> Result<u8> {
    let scene = load_scene(&args.scene)?;
    let mode = if args.structural_only {
        PruneMode::StructuralOnly
    } else {
        PruneMode::ExcludeStructural
    };
    let pruned = prune_voxels(&scene.voxels, mode);
    let selection = greedy_select(&scene.views, &pruned, args.k, args.d_max, threads)?;
    let result = if args.window > 0 {
        refine_views(&selection, &scene.views, args.window)?
    } else {
        selection
    };

    if result.selected_indices.len() < args.k {
        eprintln!(
            "warning: stopped after {} of {} frames (remaining marginal gains are zero)",
            result.selected_indices.len(),
            args.k
        );
    }

    println!("pick  view  gain  cumulative");
    let mut cumulative = 0usize;
    for (i, (&view, &gain)) in result
        .selected_indices
        .iter()
        .zip(&result.per_pick_gain)
        .enumerate()
    {
        cumulative += gain;
        println!("{:<5} {:<5} {:<5} {:<10}", i + 1, view, gain, cumulative);
    }
    println!(
        "covered {} / {} voxels after pruning ({} raw)",
        result.covered_voxel_ids.len(),
        pruned.len(),
        scene.voxels.len()
    );
    for r in &result.refinement_replacements {
        println!(
            "refined view {} -> {} (sharpness {})",
            r.original, r.replacement, r.sharpness
        );
    }

    if let Some(out) = &args.out {
        std::fs::write(out, selection_to_json(&result)?)
            .map_err(|e| Error::io(out.display().to_string(), e))?;
        println!("selection written to {}", out.display());
    }
    Ok(0)
}
