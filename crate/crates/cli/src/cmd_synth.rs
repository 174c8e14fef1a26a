//! `moxel synth`: synthetic fixtures for the other subcommands.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use moxel::mvcs::{generate_scene, save_scene, SceneSynthSpec};
use moxel::rng::derive_seed;
use moxel::tokens::{blocks_to_jsonl, SynthGenerator, SynthSpec, SyntheticTask};
use moxel::{Error, Result};

#[derive(Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Subcommand)]
pub enum SynthKind {
    /// A voxel scene with an orbiting, blur-varying camera trajectory.
    Scene {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "scene_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 24)]
        objects: usize,
        /// Skip frame images (selection only, no refinement data).
        #[arg(long)]
        no_images: bool,
    },
    /// Raw modality feature blocks plus labels for the separable task.
    Tokens {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "tokens_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
}

pub fn run(args: SynthArgs) -> Result<u8> {
    match args.kind {
        SynthKind::Scene {
            seed,
            out,
            views,
            objects,
            no_images,
        } => {
            let spec = SceneSynthSpec {
                n_views: views,
                n_objects: objects,
                with_images: !no_images,
                ..SceneSynthSpec::default()
            };
            let scene = generate_scene(seed, &spec)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let path = out.join("scene.json");
            save_scene(&scene, &path)?;
            println!(
                "wrote {} ({} voxels, {} views)",
                path.display(),
                scene.voxels.len(),
                scene.views.len()
            );
            Ok(0)
        }
        SynthKind::Tokens { seed, out, samples } => {
            let spec = SynthSpec::desk_default();
            let task = SyntheticTask::pc_clusters(spec.clusters);
            let gen = SynthGenerator::new(derive_seed(seed, "task", &[]), spec, task)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let mut all_labels = Vec::new();
            for i in 0..samples {
                let sample = gen.sample(derive_seed(seed, "data", &[1, i as u64, 0]));
                let path = out.join(format!("blocks_{i:04}.jsonl"));
                std::fs::write(&path, blocks_to_jsonl(&sample.blocks)?)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                all_labels.push(sample.labels);
            }
            let labels_path = out.join("labels.json");
            let mut labels_json = serde_json::to_string_pretty(&all_labels)
                .map_err(|e| Error::parse("labels", e.to_string()))?;
            labels_json.push('\n');
            std::fs::write(&labels_path, labels_json)
                .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
            println!(
                "wrote {samples} block file(s) and {}",
                labels_path.display()
            );
            Ok(0)
        }
    }
}
