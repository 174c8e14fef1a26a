//! Maximum voxel coverage sampling.
//!
//! Keyframe selection from a posed camera trajectory: semantic voxel
//! pruning, pose-only visibility with a distance cutoff (no occlusion
//! test — that is what makes coverage cheap), greedy marginal-coverage
//! selection, and a blur-aware refinement pass that swaps each pick for
//! its sharpest temporal neighbor.

mod scene_io;
mod select;
mod sharpness;
mod synth;
mod visibility;

pub use scene_io::{load_scene, read_pgm, save_scene, write_pgm};
pub use select::{brute_force_cover, brute_force_select, greedy_cover, greedy_select};
pub use sharpness::{laplacian_variance, refine_views};
pub use synth::{generate_scene, SceneSynthSpec};
pub use visibility::{camera_center, validate_pose, visible_set, visible_sets, world_to_camera};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// A semantic scene voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    pub id: u64,
    /// World position in meters.
    pub xyz: [f64; 3],
    /// Semantic label, e.g. "floor", "wall", "object:chair".
    #[serde(rename = "type")]
    pub vtype: String,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Row-major grayscale image, values 0..=255.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// A posed camera frame. `pose` is the camera-to-world rigid transform
/// (row-major 4x4); the camera looks down +z, x right, y down.
#[derive(Debug, Clone)]
pub struct CameraView {
    /// Temporal position in the trajectory.
    pub index: usize,
    pub pose: [[f64; 4]; 4],
    pub intrinsics: Intrinsics,
    /// (width, height) in pixels.
    pub image_size: (usize, usize),
    pub image: Option<GrayImage>,
}

/// Voxels plus the ordered camera trajectory.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub voxels: Vec<Voxel>,
    pub views: Vec<CameraView>,
}

/// Structural types subject to pruning.
pub const STRUCTURAL_TYPES: [&str; 3] = ["floor", "ceiling", "wall"];

/// What the pruning step keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Drop floor/ceiling/wall voxels, keep everything else (the
    /// low-contribution-segment reading; default).
    #[default]
    ExcludeStructural,
    /// Keep only floor/ceiling/wall voxels (the literal set-builder
    /// reading of the selection rule; available for auditing).
    StructuralOnly,
}

/// Semantic voxel pruning.
pub fn prune_voxels(voxels: &[Voxel], mode: PruneMode) -> Vec<Voxel> {
    voxels
        .iter()
        .filter(|v| {
            let structural = STRUCTURAL_TYPES.contains(&v.vtype.as_str());
            match mode {
                PruneMode::ExcludeStructural => !structural,
                PruneMode::StructuralOnly => structural,
            }
        })
        .cloned()
        .collect()
}

/// A refinement swap: `original` was replaced by `replacement` whose
/// Laplacian variance is `sharpness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub original: usize,
    pub replacement: usize,
    pub sharpness: f64,
}

/// Result of greedy selection (indices are positions in the view list,
/// in greedy pick order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected_indices: Vec<usize>,
    pub covered_voxel_ids: BTreeSet<u64>,
    pub per_pick_gain: Vec<usize>,
    pub refinement_replacements: Vec<Replacement>,
}
