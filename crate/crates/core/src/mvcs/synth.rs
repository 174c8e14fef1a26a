//! Synthetic scene fixtures: a box room with structural voxels, object
//! clusters, and an orbiting camera trajectory with optionally blurred
//! frames.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mvcs::{CameraView, GrayImage, Intrinsics, SceneModel, Voxel};
use crate::rng::rng_from;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSynthSpec {
    /// Room extent in meters (x, y, z-up).
    pub room: [f64; 3],
    pub n_objects: usize,
    pub n_structural: usize,
    pub n_views: usize,
    pub image_size: [usize; 2],
    pub with_images: bool,
}

impl Default for SceneSynthSpec {
    fn default() -> Self {
        SceneSynthSpec {
            room: [6.0, 6.0, 3.0],
            n_objects: 24,
            n_structural: 30,
            n_views: 16,
            image_size: [48, 48],
            with_images: true,
        }
    }
}

/// Camera-to-world pose looking from `eye` toward `target` (camera x
/// right, y down, z forward; `up` is the world up hint).
pub fn look_at_pose(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> [[f64; 4]; 4] {
    fn norm(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }
    fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }
    let f = norm([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
    let mut r = cross(f, up);
    let r_len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if r_len < 1e-9 {
        r = cross(f, [0.0, 1.0, 0.0]);
    }
    let r = norm(r);
    let d = cross(f, r);
    [
        [r[0], d[0], f[0], eye[0]],
        [r[1], d[1], f[1], eye[1]],
        [r[2], d[2], f[2], eye[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn checkerboard(size: [usize; 2], cell: usize, phase: usize) -> GrayImage {
    let mut img = GrayImage::constant(size[0], size[1], 0.0);
    for y in 0..size[1] {
        for x in 0..size[0] {
            let on = (x / cell + y / cell + phase).is_multiple_of(2);
            img.set(x, y, if on { 255.0 } else { 0.0 });
        }
    }
    img
}

fn box_blur(img: &GrayImage, passes: usize) -> GrayImage {
    let mut cur = img.clone();
    for _ in 0..passes {
        let mut next = cur.clone();
        for y in 0..cur.height {
            for x in 0..cur.width {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx >= 0
                            && ny >= 0
                            && (nx as usize) < cur.width
                            && (ny as usize) < cur.height
                        {
                            acc += cur.get(nx as usize, ny as usize);
                            n += 1.0;
                        }
                    }
                }
                next.set(x, y, acc / n);
            }
        }
        cur = next;
    }
    cur
}

/// Deterministic synthetic scene. Blur levels cycle over the trajectory
/// so most picks have a sharper temporal neighbor.
pub fn generate_scene(seed: u64, spec: &SceneSynthSpec) -> Result<SceneModel> {
    let mut rng = rng_from(seed, "scene/voxels", &[]);
    let [rw, rd, rh] = spec.room;
    let mut voxels = Vec::new();
    let mut next_id = 0u64;

    // Structural voxels: floor, ceiling, walls in rotation.
    for i in 0..spec.n_structural {
        let (vtype, xyz) = match i % 3 {
            0 => (
                "floor",
                [rng.gen_range(0.0..rw), rng.gen_range(0.0..rd), 0.05],
            ),
            1 => (
                "ceiling",
                [rng.gen_range(0.0..rw), rng.gen_range(0.0..rd), rh - 0.05],
            ),
            _ => {
                let z = rng.gen_range(0.2..rh - 0.2);
                match i % 4 {
                    0 => ("wall", [0.05, rng.gen_range(0.0..rd), z]),
                    1 => ("wall", [rw - 0.05, rng.gen_range(0.0..rd), z]),
                    2 => ("wall", [rng.gen_range(0.0..rw), 0.05, z]),
                    _ => ("wall", [rng.gen_range(0.0..rw), rd - 0.05, z]),
                }
            }
        };
        voxels.push(Voxel {
            id: next_id,
            xyz,
            vtype: vtype.to_string(),
        });
        next_id += 1;
    }

    // Object voxels around a few cluster centers.
    let n_clusters = (spec.n_objects / 6).max(3);
    let centers: Vec<[f64; 3]> = (0..n_clusters)
        .map(|_| {
            [
                rng.gen_range(0.15 * rw..0.85 * rw),
                rng.gen_range(0.15 * rd..0.85 * rd),
                rng.gen_range(0.3..0.6 * rh),
            ]
        })
        .collect();
    for i in 0..spec.n_objects {
        let c = centers[i % n_clusters];
        let jitter: [f64; 3] = [
            0.25 * rng.sample::<f64, _>(StandardNormal),
            0.25 * rng.sample::<f64, _>(StandardNormal),
            0.15 * rng.sample::<f64, _>(StandardNormal),
        ];
        voxels.push(Voxel {
            id: next_id,
            xyz: [
                c[0] + jitter[0],
                c[1] + jitter[1],
                (c[2] + jitter[2]).max(0.1),
            ],
            vtype: format!("object:o{}", i % n_clusters),
        });
        next_id += 1;
    }

    // Orbiting cameras looking inward at cluster targets.
    let mut view_rng = rng_from(seed, "scene/views", &[]);
    let center = [rw / 2.0, rd / 2.0, 0.45 * rh];
    let radius = 0.42 * rw.min(rd);
    let blur_cycle = [2usize, 0, 3, 1];
    let views = (0..spec.n_views)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / spec.n_views as f64;
            let eye = [
                center[0] + radius * angle.cos(),
                center[1] + radius * angle.sin(),
                rng_height(&mut view_rng, rh),
            ];
            let target = centers[i % centers.len()];
            let pose = look_at_pose(eye, target, [0.0, 0.0, 1.0]);
            let image = spec.with_images.then(|| {
                let base = checkerboard(spec.image_size, 4, i % 2);
                box_blur(&base, blur_cycle[i % blur_cycle.len()])
            });
            CameraView {
                index: i,
                pose,
                intrinsics: Intrinsics {
                    fx: 0.9 * spec.image_size[0] as f64,
                    fy: 0.9 * spec.image_size[1] as f64,
                    cx: spec.image_size[0] as f64 / 2.0,
                    cy: spec.image_size[1] as f64 / 2.0,
                },
                image_size: (spec.image_size[0], spec.image_size[1]),
                image,
            }
        })
        .collect();
    Ok(SceneModel { voxels, views })
}

fn rng_height<R: Rng>(rng: &mut R, rh: f64) -> f64 {
    rng.gen_range(0.35 * rh..0.65 * rh)
}
