//! Coverage-sampling properties against exhaustive and geometric oracles.

use rand::Rng;

use moxel::mvcs::{
    brute_force_select, generate_scene, greedy_select, laplacian_variance, prune_voxels,
    refine_views, validate_pose, visible_set, CameraView, GrayImage, Intrinsics, PruneMode,
    SceneSynthSpec, Voxel,
};
use moxel::rng::rng_from;

fn random_instance(seed: u64) -> (Vec<CameraView>, Vec<Voxel>, usize, f64) {
    let mut rng = rng_from(seed, "mvcs/instance", &[]);
    let spec = SceneSynthSpec {
        n_views: rng.gen_range(3..=12),
        n_objects: rng.gen_range(5..=34),
        n_structural: 6,
        with_images: false,
        ..SceneSynthSpec::default()
    };
    let scene = generate_scene(seed, &spec).unwrap();
    let pruned = prune_voxels(&scene.voxels, PruneMode::ExcludeStructural);
    let budget = rng.gen_range(1..=4usize);
    let d_max = rng.gen_range(2.0..5.0);
    (scene.views, pruned, budget, d_max)
}

#[test]
fn greedy_meets_the_1_minus_1_over_e_bound_on_100_instances() {
    let bound = 1.0 - (-1.0f64).exp();
    for seed in 0..100u64 {
        let (views, voxels, budget, d_max) = random_instance(seed);
        let greedy = greedy_select(&views, &voxels, budget, d_max, 1).unwrap();
        let opt = brute_force_select(&views, &voxels, budget, d_max).unwrap();
        let g = greedy.covered_voxel_ids.len();
        assert!(g <= opt, "seed {seed}: greedy {g} exceeds optimum {opt}");
        assert!(
            g as f64 >= bound * opt as f64,
            "seed {seed}: greedy {g} below (1-1/e) * {opt}"
        );
        for w in greedy.per_pick_gain.windows(2) {
            assert!(
                w[0] >= w[1],
                "seed {seed}: gains increased: {:?}",
                greedy.per_pick_gain
            );
        }
    }
}

#[test]
fn coverage_is_monotone_in_budget() {
    for seed in 0..20u64 {
        let (views, voxels, _, d_max) = random_instance(seed);
        let mut prev = 0usize;
        for budget in 1..=5 {
            let r = greedy_select(&views, &voxels, budget, d_max, 1).unwrap();
            assert!(r.covered_voxel_ids.len() >= prev);
            prev = r.covered_voxel_ids.len();
        }
    }
}

fn rotate_z(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

#[test]
fn visible_set_is_invariant_under_joint_rigid_transforms() {
    let angle = 0.7345;
    let shift = [1.5, -2.25, 0.4];
    for seed in 0..10u64 {
        let (views, voxels, _, d_max) = random_instance(seed);
        let moved_voxels: Vec<Voxel> = voxels
            .iter()
            .map(|v| {
                let r = rotate_z(v.xyz, angle);
                Voxel {
                    id: v.id,
                    xyz: [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]],
                    vtype: v.vtype.clone(),
                }
            })
            .collect();
        for view in &views {
            // Apply the same rigid transform to the pose: T' = G * T with
            // G = [Rz | shift].
            let (s, c) = angle.sin_cos();
            let g = [
                [c, -s, 0.0, shift[0]],
                [s, c, 0.0, shift[1]],
                [0.0, 0.0, 1.0, shift[2]],
                [0.0, 0.0, 0.0, 1.0],
            ];
            let mut pose = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    pose[i][j] = (0..4).map(|k| g[i][k] * view.pose[k][j]).sum();
                }
            }
            let moved_view = CameraView {
                index: view.index,
                pose,
                intrinsics: view.intrinsics,
                image_size: view.image_size,
                image: None,
            };
            validate_pose(&moved_view).unwrap();
            let a = visible_set(view, &voxels, d_max).unwrap();
            let b = visible_set(&moved_view, &moved_voxels, d_max).unwrap();
            assert_eq!(a, b, "seed {seed} view {}", view.index);
        }
    }
}

#[test]
fn refinement_on_synthetic_scenes_respects_window_and_count() {
    for seed in 0..10u64 {
        let spec = SceneSynthSpec {
            n_views: 12,
            ..SceneSynthSpec::default()
        };
        let scene = generate_scene(seed, &spec).unwrap();
        let pruned = prune_voxels(&scene.voxels, PruneMode::ExcludeStructural);
        let selection = greedy_select(&scene.views, &pruned, 4, 3.0, 1).unwrap();
        let window = 2;
        let refined = refine_views(&selection, &scene.views, window).unwrap();
        assert_eq!(
            refined.selected_indices.len(),
            selection.selected_indices.len()
        );
        for (orig, new) in selection
            .selected_indices
            .iter()
            .zip(&refined.selected_indices)
        {
            assert!(
                new.abs_diff(*orig) <= window,
                "seed {seed}: {orig} -> {new}"
            );
        }
        // Refinement never lowers sharpness.
        for (orig, new) in selection
            .selected_indices
            .iter()
            .zip(&refined.selected_indices)
        {
            let s = |i: usize| laplacian_variance(scene.views[i].image.as_ref().unwrap()).unwrap();
            assert!(s(*new) >= s(*orig) - 1e-12);
        }
    }
}

#[test]
fn constructed_blur_cases_always_get_replaced() {
    // 100 constructed cases: a blurred pick with one strictly sharper
    // neighbor inside the window.
    let mut rng = rng_from(99, "mvcs/blur", &[]);
    for case in 0..100 {
        let n = 7usize;
        let pick = rng.gen_range(0..n);
        let offset = loop {
            let o = rng.gen_range(-2i64..=2);
            if o != 0 && pick as i64 + o >= 0 && ((pick as i64 + o) as usize) < n {
                break o;
            }
        };
        let sharp_pos = (pick as i64 + offset) as usize;
        let views: Vec<CameraView> = (0..n)
            .map(|i| {
                let mut img = GrayImage::constant(16, 16, 10.0);
                if i == sharp_pos {
                    for x in 0..16 {
                        for y in 0..16 {
                            img.set(x, y, if (x + y) % 2 == 0 { 255.0 } else { 0.0 });
                        }
                    }
                }
                CameraView {
                    index: i,
                    pose: [
                        [1.0, 0.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0, 0.0],
                        [0.0, 0.0, 1.0, 0.0],
                        [0.0, 0.0, 0.0, 1.0],
                    ],
                    intrinsics: Intrinsics {
                        fx: 10.0,
                        fy: 10.0,
                        cx: 8.0,
                        cy: 8.0,
                    },
                    image_size: (16, 16),
                    image: Some(img),
                }
            })
            .collect();
        let selection = moxel::mvcs::SelectionResult {
            selected_indices: vec![pick],
            covered_voxel_ids: Default::default(),
            per_pick_gain: vec![1],
            refinement_replacements: vec![],
        };
        let refined = refine_views(&selection, &views, 2).unwrap();
        assert_eq!(
            refined.selected_indices,
            vec![sharp_pos],
            "case {case}: pick {pick} should move to {sharp_pos}"
        );
    }
}
