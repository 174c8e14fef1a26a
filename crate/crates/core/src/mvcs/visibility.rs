//! Pose-only voxel visibility.
//!
//! A voxel is covered by a view iff its camera-frame depth is positive,
//! its pinhole projection lands inside the image, and its Euclidean
//! distance from the camera center is at most `d_max`. There is no
//! occlusion test: coverage uses poses only, which is what makes it cheap
//! enough to run over whole trajectories.

use std::collections::BTreeSet;

use crate::mvcs::{CameraView, Voxel};
use crate::parallel::ordered_map;
use crate::{Error, Result};

/// Checks the rotation block is orthonormal (within 1e-6) with positive
/// determinant and the bottom row is `[0, 0, 0, 1]`.
pub fn validate_pose(view: &CameraView) -> Result<()> {
    let p = &view.pose;
    let tol = 1e-6;
    for j in 0..3 {
        if p[3][j].abs() > tol {
            return Err(Error::Config(format!(
                "view {}: pose bottom row must be [0,0,0,1]",
                view.index
            )));
        }
    }
    if (p[3][3] - 1.0).abs() > tol {
        return Err(Error::Config(format!(
            "view {}: pose bottom-right must be 1",
            view.index
        )));
    }
    // R^T R = I
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| p[k][i] * p[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > tol {
                return Err(Error::Config(format!(
                    "view {}: rotation block is not orthonormal (R^T R [{i}][{j}] = {dot})",
                    view.index
                )));
            }
        }
    }
    let det = p[0][0] * (p[1][1] * p[2][2] - p[1][2] * p[2][1])
        - p[0][1] * (p[1][0] * p[2][2] - p[1][2] * p[2][0])
        + p[0][2] * (p[1][0] * p[2][1] - p[1][1] * p[2][0]);
    if (det - 1.0).abs() > 1e-5 {
        return Err(Error::Config(format!(
            "view {}: rotation determinant {det}, pose is singular or reflected",
            view.index
        )));
    }
    if view.intrinsics.fx <= 0.0 || view.intrinsics.fy <= 0.0 {
        return Err(Error::Config(format!(
            "view {}: focal lengths must be positive",
            view.index
        )));
    }
    Ok(())
}

/// Camera center in world coordinates (the pose translation).
pub fn camera_center(view: &CameraView) -> [f64; 3] {
    [view.pose[0][3], view.pose[1][3], view.pose[2][3]]
}

/// World point into the camera frame: `X_c = R^T (X_w - t)`.
pub fn world_to_camera(view: &CameraView, p: [f64; 3]) -> [f64; 3] {
    let t = camera_center(view);
    let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
    let r = &view.pose;
    [
        r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
        r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
        r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
    ]
}

fn covers(view: &CameraView, p: [f64; 3], d_max: f64) -> bool {
    let c = world_to_camera(view, p);
    if c[2] <= 0.0 {
        return false;
    }
    let t = camera_center(view);
    let dist2 = (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2);
    if dist2 > d_max * d_max {
        return false;
    }
    let k = &view.intrinsics;
    let u = k.fx * c[0] / c[2] + k.cx;
    let v = k.fy * c[1] / c[2] + k.cy;
    let (w, h) = view.image_size;
    u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64
}

/// Ids of the voxels covered by one view.
pub fn visible_set(view: &CameraView, voxels: &[Voxel], d_max: f64) -> Result<BTreeSet<u64>> {
    if d_max <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "d_max must be > 0, got {d_max}"
        )));
    }
    validate_pose(view)?;
    Ok(voxels
        .iter()
        .filter(|v| covers(view, v.xyz, d_max))
        .map(|v| v.id)
        .collect())
}

/// Per-view cover sets, computed on up to `threads` workers and returned
/// in view order.
pub fn visible_sets(
    views: &[CameraView],
    voxels: &[Voxel],
    d_max: f64,
    threads: usize,
) -> Result<Vec<BTreeSet<u64>>> {
    ordered_map(views, threads, |view| visible_set(view, voxels, d_max))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvcs::Intrinsics;

    pub(crate) fn axis_view(index: usize) -> CameraView {
        // Identity pose at the origin, looking down +z; principal point at
        // the image center.
        CameraView {
            index,
            pose: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            intrinsics: Intrinsics {
                fx: 60.0,
                fy: 60.0,
                cx: 32.0,
                cy: 32.0,
            },
            image_size: (64, 64),
            image: None,
        }
    }

    fn voxel(id: u64, xyz: [f64; 3]) -> Voxel {
        Voxel {
            id,
            xyz,
            vtype: "object:test".into(),
        }
    }

    #[test]
    fn on_axis_voxel_is_covered() {
        let view = axis_view(0);
        let v = vec![voxel(7, [0.0, 0.0, 1.0])];
        let set = visible_set(&view, &v, 5.0).unwrap();
        assert!(set.contains(&7));
    }

    #[test]
    fn voxel_behind_camera_is_not_covered() {
        let view = axis_view(0);
        let v = vec![voxel(1, [0.0, 0.0, -1.0])];
        assert!(visible_set(&view, &v, 5.0).unwrap().is_empty());
    }

    #[test]
    fn distance_cutoff_is_sharp() {
        let view = axis_view(0);
        let d_max = 5.0;
        let inside = vec![voxel(1, [0.0, 0.0, d_max])];
        let outside = vec![voxel(2, [0.0, 0.0, d_max + 1e-9])];
        assert!(!visible_set(&view, &inside, d_max).unwrap().is_empty());
        assert!(visible_set(&view, &outside, d_max).unwrap().is_empty());
    }

    #[test]
    fn out_of_frustum_is_not_covered() {
        let view = axis_view(0);
        // Steeply off-axis: projects far outside the 64x64 image.
        let v = vec![voxel(3, [2.0, 0.0, 1.0])];
        assert!(visible_set(&view, &v, 10.0).unwrap().is_empty());
    }

    #[test]
    fn singular_pose_is_a_configuration_error() {
        let mut view = axis_view(0);
        view.pose[0][0] = 0.0; // degenerate rotation
        let v = vec![voxel(1, [0.0, 0.0, 1.0])];
        assert!(visible_set(&view, &v, 5.0).is_err());
    }

    #[test]
    fn bad_d_max_rejected() {
        let view = axis_view(0);
        assert!(visible_set(&view, &[], 0.0).is_err());
    }
}
