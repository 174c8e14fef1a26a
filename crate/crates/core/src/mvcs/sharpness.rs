//! Laplacian-variance sharpness and blur-aware view refinement.

use crate::mvcs::{CameraView, Replacement, SelectionResult};
use crate::{Error, Result};

/// Population variance of the 4-neighbor Laplacian response over interior
/// pixels. Higher means sharper; constant and affine images score zero.
pub fn laplacian_variance(img: &crate::mvcs::GrayImage) -> Result<f64> {
    if img.width < 3 || img.height < 3 {
        return Err(Error::InvalidArgument(format!(
            "laplacian_variance needs at least 3x3 pixels, got {}x{}",
            img.width, img.height
        )));
    }
    let mut responses = Vec::with_capacity((img.width - 2) * (img.height - 2));
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let r = img.get(x - 1, y) + img.get(x + 1, y) + img.get(x, y - 1) + img.get(x, y + 1)
                - 4.0 * img.get(x, y);
            responses.push(r);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .sum::<f64>()
        / n)
}

fn sharpness_of(view: &CameraView) -> Result<f64> {
    match &view.image {
        Some(img) => laplacian_variance(img),
        None => Ok(f64::NEG_INFINITY),
    }
}

/// Replaces each selected frame by the sharpest view within `window`
/// temporal positions.
///
/// The original frame wins ties (including the all-equal case); among
/// strictly sharper candidates the lowest position wins. A replacement
/// that would duplicate another currently selected frame is skipped to
/// preserve the frame budget. Views without images score negative
/// infinity and are never chosen over imaged ones.
pub fn refine_views(
    selection: &SelectionResult,
    views: &[CameraView],
    window: usize,
) -> Result<SelectionResult> {
    let n = views.len();
    let mut current = selection.selected_indices.clone();
    let mut replacements = selection.refinement_replacements.clone();
    for p in 0..current.len() {
        let i = current[p];
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "selected index {i} out of range for {n} views"
            )));
        }
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n - 1);
        let mut best = (i, sharpness_of(&views[i])?);
        for j in lo..=hi {
            if j == i {
                continue;
            }
            let s = sharpness_of(&views[j])?;
            if s > best.1 {
                best = (j, s);
            }
        }
        if best.0 != i && !current.contains(&best.0) {
            current[p] = best.0;
            replacements.push(Replacement {
                original: i,
                replacement: best.0,
                sharpness: best.1,
            });
        }
    }
    Ok(SelectionResult {
        selected_indices: current,
        covered_voxel_ids: selection.covered_voxel_ids.clone(),
        per_pick_gain: selection.per_pick_gain.clone(),
        refinement_replacements: replacements,
    })
}
