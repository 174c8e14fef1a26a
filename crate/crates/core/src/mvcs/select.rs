//! Greedy marginal-coverage selection and the exhaustive oracle.

use std::collections::BTreeSet;

use crate::mvcs::{visible_sets, CameraView, SelectionResult, Voxel};
use crate::{Error, Result};

/// Greedy maximum coverage over precomputed cover sets.
///
/// Each round picks the view with the largest marginal gain `|V_k \ U|`
/// (ties to the lowest view index). Stops early once every remaining
/// gain is zero, so the result can hold fewer than `budget` frames.
pub fn greedy_cover(cover: &[BTreeSet<u64>], budget: usize) -> SelectionResult {
    let mut selected = Vec::new();
    let mut gains = Vec::new();
    let mut covered: BTreeSet<u64> = BTreeSet::new();
    let mut available: Vec<bool> = vec![true; cover.len()];
    while selected.len() < budget {
        let mut best: Option<(usize, usize)> = None; // (gain, index)
        for (k, set) in cover.iter().enumerate() {
            if !available[k] {
                continue;
            }
            let gain = set.difference(&covered).count();
            let better = match best {
                None => true,
                Some((bg, bi)) => gain > bg || (gain == bg && k < bi),
            };
            if better {
                best = Some((gain, k));
            }
        }
        match best {
            Some((gain, k)) if gain > 0 => {
                available[k] = false;
                covered.extend(cover[k].iter().copied());
                selected.push(k);
                gains.push(gain);
            }
            _ => break,
        }
    }
    SelectionResult {
        selected_indices: selected,
        covered_voxel_ids: covered,
        per_pick_gain: gains,
        refinement_replacements: Vec::new(),
    }
}

/// Greedy keyframe selection over a trajectory. `voxels` should already
/// be pruned; indices in the result are positions in `views`.
pub fn greedy_select(
    views: &[CameraView],
    voxels: &[Voxel],
    budget: usize,
    d_max: f64,
    threads: usize,
) -> Result<SelectionResult> {
    if views.is_empty() {
        return Err(Error::Empty("view list"));
    }
    if budget < 1 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    let cover = visible_sets(views, voxels, d_max, threads)?;
    Ok(greedy_cover(&cover, budget))
}

fn n_choose_k(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Exhaustive maximum of `|union of V_k|` over all budget-sized subsets.
///
/// Refuses instances whose subset count exceeds `limit` (default 1e6 in
/// [`brute_force_select`]).
pub fn brute_force_cover(cover: &[BTreeSet<u64>], budget: usize, limit: u128) -> Result<usize> {
    if cover.is_empty() {
        return Err(Error::Empty("cover sets"));
    }
    let budget = budget.min(cover.len());
    let combos = n_choose_k(cover.len(), budget);
    if combos > limit {
        return Err(Error::BudgetExceeded {
            combinations: combos,
            limit,
        });
    }
    // Iterative combination enumeration.
    let mut idx: Vec<usize> = (0..budget).collect();
    let n = cover.len();
    let mut best = 0usize;
    loop {
        let mut union: BTreeSet<u64> = BTreeSet::new();
        for &i in &idx {
            union.extend(cover[i].iter().copied());
        }
        best = best.max(union.len());
        // Advance to the next combination.
        let mut pos = budget;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            if idx[pos] != pos + n - budget {
                break;
            }
        }
        idx[pos] += 1;
        for j in pos + 1..budget {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive optimal coverage for a trajectory instance.
pub fn brute_force_select(
    views: &[CameraView],
    voxels: &[Voxel],
    budget: usize,
    d_max: f64,
) -> Result<usize> {
    if views.is_empty() {
        return Err(Error::Empty("view list"));
    }
    let cover = visible_sets(views, voxels, d_max, 1)?;
    brute_force_cover(&cover, budget, 1_000_000)
}
