//! Learning-rate schedules: constant, and linear warmup into cosine decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    WarmupCosine,
}

/// Learning rate at `step` of `total_steps`.
///
/// Warmup-cosine: linear 0 -> `base_lr` over `ceil(ratio * total)` steps,
/// then cosine from `base_lr` to 0 at `total_steps`.
pub fn lr_at(
    step: u64,
    total_steps: u64,
    base_lr: f64,
    warmup_ratio: f64,
    schedule: LrSchedule,
) -> f64 {
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::WarmupCosine => {
            let warmup = (warmup_ratio * total_steps as f64).ceil() as u64;
            if step < warmup {
                return base_lr * step as f64 / warmup as f64;
            }
            if total_steps <= warmup {
                return if step >= total_steps { 0.0 } else { base_lr };
            }
            let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
            base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_cosine_boundaries() {
        let total = 100;
        let lr = 0.01;
        let ratio = 0.03; // warmup = 3 steps
        assert_eq!(lr_at(0, total, lr, ratio, LrSchedule::WarmupCosine), 0.0);
        assert!((lr_at(3, total, lr, ratio, LrSchedule::WarmupCosine) - lr).abs() < 1e-15);
        assert!(lr_at(total, total, lr, ratio, LrSchedule::WarmupCosine).abs() < 1e-15);
        // Strictly inside warmup: linear.
        assert!((lr_at(1, total, lr, ratio, LrSchedule::WarmupCosine) - lr / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_is_constant() {
        for step in [0, 5, 99] {
            assert_eq!(lr_at(step, 100, 2e-5, 0.03, LrSchedule::Constant), 2e-5);
        }
    }

    #[test]
    fn zero_warmup_starts_at_base() {
        assert!((lr_at(0, 10, 0.5, 0.0, LrSchedule::WarmupCosine) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_monotone_after_warmup() {
        let mut prev = f64::INFINITY;
        for step in 3..=100 {
            let v = lr_at(step, 100, 1.0, 0.03, LrSchedule::WarmupCosine);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }
}
