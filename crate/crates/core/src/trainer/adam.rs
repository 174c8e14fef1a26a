//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::model::Model;
use crate::numkit::Matrix;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second-moment accumulators for one parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
}

/// One AdamW update on a single parameter tensor.
///
/// `t` is the 1-based step count for bias correction. Weight decay is
/// decoupled: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adam_step(
    value: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    t: u64,
    lr: f64,
    hp: &AdamHyper,
) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let data = value.data_mut();
    let g = grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..data.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        data[i] -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * data[i]);
    }
}

/// Model-level optimizer: one state per trainable parameter, stepped in
/// the canonical parameter order.
#[derive(Debug)]
pub struct Optimizer {
    pub hp: AdamHyper,
    states: BTreeMap<String, AdamState>,
    t: u64,
}

impl Optimizer {
    pub fn new(hp: AdamHyper) -> Self {
        Optimizer {
            hp,
            states: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one AdamW step to every trainable parameter.
    pub fn step(&mut self, model: &mut Model, lr: f64) {
        self.t += 1;
        for (name, p) in model.params_mut() {
            if !p.trainable {
                continue;
            }
            let state = self.states.entry(name).or_insert_with(|| AdamState {
                m: Matrix::zeros(p.value.rows(), p.value.cols()),
                v: Matrix::zeros(p.value.rows(), p.value.cols()),
            });
            adam_step(&mut p.value, &p.grad, state, self.t, lr, &self.hp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut value = Matrix::from_rows(&[vec![1.5, -2.25]]).unwrap();
        let before = value.clone();
        let grad = Matrix::zeros(1, 2);
        let mut state = AdamState {
            m: Matrix::zeros(1, 2),
            v: Matrix::zeros(1, 2),
        };
        adam_step(&mut value, &grad, &mut state, 1, 0.1, &AdamHyper::default());
        assert_eq!(value, before);
    }

    #[test]
    fn single_step_matches_hand_evaluated_recurrence() {
        // Scalar parameter, g = 1, one step:
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1,
        // update = lr * 1 / (1 + eps).
        let mut value = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let grad = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let mut state = AdamState {
            m: Matrix::zeros(1, 1),
            v: Matrix::zeros(1, 1),
        };
        let hp = AdamHyper::default();
        adam_step(&mut value, &grad, &mut state, 1, 0.01, &hp);
        let expected = 0.5 - 0.01 * (1.0 / (1.0 + 1e-8));
        assert!((value.get(0, 0) - expected).abs() < 1e-15);
        assert!((state.m.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((state.v.get(0, 0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn identical_params_follow_identical_trajectories() {
        let mut a = Matrix::from_rows(&[vec![0.3]]).unwrap();
        let mut b = a.clone();
        let mut sa = AdamState {
            m: Matrix::zeros(1, 1),
            v: Matrix::zeros(1, 1),
        };
        let mut sb = sa.clone();
        let hp = AdamHyper::default();
        for t in 1..=25u64 {
            let g = Matrix::from_rows(&[vec![(t as f64 * 0.37).sin()]]).unwrap();
            adam_step(&mut a, &g, &mut sa, t, 0.05, &hp);
            adam_step(&mut b, &g, &mut sb, t, 0.05, &hp);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn decoupled_weight_decay_shrinks_without_gradient() {
        let mut value = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let grad = Matrix::zeros(1, 1);
        let mut state = AdamState {
            m: Matrix::zeros(1, 1),
            v: Matrix::zeros(1, 1),
        };
        let hp = AdamHyper {
            weight_decay: 0.1,
            ..AdamHyper::default()
        };
        adam_step(&mut value, &grad, &mut state, 1, 0.5, &hp);
        assert!((value.get(0, 0) - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
    }
}
