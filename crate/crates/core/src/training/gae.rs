use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{DemosError, Result};

/// Generalized advantage estimation over a `steps × envs` rollout.
///
/// `dones[t][e]` marks that the transition at step `t` ended an episode, so
/// no value is bootstrapped across it. `last_values` are `V(s_T)` for the
/// observations following the final step. Returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn compute_gae(
    rewards: ArrayView2<'_, f64>,
    values: ArrayView2<'_, f64>,
    dones: ArrayView2<'_, bool>,
    last_values: ArrayView1<'_, f64>,
    gamma: f64,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (steps, envs) = rewards.dim();
    if values.dim() != (steps, envs) || dones.dim() != (steps, envs) || last_values.len() != envs {
        return Err(DemosError::Dimension { expected: steps * envs, got: values.len().min(dones.len()) });
    }
    let mut adv = Array2::zeros((steps, envs));
    for e in 0..envs {
        let mut running = 0.0;
        for t in (0..steps).rev() {
            let next_value = if t + 1 < steps { values[[t + 1, e]] } else { last_values[e] };
            let live = if dones[[t, e]] { 0.0 } else { 1.0 };
            let delta = rewards[[t, e]] + gamma * next_value * live - values[[t, e]];
            running = delta + gamma * lambda * live * running;
            adv[[t, e]] = running;
        }
    }
    let returns = &adv + &values;
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit (population) variance.
pub fn normalize_advantages(adv: &mut Array1<f64>) {
    let n = adv.len();
    if n == 0 {
        return;
    }
    let mean = adv.sum() / n as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    adv.mapv_inplace(|a| (a - mean) / std);
}

pub const MIN_LR: f64 = 1e-6;
pub const MAX_LR: f64 = 1e-2;

/// Desired-KL learning-rate schedule: divide by 1.5 above twice the target,
/// multiply by 1.5 below half of it, then clamp.
pub fn adapt_lr(lr: f64, kl: f64, desired: f64) -> f64 {
    let next = if kl > 2.0 * desired {
        lr / 1.5
    } else if kl < desired / 2.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(MIN_LR, MAX_LR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_without_bootstrap() {
        let (adv, ret) = compute_gae(
            array![[1.5]].view(),
            array![[0.5]].view(),
            array![[true]].view(),
            array![7.0].view(),
            0.99,
            0.95,
        )
        .unwrap();
        assert_eq!(adv[[0, 0]], 1.0);
        assert_eq!(ret[[0, 0]], 1.5);
    }

    #[test]
    fn zero_lambda_is_one_step_td() {
        let r = array![[1.0, 0.0], [2.0, -1.0], [0.5, 0.5]];
        let v = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]];
        let d = array![[false, false], [false, true], [false, false]];
        let last = array![1.0, 2.0];
        let (adv, _) = compute_gae(r.view(), v.view(), d.view(), last.view(), 0.9, 0.0).unwrap();
        assert!((adv[[0, 0]] - (1.0 + 0.9 * 0.3 - 0.1)).abs() < 1e-15);
        assert!((adv[[1, 1]] - (-1.0 - 0.4)).abs() < 1e-15);
        assert!((adv[[2, 1]] - (0.5 + 0.9 * 2.0 - 0.6)).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (steps, envs, gamma, lambda) = (10, 3, 0.97, 0.9);
        let r = Array::from_shape_fn((steps, envs), |_| rng.random_range(-1.0..1.0));
        let v = Array::from_shape_fn((steps, envs), |_| rng.random_range(-1.0..1.0));
        let d = Array::from_shape_fn((steps, envs), |_| rng.random_bool(0.2));
        let last = Array::from_shape_fn(envs, |_| rng.random_range(-1.0..1.0));
        let (adv, ret) = compute_gae(r.view(), v.view(), d.view(), last.view(), gamma, lambda).unwrap();
        for e in 0..envs {
            let delta = |t: usize| {
                let nv = if t + 1 < steps { v[[t + 1, e]] } else { last[e] };
                r[[t, e]] + if d[[t, e]] { 0.0 } else { gamma * nv } - v[[t, e]]
            };
            for t in 0..steps {
                // Σ_k (γλ)^k δ_{t+k}, truncated after the first terminal step.
                let mut expected = 0.0;
                let mut weight = 1.0;
                for k in t..steps {
                    expected += weight * delta(k);
                    if d[[k, e]] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                assert!((adv[[t, e]] - expected).abs() < 1e-10);
                assert!((ret[[t, e]] - (expected + v[[t, e]])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalization_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = Array::from_shape_fn(6144, |_| rng.random_range(-30.0..50.0));
        normalize_advantages(&mut a);
        let mean = a.sum() / a.len() as f64;
        let std = (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(mean.abs() < 1e-8);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(adapt_lr(1e-3, 0.05, 0.01), 1e-3 / 1.5);
        assert_eq!(adapt_lr(1e-3, 0.001, 0.01), 1e-3 * 1.5);
        assert_eq!(adapt_lr(1e-3, 0.01, 0.01), 1e-3);
        assert_eq!(adapt_lr(1e-3, 0.02, 0.01), 1e-3);
        assert_eq!(adapt_lr(1e-3, 0.005, 0.01), 1e-3);
        assert_eq!(adapt_lr(9e-3, 0.0, 0.01), MAX_LR);
        assert_eq!(adapt_lr(1.2e-6, 1.0, 0.01), MIN_LR);
        // A synthetic sequence of large KLs shrinks monotonically to the floor.
        let mut lr = 5e-4;
        for _ in 0..40 {
            let next = adapt_lr(lr, 0.5, 0.01);
            assert!(next <= lr);
            lr = next;
        }
        assert_eq!(lr, MIN_LR);
    }
}
