use ndarray::{Array1, Array2, ArrayView1};

use super::gae::{compute_gae, normalize_advantages};
use super::ppo::{gather_rows, Minibatch};
use crate::env::RewardTerms;
use crate::error::{DemosError, Result};

/// Transitions of one rollout, row `t · envs + e`. Local observations are
/// slices of the stored global ones.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub envs: usize,
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub values: Array1<f64>,
    /// Rewards, with `γ V(s_terminal)` added on time-limit terminations.
    pub rewards: Array1<f64>,
    pub dones: Vec<bool>,
    pub last_values: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
    /// Masked per-branch contributions to `μ`.
    pub branch_actions: Vec<Array2<f64>>,
    /// Environment reward before bootstrapping, summed over the rollout.
    pub env_reward_sum: f64,
    pub term_sums: RewardTerms,
    /// Returns of episodes that finished during the rollout.
    pub finished_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, envs: usize, obs_dim: usize, motors: usize, branches: usize) -> Self {
        let n = steps * envs;
        Self {
            steps,
            envs,
            obs: Array2::zeros((n, obs_dim)),
            actions: Array2::zeros((n, motors)),
            log_probs: Array1::zeros(n),
            values: Array1::zeros(n),
            rewards: Array1::zeros(n),
            dones: vec![false; n],
            last_values: Array1::zeros(envs),
            advantages: Array1::zeros(n),
            returns: Array1::zeros(n),
            branch_actions: vec![Array2::zeros((n, motors)); branches],
            env_reward_sum: 0.0,
            term_sums: RewardTerms::default(),
            finished_returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores step `t` for all envs.
    #[allow(clippy::too_many_arguments)]
    pub fn store(
        &mut self,
        t: usize,
        obs: &Array2<f64>,
        actions: &Array2<f64>,
        log_probs: ArrayView1<'_, f64>,
        values: ArrayView1<'_, f64>,
        rewards: ArrayView1<'_, f64>,
        dones: &[bool],
        branch_actions: &[Array2<f64>],
    ) -> Result<()> {
        if t >= self.steps || obs.nrows() != self.envs {
            return Err(DemosError::Dimension { expected: self.envs, got: obs.nrows() });
        }
        let rows = t * self.envs..(t + 1) * self.envs;
        self.obs.slice_mut(ndarray::s![rows.clone(), ..]).assign(obs);
        self.actions.slice_mut(ndarray::s![rows.clone(), ..]).assign(actions);
        self.log_probs.slice_mut(ndarray::s![rows.clone()]).assign(&log_probs);
        self.values.slice_mut(ndarray::s![rows.clone()]).assign(&values);
        self.rewards.slice_mut(ndarray::s![rows.clone()]).assign(&rewards);
        self.dones[rows.clone()].copy_from_slice(dones);
        for (dst, src) in self.branch_actions.iter_mut().zip(branch_actions) {
            dst.slice_mut(ndarray::s![rows.clone(), ..]).assign(src);
        }
        Ok(())
    }

    /// Runs GAE, stores returns, and normalizes the advantages.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let shape = (self.steps, self.envs);
        let r = self
            .rewards
            .view()
            .into_shape_with_order(shape)
            .map_err(|_| DemosError::Dimension { expected: self.len(), got: self.rewards.len() })?;
        let v = self.values.view().into_shape_with_order(shape).expect("same length as rewards");
        let d = Array2::from_shape_vec(shape, self.dones.clone()).expect("same length as rewards");
        let (adv, ret) = compute_gae(r, v, d.view(), self.last_values.view(), gamma, lambda)?;
        self.advantages = adv.into_shape_with_order(self.len()).expect("contiguous");
        self.returns = ret.into_shape_with_order(self.len()).expect("contiguous");
        normalize_advantages(&mut self.advantages);
        Ok(())
    }

    pub fn minibatch(&self, rows: &[usize]) -> Minibatch {
        Minibatch {
            obs: gather_rows(&self.obs, rows),
            actions: gather_rows(&self.actions, rows),
            old_log_prob: rows.iter().map(|&r| self.log_probs[r]).collect(),
            advantages: rows.iter().map(|&r| self.advantages[r]).collect(),
            returns: rows.iter().map(|&r| self.returns[r]).collect(),
        }
    }

    pub fn mean_env_reward(&self) -> f64 {
        self.env_reward_sum / self.len() as f64
    }
}
