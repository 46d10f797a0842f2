use serde::{Deserialize, Serialize};

use crate::error::{DemosError, Result};

/// Reward weights. Penalty weights are positive and subtracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub balance: f64,
    pub gait: f64,
    pub swing: f64,
    pub action: f64,
    pub action_rate: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { balance: 1.0, gait: 0.5, swing: 0.25, action: 1e-3, action_rate: 1e-2 }
    }
}

/// What the non-coordinated branches are asked to do with their first joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwingTask {
    /// Track `A sin(2πt/T)`.
    Swing,
    /// Hold a fixed angle (the transfer task).
    Hold { angle: f64 },
}

/// BranchWorld parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub policy_hz: f64,
    pub substeps: usize,
    pub kp: f64,
    pub kd: f64,
    /// Clock period `T` in seconds.
    pub clock_period: f64,
    pub episode_length: f64,
    /// Radians of PD target per unit action.
    pub action_scale: f64,
    /// Used for joints without an `inertia` attribute.
    pub default_inertia: f64,
    /// Used for joints without a `damping` attribute.
    pub default_damping: f64,
    /// Tracking amplitude `A` in radians.
    pub amplitude: f64,
    /// Initial joint positions are drawn from `±init_noise`.
    pub init_noise: f64,
    /// Branch ids of the coordinated leg pair `(b_L, b_R)`. Defaults to the
    /// last two branches.
    pub coordinated_pair: Option<[usize; 2]>,
    /// Maximum magnitude of the hidden per-episode push torque.
    pub disturbance_max: f64,
    /// Sensed joint velocities are multiplied by this before entering the
    /// observation. Keeps them on the same order as positions.
    pub velocity_obs_scale: f64,
    pub weights: RewardWeights,
    pub swing_task: SwingTask,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            policy_hz: 50.0,
            substeps: 20,
            kp: 40.0,
            kd: 1.0,
            clock_period: 1.0,
            episode_length: 20.0,
            action_scale: 0.5,
            default_inertia: 0.1,
            default_damping: 0.5,
            amplitude: 0.5,
            init_noise: 0.1,
            coordinated_pair: None,
            disturbance_max: 12.0,
            velocity_obs_scale: 0.05,
            weights: RewardWeights::default(),
            swing_task: SwingTask::Swing,
        }
    }
}

/// Low-level PD rate the simulator integrates at.
pub const PD_HZ: f64 = 1000.0;

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DemosError::Config(msg.to_string()));
        if !(self.policy_hz > 0.0) || self.substeps == 0 {
            return bad("policy_hz and substeps must be positive");
        }
        if (self.policy_hz * self.substeps as f64 - PD_HZ).abs() > 1e-9 {
            return bad("policy_hz × substeps must equal the 1000 Hz PD rate");
        }
        if !(self.kp > 0.0) || !(self.kd >= 0.0) {
            return bad("require kp > 0 and kd >= 0");
        }
        if !(self.clock_period > 0.0) {
            return bad("clock_period must be positive");
        }
        if !(self.episode_length > 0.0) {
            return bad("episode_length must be positive");
        }
        if !(self.default_inertia > 0.0) || !(self.default_damping >= 0.0) {
            return bad("default inertia must be > 0 and damping >= 0");
        }
        if !(self.disturbance_max >= 0.0) || !(self.init_noise >= 0.0) {
            return bad("disturbance_max and init_noise must be >= 0");
        }
        if !(self.velocity_obs_scale > 0.0) || !self.velocity_obs_scale.is_finite() {
            return bad("velocity_obs_scale must be positive");
        }
        let w = &self.weights;
        if [w.balance, w.gait, w.swing, w.action, w.action_rate].iter().any(|v| !v.is_finite()) {
            return bad("reward weights must be finite");
        }
        Ok(())
    }

    pub fn policy_dt(&self) -> f64 {
        1.0 / self.policy_hz
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / (self.policy_hz * self.substeps as f64)
    }

    pub fn steps_per_episode(&self) -> usize {
        (self.episode_length * self.policy_hz).round() as usize
    }
}
