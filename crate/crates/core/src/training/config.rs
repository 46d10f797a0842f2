use serde::{Deserialize, Serialize};

use crate::demos::{PolicyInit, PolicyKind};
use crate::env::EnvConfig;
use crate::error::{DemosError, Result};

/// PPO and DEMOS hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub desired_kl: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the decentralization objective.
    pub demos_lambda: f64,
    /// Norm order used by the penalty and the connection analysis.
    pub norm_p: f64,
    pub iterations: usize,
    /// Rewards are multiplied by this before GAE so value targets stay near
    /// unit scale. Reported rewards and returns are unscaled.
    pub reward_scale: f64,
    pub critic_hidden: Vec<usize>,
    /// Record the relative connection matrix every this many iterations.
    pub connection_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 256,
            steps_per_env: 24,
            epochs: 5,
            minibatches: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.005,
            value_coef: 1.0,
            desired_kl: 0.01,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            demos_lambda: 0.01,
            norm_p: 1.0,
            iterations: 300,
            reward_scale: 0.02,
            critic_hidden: vec![64, 64],
            connection_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.steps_per_env
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.minibatches.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DemosError::Config(msg));
        if self.num_envs == 0 || self.steps_per_env == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("num_envs, steps_per_env, epochs and minibatches must be positive".into());
        }
        if !self.batch_size().is_multiple_of(self.minibatches) {
            return bad(format!(
                "{} minibatches do not divide a buffer of {} transitions",
                self.minibatches,
                self.batch_size()
            ));
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return bad("reward_scale must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]".into());
        }
        if !(self.clip > 0.0) || !(self.desired_kl > 0.0) || !(self.learning_rate > 0.0) {
            return bad("clip, desired_kl and learning_rate must be positive".into());
        }
        if !(self.demos_lambda >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("demos_lambda, entropy_coef and value_coef must be >= 0".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(self.norm_p >= 1.0) {
            return bad(format!("norm_p must be >= 1, got {}", self.norm_p));
        }
        if self.connection_every == 0 {
            return bad("connection_every must be positive".into());
        }
        Ok(())
    }
}

/// Post-training connection analysis and pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Branch-level pruning threshold.
    pub eta: f64,
    pub motor_level: bool,
    /// Motor-level pruning threshold.
    pub eta_prime: f64,
    /// Parallel envs in the analysis batch.
    pub batch_envs: usize,
    /// Recorded steps per env.
    pub batch_steps: usize,
    /// Deterministic steps run before recording, so the batch reflects the
    /// policy's steady behavior rather than the reset distribution.
    pub warmup_steps: usize,
    /// Episodes used by the evaluations before and after pruning.
    pub eval_episodes: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            eta: 0.04,
            motor_level: false,
            eta_prime: 0.04,
            batch_envs: 256,
            batch_steps: 16,
            warmup_steps: 100,
            eval_episodes: 32,
        }
    }
}

impl AnalysisConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_envs * self.batch_steps
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in fixture name (`humanoid`, `quadruped`, `y_overlap`) or a URDF path.
    pub robot: String,
    pub mode: PolicyKind,
    pub seed: u64,
    /// Save an intermediate checkpoint every this many iterations (0 = never).
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub policy: PolicyInit,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            robot: "humanoid".into(),
            mode: PolicyKind::Demos,
            seed: 0,
            checkpoint_every: 50,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyInit::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| DemosError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DemosError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if !(self.analysis.eta >= 0.0) || !(self.analysis.eta_prime >= 0.0) {
            return Err(DemosError::Config("pruning thresholds must be >= 0".into()));
        }
        if self.analysis.batch_size() == 0 || self.analysis.eval_episodes == 0 {
            return Err(DemosError::Config("analysis batch and eval_episodes must be positive".into()));
        }
        Ok(())
    }
}
