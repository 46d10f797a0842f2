use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::config::{EnvConfig, SwingTask};

/// Motor roles used by the reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRoles {
    /// Branch ids of the coordinated pair `(b_L, b_R)`.
    pub pair: [usize; 2],
    /// First motor of each coordinated branch (the hips).
    pub hips: [usize; 2],
    /// `(branch id, first motor)` of every other branch with motors.
    pub swing: Vec<(usize, usize)>,
}

/// Per-step reward split by term. Penalties are stored with their sign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub balance: f64,
    pub gait: f64,
    pub swing: f64,
    pub action: f64,
    pub action_rate: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.balance + self.gait + self.swing + self.action + self.action_rate
    }

    /// Terms owned by the coordinated legs.
    pub fn legs(&self) -> f64 {
        self.balance + self.gait
    }

    pub fn add(&mut self, other: &RewardTerms) {
        self.balance += other.balance;
        self.gait += other.gait;
        self.swing += other.swing;
        self.action += other.action;
        self.action_rate += other.action_rate;
    }

    pub fn scaled(&self, s: f64) -> RewardTerms {
        RewardTerms {
            balance: self.balance * s,
            gait: self.gait * s,
            swing: self.swing * s,
            action: self.action * s,
            action_rate: self.action_rate * s,
        }
    }
}

/// Gait phase offsets of the coordinated pair: the legs move in antiphase.
pub const GAIT_OFFSETS: [f64; 2] = [0.0, PI];

pub fn clock_phase(config: &EnvConfig, t: f64) -> f64 {
    2.0 * PI * t / config.clock_period
}

/// Reward for joint positions `q` at time `t` after applying `action`.
pub fn reward_terms(
    config: &EnvConfig,
    roles: &TaskRoles,
    q: &[f64],
    t: f64,
    action: &[f64],
    last_action: &[f64],
) -> RewardTerms {
    let w = &config.weights;
    let phase = clock_phase(config, t);
    let a = config.amplitude;
    let [l, r] = roles.hips;
    let b = q[l] + q[r];
    let balance = w.balance * (-b * b).exp();
    let gait = w.gait
        * roles
            .hips
            .iter()
            .zip(GAIT_OFFSETS)
            .map(|(&m, off)| {
                let e = q[m] - a * (phase + off).sin();
                (-e * e).exp()
            })
            .sum::<f64>();
    let swing_target = match config.swing_task {
        SwingTask::Swing => a * phase.sin(),
        SwingTask::Hold { angle } => angle,
    };
    let swing = w.swing
        * roles
            .swing
            .iter()
            .map(|&(_, m)| {
                let e = q[m] - swing_target;
                (-e * e).exp()
            })
            .sum::<f64>();
    let action_sq: f64 = action.iter().map(|v| v * v).sum();
    let rate_sq: f64 = action.iter().zip(last_action).map(|(x, y)| (x - y) * (x - y)).sum();
    RewardTerms { balance, gait, swing, action: -w.action * action_sq, action_rate: -w.action_rate * rate_sq }
}
