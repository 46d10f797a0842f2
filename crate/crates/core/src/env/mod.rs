mod config;
mod layout;
mod reward;
mod trace;
mod world;

pub use config::{EnvConfig, RewardWeights, SwingTask, PD_HZ};
pub use layout::{ObservationLayout, ROOT_DIM};
pub use reward::{clock_phase, reward_terms, RewardTerms, TaskRoles, GAIT_OFFSETS};
pub use trace::{EpisodeTrace, TraceRow};
pub use world::{
    pd_torque, BranchWorld, Disturbance, JointParams, MalfunctionKind, MalfunctionSpec, StepResult, FAILURE_REWARD,
};
