mod compose;
mod connection;
mod mask;
mod objective;
mod policy;

pub use compose::compose;
pub use connection::{
    apply_branch_decoupling, apply_motor_decoupling, connection_matrix, ConnectionMatrix, DecoupleReport,
};
pub use mask::{DecouplingMask, MaskEdit};
pub use objective::{decentralization_loss, decentralization_penalty, decentralization_penalty_grad};
pub use policy::{make_baseline, ActOutput, DecentralizedPolicy, PolicyInit, PolicyKind, ScriptedController};
