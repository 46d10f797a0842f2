//! A small dense-network engine: batched forward/backward passes, a
//! state-independent diagonal Gaussian head, and AdamW.

mod gaussian;
mod mlp;
mod optim;

pub use gaussian::{GaussianHead, LOG_2PI};
pub use mlp::{elu, elu_grad, Dense, Mlp, MlpCache, MlpGrads};
pub use optim::{AdamW, StepOutcome};
