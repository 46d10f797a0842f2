#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod demos;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod kinematics;
pub mod nn;
pub mod training;

pub use checkpoint::{Checkpoint, EvalRecord};
pub use error::{DemosError, Result};
