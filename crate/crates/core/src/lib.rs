//! Via-point skill models with GP interpolation and task-conditioned adaptation.

pub mod adapt;
pub mod bc;
pub mod envs;
pub mod eval;
pub mod error;
pub mod gp;
pub mod gprl;
pub mod lsq;
pub mod metrics;
pub mod nn;
pub mod signature;
pub mod skill;
pub mod so3;

pub use error::{Error, Result};
