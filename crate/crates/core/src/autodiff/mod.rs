//! Reverse-mode differentiation for the operators used by the model,
//! with an analytic NeoCell rule and a finite-difference checker.

pub mod fdcheck;
pub mod neocell_grad;
pub mod params;
pub mod suite;
pub mod tape;

pub use fdcheck::{fd_check, relative_error, FdConfig, FdEntry, FdReport};
pub use neocell_grad::{neocell_backward, NeoCellGrads};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use suite::{standard_suite, GradCase};
pub use tape::{NeoCellPath, NodeId, Tape};
