//! NeoCell: patch-wise left/right matrix multiplication as a drop-in
//! replacement for depthwise convolution, together with its
//! block-diagonal formulation, NeoInit, analytic gradients, the
//! NeoNeXt building blocks and a small CPU training harness.

pub mod autodiff;
pub mod bench;
pub mod count;
pub mod data;
pub mod error;
pub mod neocell;
pub mod neoinit;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use neocell::{GroupSpec, NeoCellParams, NeoCellSpec};
pub use rng::Rng;
pub use tensor::{matmul, roll2d, Matrix, Tensor4};
