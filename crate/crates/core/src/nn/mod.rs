//! Model building blocks: stem rearrangement, pointwise mixing, batch
//! normalization, GELU, pooling, stochastic depth, loss, and the model
//! builder.

pub mod loss;
pub mod model;
pub mod ops;

pub use loss::{smooth_targets, softmax_cross_entropy};
pub use model::{
    stage_neocell_spec, BlockSpec, Forward, GroupKind, InitMethod, Mode, Model, ModelSpec,
};
pub use ops::{
    batchnorm_forward, depth_to_space, drop_path_scales, gelu, global_avg_pool, pointwise_conv,
    space_to_depth, BatchMoments, BatchNormStats, NormMode,
};
