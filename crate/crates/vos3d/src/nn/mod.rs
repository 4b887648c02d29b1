//! Minimal neural-network layer zoo: 3D convolutions, per-channel
//! normalization, pooling, interpolation, and explicit backward passes.

pub mod conv;
pub mod init;
pub mod norm;
pub mod ops;
pub mod param;


pub use conv::{Conv3d, ConvGeometry, Feat};
pub use norm::{BatchNorm3d, BnCache};
pub use param::{
    count_parameters, named_buffers, named_buffers_mut, named_params, named_params_mut,
    zero_grads, Param, ParamSet,
};
