//! Residual U-Net: tensors, layers, the network graph and checkpoints.

pub mod checkpoint;
mod gemm;
pub mod layers;
mod param;
mod resunet;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use param::{Buffer, Param, ParamKind};
pub use resunet::{build_network, NetworkConfig, ResUNet, UpsampleMode};
pub use tensor::{IndexBatch, Tensor4};
