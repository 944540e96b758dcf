//! Convolutional position-correction networks built from scratch.

mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod network;
pub mod tensor;
pub mod train;

pub use gradcheck::{grad_check, grad_check_with, Coverage, GradCheckReport};
pub use layers::{conv_forward, fc_forward, maxpool_forward, relu, Pooled};
pub use model::{ChannelStats, Model, Normalization, FORMAT_VERSION};
pub use network::{
    build_variant, LayerSpec, Network, NetworkSpec, Param, Shape, Variant, INPUT_CHANNELS, OUTPUT_DIM,
};
pub use tensor::Tensor;
pub use train::{train, Optimizer, Sample, TrainConfig};
