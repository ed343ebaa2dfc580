//! Minimal NCHW tensor and layer set with explicit backward passes.

mod float;
mod layers;
mod tensor;

pub use float::Float;
pub use layers::{
    gap_backward, gap_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_inplace,
    softmax_rows, BatchNorm2d, BnCache, Conv2d, Dropout, Linear, Param,
};
pub use tensor::Tensor;
