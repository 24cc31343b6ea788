//! Dense tensors, the reverse-mode tape, Adam, and gradient checking.

mod adam;
mod grad_check;
mod layers;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use grad_check::{grad_check, relative_error, BlockReport, GradCheckOptions, GradCheckReport};
pub use layers::{transformer_encoder_layer, DenseVars, EncoderLayerVars, FfnVars};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

