//! Minimal reverse-mode autodiff over rank-2 tensors, generic over `f32`
//! (training) and `f64` (gradient certification).

pub mod attention;
pub mod engine;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod linalg;
pub mod optim;
mod scalar;
mod tensor;

pub use attention::{attention, scaled_dot_attention};
pub use engine::{Engine, ExportedParam, Mask, Parameter, Var};
pub use gradcheck::{gradient_check, gradient_check_in, GradCheckReport};
pub use layers::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;
