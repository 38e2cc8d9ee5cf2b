//! Numeric substrate: dense tensors, a reverse-mode tape, transformer
//! layers, loss primitives, AdamW and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod layers;
pub mod loss;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, NodeId, LAYER_NORM_EPS};
pub use layers::{transformer_encode, Linear, Norm, Transformer, TransformerConfig};
pub use loss::{kl_divergence, softmax_xent};
pub use optim::{optimizer_step, AdamW};
pub use params::{Gradients, ParamId, ParameterStore, INIT_STD};
pub use tensor::Tensor;
