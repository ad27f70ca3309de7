//! Dense tensors with reverse-mode differentiation.

mod dist;
mod optim;
mod params;
mod tape;
mod tensor;

pub use dist::{gaussian_entropy, gaussian_log_prob, reparam_sample, LOG_STD_MAX, LOG_STD_MIN};
pub use optim::Adam;
pub use params::{BoundParams, ParamStore, MAGIC};
pub use tape::{Axis, Corruption, Gradients, Tape, Var, PRIMITIVE_OPS};
pub use tensor::Tensor;
