//! Dense tensors with reverse-mode automatic differentiation, the layer set
//! used by the lesion classifier and the GAN pair, their losses, and the
//! SGD-Nesterov and Adam optimizers.

pub mod checkpoint;
mod conv;
mod element;
mod error;
pub mod gradcheck;
mod graph;
pub mod loss;
mod norm;
pub mod optim;
mod tensor;

pub use checkpoint::NamedTensor;
pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{Graph, Var};
pub use loss::{gan_bce_losses, AcganHeads, Target, PROB_EPS};
pub use norm::{BatchNormConfig, NormMode, RunningStats};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;
