//! Dense sequence models with a softmax head.
//!
//! Three architectures share one parameter container: an LSTM, a tanh RNN and
//! a stateless one-hidden-layer network. All arithmetic is `f64`, batch size
//! one. Gradients are returned as a [`ModelParams`] with the same layout as the
//! parameters they differentiate.

mod adadelta;
mod backprop;
mod checkpoint;
mod model;

pub use adadelta::{AdaDeltaState, Direction};
pub use backprop::backward_sequence;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    forward_sequence, forward_step, init_model, softmax, ModelKind, ModelParams, ModelState, Tensor,
};
