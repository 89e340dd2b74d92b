//! Dense float64 tensors, a reverse-mode tape, and the pieces needed to
//! train small multilayer perceptrons.

mod gradcheck;
mod mlp;
mod optim;
pub mod rng;
pub mod snapshot;
mod tape;
mod tensor;

pub use gradcheck::gradcheck;
pub use mlp::{Linear, Mlp, MlpSpec};
pub use optim::{clip_grad_norm, sgd_step, sgd_update};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
