//! Dense 2-D tensors, a recording tape for reverse-mode gradients, and optimizers.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{analytic_grads, compare_gradients, gradcheck, GradcheckReport, REL_FLOOR};
pub use optim::{Adam, Optimizer, Sgd};
pub use tape::{sigmoid, Grads, Tape, Var};
pub use tensor::Tensor;
