//! Dense `f64` arrays with reverse-mode differentiation, plus the
//! optimizer utilities the training loops share.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use optim::{clip_global_norm, global_norm, warmup_lr, AdamW};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::euclidean;
