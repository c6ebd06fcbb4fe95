//! Teacher-feature drifting: distill a one-step generator from a toy
//! diffusion denoiser by running a kernel attraction/repulsion field in the
//! teacher's hidden-feature space, with an anchor-margin coverage term.

pub mod anchor;
pub mod datasets;
pub mod distill;
pub mod drift;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod teacher;

pub use error::{Result, TfdError};
pub use numerics::{Tape, Tensor, Var};
pub use rng::SeedStream;
