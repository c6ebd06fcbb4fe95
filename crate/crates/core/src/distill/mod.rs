//! One-step student generator and the teacher-feature drifting loop.

mod config;
mod eval;
mod generator;
mod positives;
mod train;

pub use config::{PositiveSource, TrainConfig};
pub use eval::{balanced_labels, diversity_features, evaluate_student, EvalReport, COVERAGE_RADIUS, MMD_BANDWIDTHS};
pub use generator::{init_student_from_teacher, sample, sample_labeled, GeneratorNet};
pub use positives::{build_positive_set, PositiveSet, Provenance};
pub use train::{distill, DistillHooks, Distiller, LossGraph, NoHooks, StepBatch, StepReport};
