//! Frozen toy diffusion teacher: the noise-conditioned denoiser, its
//! training loop, noised hidden-state features and checkpoints.

mod checkpoint;
mod features;
mod net;
mod train;

pub use checkpoint::{Checkpoint, CheckpointKind, MAGIC};
pub use features::{average_pool, extract_feature_values, extract_features, FeatureSpec};
pub use net::{Architecture, DenoiserNet, Depth, ForwardPass, NoiseSchedule};
pub use train::{train_teacher, TeacherTrainConfig, TrainedTeacher};
