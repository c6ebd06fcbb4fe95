//! Run configuration, manifests, ablation grids and the command line.

mod ablate;
mod cli;
mod config;
mod run;

pub use ablate::{run_ablation, AblationRow, AblationTable, Axis, GridSpec};
pub use cli::{run_cli, Cli, Command};
pub use config::{deviations, reference_defaults, Deviation, EvalSection, RunConfig, TeacherSection};
pub use run::{
    load_student, load_teacher, run_distill, run_eval, run_sample, run_train_teacher, write_atomic, DistillOutcome,
    RunManifest, RunPaths, TeacherOutcome,
};
