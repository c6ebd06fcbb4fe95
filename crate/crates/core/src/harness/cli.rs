use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::ablate::{run_ablation, GridSpec};
use super::config::RunConfig;
use super::run::{run_distill, run_eval, run_sample, run_train_teacher, RunPaths};
use crate::error::{Result, TfdError};

#[derive(Debug, Parser)]
#[command(name = "tfd", version, about = "Teacher-feature drifting: one-step distillation on toy distributions")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.lambda_anchor=0`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoiser teacher.
    TrainTeacher,
    /// Distill a one-step student from a trained teacher.
    Distill {
        /// Teacher checkpoint; defaults to `<out>/teacher.ckpt`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Continue from `<out>/student.ckpt`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a student against held-out real samples.
    Eval {
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Number of samples; defaults to `eval.samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run a grid of config overrides and tabulate budgeted-best metrics.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Draw one-step samples from a student.
    Sample {
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Class to sample; balanced over classes when omitted.
        #[arg(long)]
        condition: Option<usize>,
    },
}

impl Cli {
    /// Base config with `--seed`, `--out` and every `--override` applied.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if !self.overrides.is_empty() {
            cfg = cfg.with_overrides(&self.overrides)?;
        }
        Ok(cfg)
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = cli.resolve_config()?;
    let paths = RunPaths::new(&cfg.out);
    let io = |e: std::io::Error| TfdError::Io(e);
    match &cli.command {
        Command::TrainTeacher => {
            let out = run_train_teacher(&cfg)?;
            let trace = &out.loss_trace;
            let k = (trace.len() / 10).max(1);
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
            writeln!(
                stdout,
                "teacher: {} steps, loss {:.6} (first {k}) -> {:.6} (last {k}), checksum {}",
                trace.len(),
                mean(&trace[..k.min(trace.len())]),
                mean(&trace[trace.len().saturating_sub(k)..]),
                out.net.checksum()
            )
            .map_err(io)?;
            writeln!(stdout, "wrote {}", paths.teacher().display()).map_err(io)?;
        }
        Command::Distill { teacher, resume } => {
            let teacher = teacher.clone().unwrap_or_else(|| paths.teacher());
            let out = run_distill(&cfg, &teacher, *resume)?;
            for name in ["loss/total", "eval/frechet", "eval/modes_hit", "eval/max_pairwise_similarity"] {
                if let Some(v) = out.log.last(name) {
                    writeln!(stdout, "{name} = {v}").map_err(io)?;
                }
            }
            writeln!(stdout, "wrote {} and {}", paths.student().display(), paths.metrics().display()).map_err(io)?;
        }
        Command::Eval {
            student,
            teacher,
            samples,
        } => {
            let student = student.clone().unwrap_or_else(|| paths.student());
            let teacher = teacher.clone().unwrap_or_else(|| paths.teacher());
            let r = run_eval(&cfg, &student, &teacher, samples.unwrap_or(cfg.eval.samples))?;
            writeln!(stdout, "gaussian_frechet = {}", r.frechet).map_err(io)?;
            writeln!(stdout, "mmd_squared = {}", r.mmd).map_err(io)?;
            if let Some(c) = &r.coverage {
                writeln!(stdout, "modes_hit = {}", c.modes_hit).map_err(io)?;
                writeln!(stdout, "high_quality_fraction = {}", c.high_quality_fraction).map_err(io)?;
            }
            writeln!(stdout, "max_pairwise_similarity = {}", r.max_pairwise_similarity).map_err(io)?;
        }
        Command::Ablate { grid } => {
            let spec = GridSpec::load(grid)?;
            let table = run_ablation(&cfg, &spec)?;
            write!(stdout, "{}", table.to_csv()).map_err(io)?;
            if table.duplicates > 0 {
                writeln!(stdout, "skipped {} duplicate cells", table.duplicates).map_err(io)?;
            }
        }
        Command::Sample {
            student,
            n,
            condition,
        } => {
            let student = student.clone().unwrap_or_else(|| paths.student());
            let batch = run_sample(&cfg, &student, *n, *condition)?;
            writeln!(stdout, "wrote {} samples to {}", batch.len(), paths.samples().display()).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
