use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{deviations, Deviation, RunConfig};
use crate::datasets::LabeledBatch;
use crate::distill::{balanced_labels, evaluate_student, sample, sample_labeled, DistillHooks, Distiller, EvalReport, GeneratorNet};
use crate::error::{Result, TfdError};
use crate::metrics::{MetricLog, CSV_HEADER};
use crate::rng::SeedStream;
use crate::teacher::{train_teacher, Checkpoint, CheckpointKind, DenoiserNet, MAGIC};

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher.ckpt")
    }

    pub fn teacher_loss(&self) -> PathBuf {
        self.root.join("teacher_loss.csv")
    }

    pub fn student(&self) -> PathBuf {
        self.root.join("student.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.json"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub versions: BTreeMap<String, String>,
    pub deviations: Vec<Deviation>,
    pub final_metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<BTreeMap<String, Value>>,
}

pub(crate) fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("tfd".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("checkpoint_format".to_string(), String::from_utf8_lossy(MAGIC).into_owned()),
        ("metrics_format".to_string(), CSV_HEADER.to_string()),
    ])
}

/// Writes `bytes` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, started_unix: f64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            started_unix,
            finished_unix: started_unix,
            versions: versions(),
            deviations: deviations(cfg),
            final_metrics: BTreeMap::new(),
            ablation: None,
        }
    }

    pub fn write(mut self, path: &Path) -> Result<Self> {
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(&self).map_err(|e| TfdError::Format(e.to_string()))?;
        write_atomic(path, text.as_bytes())?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TfdError::Format(format!("{}: {e}", path.display())))
    }
}

pub struct TeacherOutcome {
    pub net: DenoiserNet,
    pub loss_trace: Vec<f64>,
    pub manifest: RunManifest,
}

/// Trains the teacher of `cfg` and writes its checkpoint, loss trace and
/// manifest under `cfg.out`.
pub fn run_train_teacher(cfg: &RunConfig) -> Result<TeacherOutcome> {
    let started = now_unix();
    let paths = RunPaths::new(&cfg.out);
    let root = SeedStream::new(cfg.seed);
    let net = DenoiserNet::new(cfg.architecture(), cfg.teacher.schedule, &mut root.derive("teacher-init", 0))?;
    let trained = train_teacher(&cfg.dataset, net, &cfg.teacher.train, &root.derive("teacher", 0))?;
    let ck = Checkpoint {
        kind: CheckpointKind::Teacher,
        net: trained.net.clone(),
        input_sigma: 0.0,
        spec_hash: cfg.teacher_hash_bytes(),
        step: trained.loss_trace.len() as u64,
        extra: Vec::new(),
    };
    std::fs::create_dir_all(&paths.root)?;
    ck.save(&paths.teacher())?;
    let mut log = MetricLog::new();
    for (i, v) in trained.loss_trace.iter().enumerate() {
        log.push(i + 1, "teacher/loss", *v);
    }
    write_atomic(&paths.teacher_loss(), log.to_csv().as_bytes())?;
    let mut manifest = RunManifest::new("train-teacher", cfg, started);
    if let Some(&last) = trained.loss_trace.last() {
        manifest.final_metrics.insert("teacher/loss".into(), last);
    }
    manifest.final_metrics.insert("teacher/steps".into(), trained.loss_trace.len() as f64);
    let manifest = manifest.write(&paths.manifest("train-teacher"))?;
    Ok(TeacherOutcome {
        net: trained.net,
        loss_trace: trained.loss_trace,
        manifest,
    })
}

/// Loads a teacher checkpoint and checks it against the configured shape.
pub fn load_teacher(path: &Path, cfg: &RunConfig) -> Result<DenoiserNet> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != CheckpointKind::Teacher {
        return Err(TfdError::Format(format!("{} is not a teacher checkpoint", path.display())));
    }
    if ck.net.arch() != &cfg.architecture() || ck.net.schedule() != cfg.teacher.schedule {
        return Err(TfdError::Format(format!(
            "{}: checkpoint header {:?} does not match the configured teacher {:?}",
            path.display(),
            ck.net.arch(),
            cfg.architecture()
        )));
    }
    Ok(ck.net)
}

/// Loads a student checkpoint and checks it against the configured shape.
pub fn load_student(path: &Path, cfg: &RunConfig) -> Result<(GeneratorNet, u64)> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != CheckpointKind::Student {
        return Err(TfdError::Format(format!("{} is not a student checkpoint", path.display())));
    }
    if ck.net.arch() != &cfg.architecture() {
        return Err(TfdError::Format(format!(
            "{}: checkpoint header {:?} does not match the configured architecture",
            path.display(),
            ck.net.arch()
        )));
    }
    Ok((GeneratorNet::new(ck.net, ck.input_sigma)?, ck.step))
}

struct FileHooks {
    metrics: PathBuf,
    student: PathBuf,
    hash: [u8; 32],
}

impl DistillHooks for FileHooks {
    fn on_metrics(&mut self, log: &MetricLog, from: usize) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.metrics)?;
        f.write_all(log.csv_rows(from).as_bytes())?;
        Ok(())
    }

    fn on_checkpoint(&mut self, d: &Distiller<'_>) -> Result<()> {
        d.checkpoint(self.hash).save(&self.student)
    }
}

pub struct DistillOutcome {
    pub student: GeneratorNet,
    pub log: MetricLog,
    pub manifest: RunManifest,
}

/// Distills a student from the teacher at `teacher_path`. With `resume`,
/// continues from the student checkpoint in `cfg.out` and drops metric
/// rows written after it.
pub fn run_distill(cfg: &RunConfig, teacher_path: &Path, resume: bool) -> Result<DistillOutcome> {
    run_distill_tagged(cfg, teacher_path, resume, None)
}

pub(crate) fn run_distill_tagged(
    cfg: &RunConfig,
    teacher_path: &Path,
    resume: bool,
    ablation: Option<BTreeMap<String, Value>>,
) -> Result<DistillOutcome> {
    let started = now_unix();
    let paths = RunPaths::new(&cfg.out);
    std::fs::create_dir_all(&paths.root)?;
    let teacher = load_teacher(teacher_path, cfg)?;
    let checksum = teacher.checksum();
    let seed = SeedStream::new(cfg.seed).derive("distill", 0);
    let hash = cfg.resume_hash_bytes();
    let build = |ck: Option<&Checkpoint>| match ck {
        Some(ck) => Distiller::resume(
            &teacher,
            cfg.dataset.clone(),
            cfg.features.clone(),
            cfg.drift.clone(),
            cfg.train.clone(),
            &seed,
            ck,
        ),
        None => Distiller::new(
            &teacher,
            cfg.dataset.clone(),
            cfg.features.clone(),
            cfg.drift.clone(),
            cfg.train.clone(),
            &seed,
        ),
    };
    let (mut distiller, mut log) = if resume {
        let ck = Checkpoint::load(&paths.student())?;
        if ck.spec_hash != hash {
            return Err(TfdError::Format(format!(
                "{}: checkpoint was written under a different configuration",
                paths.student().display()
            )));
        }
        let text = std::fs::read_to_string(paths.metrics())?;
        let mut log = MetricLog::from_csv(&text)?;
        log.truncate_after(ck.step as usize);
        write_atomic(&paths.metrics(), log.to_csv().as_bytes())?;
        (build(Some(&ck))?, log)
    } else {
        write_atomic(&paths.metrics(), format!("{CSV_HEADER}\n").as_bytes())?;
        (build(None)?, MetricLog::new())
    };
    let mut hooks = FileHooks {
        metrics: paths.metrics(),
        student: paths.student(),
        hash,
    };
    distiller.run(&mut log, &mut hooks)?;
    if distiller.step() == 0 {
        hooks.on_checkpoint(&distiller)?;
    }
    if teacher.checksum() != checksum {
        return Err(TfdError::contract("teacher parameters changed during distillation"));
    }
    let mut manifest = RunManifest::new("distill", cfg, started);
    manifest.ablation = ablation;
    for r in log.records() {
        manifest.final_metrics.insert(r.name.clone(), r.value);
    }
    if let Some(h) = distiller.bandwidth() {
        manifest.final_metrics.insert("anchor/bandwidth".into(), h);
    }
    let manifest = manifest.write(&paths.manifest("distill"))?;
    Ok(DistillOutcome {
        student: distiller.into_student(),
        log,
        manifest,
    })
}

/// Scores a student checkpoint; writes `eval.csv` and a manifest.
pub fn run_eval(cfg: &RunConfig, student_path: &Path, teacher_path: &Path, samples: usize) -> Result<EvalReport> {
    let started = now_unix();
    let paths = RunPaths::new(&cfg.out);
    let teacher = load_teacher(teacher_path, cfg)?;
    let (student, step) = load_student(student_path, cfg)?;
    let seed = SeedStream::new(cfg.seed).derive("final-eval", 0);
    let report = evaluate_student(&student, &teacher, &cfg.dataset, &cfg.features, samples, &seed)?;
    let mut log = MetricLog::new();
    report.push_to(&mut log, step as usize);
    write_atomic(&paths.eval(), log.to_csv().as_bytes())?;
    let mut manifest = RunManifest::new("eval", cfg, started);
    for r in log.records() {
        manifest.final_metrics.insert(r.name.clone(), r.value);
    }
    manifest.final_metrics.insert("eval/samples".into(), samples as f64);
    manifest.write(&paths.manifest("eval"))?;
    Ok(report)
}

/// Draws `n` one-step samples, of one class or balanced over classes, and
/// writes them as `x0,...,label` rows.
pub fn run_sample(cfg: &RunConfig, student_path: &Path, n: usize, condition: Option<usize>) -> Result<LabeledBatch> {
    let paths = RunPaths::new(&cfg.out);
    let (student, _) = load_student(student_path, cfg)?;
    let k = cfg.dataset.num_classes();
    let mut seed = SeedStream::new(cfg.seed).derive("sample", 0);
    let batch = match condition {
        Some(c) if c >= k => return Err(TfdError::Config(format!("condition {c} out of range for {k} classes"))),
        Some(c) => sample(&student, n, c, &mut seed)?,
        None => sample_labeled(&student, &balanced_labels(n, k), &mut seed)?,
    };
    let d = cfg.dataset.dimension;
    let mut text: String = (0..d).map(|i| format!("x{i},")).collect();
    text.push_str("label\n");
    for i in 0..batch.len() {
        for v in batch.points.row(i) {
            text.push_str(&format!("{v},"));
        }
        text.push_str(&format!("{}\n", batch.labels[i]));
    }
    write_atomic(&paths.samples(), text.as_bytes())?;
    Ok(batch)
}
