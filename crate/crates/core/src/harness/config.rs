use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datasets::SyntheticSpec;
use crate::distill::TrainConfig;
use crate::drift::DriftConfig;
use crate::error::{Result, TfdError};
use crate::teacher::{Architecture, FeatureSpec, NoiseSchedule, TeacherTrainConfig};

/// Teacher shape, noise range and training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub widths: Vec<usize>,
    pub embed_freqs: usize,
    pub schedule: NoiseSchedule,
    pub train: TeacherTrainConfig,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            widths: vec![128; 6],
            embed_freqs: 6,
            schedule: NoiseSchedule::default(),
            train: TeacherTrainConfig::default(),
        }
    }
}

/// Final evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Samples drawn by `eval`, spread evenly over classes.
    pub samples: usize,
    /// Update budgets reported by `ablate`.
    pub budgets: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: 4000,
            budgets: vec![1000, 2500, 5000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: SyntheticSpec,
    pub teacher: TeacherSection,
    pub features: FeatureSpec,
    pub drift: DriftConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticSpec::default(),
            teacher: TeacherSection::default(),
            features: FeatureSpec::default(),
            drift: DriftConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            seed: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_bytes(hex: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hex digest");
    }
    out
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TfdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            TfdError::Config(msg) => TfdError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            dim: self.dataset.dimension,
            num_classes: self.dataset.num_classes(),
            widths: self.teacher.widths.clone(),
            embed_freqs: self.teacher.embed_freqs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: TfdError| match e {
            TfdError::Config(m) => TfdError::Config(m),
            other => TfdError::Config(other.to_string()),
        };
        self.dataset.validate().map_err(wrap)?;
        self.architecture().validate().map_err(wrap)?;
        self.teacher.schedule.validate().map_err(wrap)?;
        let t = &self.teacher.train;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            return Err(TfdError::Config("teacher.train needs batch_size ≥ 1 and lr > 0".into()));
        }
        self.drift.validate().map_err(wrap)?;
        self.train.validate()?;
        let fs = &self.features;
        let widths = &self.teacher.widths;
        if fs.layers.is_empty() || fs.layers.iter().any(|&l| l == 0 || l > widths.len()) {
            return Err(TfdError::Config(format!(
                "features.layers must lie in 1..={}",
                widths.len()
            )));
        }
        if self.eval.samples <= self.dataset.dimension {
            return Err(TfdError::Config("eval.samples must exceed the data dimension".into()));
        }
        if self.eval.budgets.is_empty() {
            return Err(TfdError::Config("eval.budgets is empty".into()));
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys, no whitespace) without `out`.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("out");
        }
        v.to_string()
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Hash of the parts that determine the teacher.
    pub fn teacher_hash(&self) -> String {
        let v = serde_json::json!({
            "dataset": self.dataset,
            "teacher": self.teacher,
            "seed": self.seed,
        });
        sha256_hex(v.to_string().as_bytes())
    }

    pub fn teacher_hash_bytes(&self) -> [u8; 32] {
        hash_bytes(&self.teacher_hash())
    }

    /// Hash stamped into student checkpoints: the config hash with the
    /// step count left out, so a run can be extended on resume.
    pub fn resume_hash_bytes(&self) -> [u8; 32] {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("out");
            if let Some(Value::Object(train)) = map.get_mut("train") {
                train.remove("total_steps");
            }
        }
        hash_bytes(&sha256_hex(v.to_string().as_bytes()))
    }

    /// Applies `key=value` with a dotted key. The value is parsed as JSON,
    /// falling back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        self.with_overrides(&[assignment])
    }

    /// Sets the field at dotted path `key`, which must already exist.
    pub fn with_value(&self, key: &str, value: Value) -> Result<Self> {
        self.with_values(&[(key.to_string(), value)])
    }

    /// Sets several dotted-path fields at once; the result is validated
    /// only after all of them are applied.
    pub fn with_values(&self, assignments: &[(String, Value)]) -> Result<Self> {
        let mut root = serde_json::to_value(self).expect("config serializes");
        for (key, value) in assignments {
            let mut node = &mut root;
            for part in key.split('.') {
                node = match node {
                    Value::Object(map) => map.get_mut(part),
                    Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| TfdError::Config(format!("unknown config key `{key}`")))?;
            }
            *node = value.clone();
        }
        let cfg: Self = serde_json::from_value(root).map_err(|e| TfdError::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `with_override` for a list of `key=value` strings, validated together.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        let parsed = assignments.iter().map(|a| parse_assignment(a.as_ref())).collect::<Result<Vec<_>>>()?;
        self.with_values(&parsed)
    }

    /// Value at dotted path `key`, for reporting.
    pub fn value_at(&self, key: &str) -> Option<Value> {
        let root = serde_json::to_value(self).ok()?;
        let mut node = &root;
        for part in key.split('.') {
            node = match node {
                Value::Object(map) => map.get(part)?,
                Value::Array(items) => items.get(part.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(node.clone())
    }
}

fn parse_assignment(assignment: &str) -> Result<(String, Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| TfdError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// A hyperparameter whose value differs from the published default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub key: String,
    pub reference: Value,
    pub used: Value,
}

/// Published defaults for the class-conditional setting, keyed by config
/// path. Feature and radius defaults follow the text-to-image column where
/// the two columns differ.
pub fn reference_defaults() -> Vec<(&'static str, Value)> {
    use serde_json::json;
    vec![
        ("features.sigma_tf", json!(0.1)),
        ("features.pool_size", json!(4)),
        ("drift.radii", json!([0.02, 0.05, 0.2])),
        ("train.lambda_anchor", json!(1.0)),
        ("train.alpha", json!(0.5)),
        ("train.coverage_temperature", json!(1.0)),
        ("train.generated_per_condition", json!(4)),
        ("train.positives_per_condition", json!(4)),
        ("train.lr", json!(2e-6)),
        ("train.weight_decay", json!(0.01)),
        ("train.warmup_steps", json!(500)),
        ("train.clip_max_norm", json!(10.0)),
        ("train.positive_source", json!("real_only")),
        ("train.teacher_sampling_steps", json!(50)),
    ]
}

pub fn deviations(cfg: &RunConfig) -> Vec<Deviation> {
    reference_defaults()
        .into_iter()
        .filter_map(|(key, reference)| {
            let used = cfg.value_at(key)?;
            (!json_eq(&used, &reference)).then(|| Deviation {
                key: key.to_string(),
                reference,
                used,
            })
        })
        .collect()
}

fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_eq(p, q)),
        _ => a == b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let cfg = RunConfig::default().with_override("drift.radii=[0.03,0.08,0.2]").unwrap();
        let back = RunConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_output_dir_and_formatting() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let compact = serde_json::to_string(&a).unwrap();
        assert_eq!(RunConfig::from_json(&compact).unwrap().hash(), a.hash());
        assert_ne!(a.hash(), a.with_override("seed=1").unwrap().hash());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let cfg = RunConfig::default()
            .with_override("train.lambda_anchor=0")
            .unwrap()
            .with_override("features.layers.0=1")
            .unwrap()
            .with_override("train.positive_source=hybrid")
            .unwrap();
        assert_eq!(cfg.train.lambda_anchor, 0.0);
        assert_eq!(cfg.features.layers, vec![1, 3, 4]);
        assert_eq!(cfg.train.positive_source, crate::distill::PositiveSource::Hybrid);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let cfg = RunConfig::default();
        for o in ["train.nope=1", "train.lr", "train.lr=\"fast\"", "train.lr=-1", "features.layers=[9]"] {
            assert!(matches!(cfg.with_override(o), Err(TfdError::Config(_))), "{o}");
        }
    }

    #[test]
    fn missing_field_is_named() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["train"].as_object_mut().unwrap().remove("alpha");
        let err = RunConfig::from_json(&serde_json::to_string_pretty(&v).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn deviations_list_changed_reference_values() {
        let cfg = RunConfig::default();
        let keys: Vec<String> = deviations(&cfg).into_iter().map(|d| d.key).collect();
        assert!(keys.contains(&"train.lr".to_string()));
        assert!(keys.contains(&"train.warmup_steps".to_string()));
        assert!(!keys.contains(&"train.alpha".to_string()));
        let changed = cfg.with_override("train.alpha=0.25").unwrap();
        let d = deviations(&changed).into_iter().find(|d| d.key == "train.alpha").unwrap();
        assert_eq!(d.used, serde_json::json!(0.25));
    }

    #[test]
    fn resume_hash_ignores_step_count_only() {
        let a = RunConfig::default();
        let b = a.with_override("train.total_steps=1000").unwrap();
        assert_eq!(a.resume_hash_bytes(), b.resume_hash_bytes());
        assert_ne!(a.hash(), b.hash());
        let c = a.with_override("train.lr=0.002").unwrap();
        assert_ne!(a.resume_hash_bytes(), c.resume_hash_bytes());
    }
}
