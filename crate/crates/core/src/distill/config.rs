use serde::{Deserialize, Serialize};

use crate::anchor::SupportNormalizer;
use crate::error::{Result, TfdError};

/// Where the positives of each condition group come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSource {
    RealOnly,
    TeacherOnly,
    /// Real points first, teacher samples for the missing slots.
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_anchor: f64,
    pub alpha: f64,
    /// Multiplier on the median-distance bandwidth heuristic.
    pub coverage_temperature: f64,
    #[serde(default)]
    pub support_normalizer: SupportNormalizer,
    pub conditions_per_step: usize,
    pub generated_per_condition: usize,
    pub positives_per_condition: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub clip_max_norm: f64,
    pub total_steps: usize,
    pub positive_source: PositiveSource,
    /// Cap on condition-matched real points per group; `None` means
    /// `positives_per_condition`. Lower values exercise the teacher fills.
    #[serde(default)]
    pub real_per_condition: Option<usize>,
    pub teacher_sampling_steps: usize,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub eval_interval: usize,
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_anchor: 1.0,
            alpha: 0.5,
            coverage_temperature: 1.0,
            support_normalizer: SupportNormalizer::Anchors,
            conditions_per_step: 8,
            generated_per_condition: 4,
            positives_per_condition: 4,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_steps: 100,
            clip_max_norm: 10.0,
            total_steps: 5000,
            positive_source: PositiveSource::RealOnly,
            real_per_condition: None,
            teacher_sampling_steps: 20,
            log_interval: 50,
            checkpoint_interval: 500,
            eval_interval: 250,
            eval_samples: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("conditions_per_step", self.conditions_per_step),
            ("generated_per_condition", self.generated_per_condition),
            ("positives_per_condition", self.positives_per_condition),
            ("teacher_sampling_steps", self.teacher_sampling_steps),
            ("log_interval", self.log_interval),
            ("checkpoint_interval", self.checkpoint_interval),
            ("eval_interval", self.eval_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TfdError::Config(format!("train.{name} must be positive")));
            }
        }
        if self.positives_per_condition < 2 && self.lambda_anchor != 0.0 {
            return Err(TfdError::Config("anchor self-support needs positives_per_condition ≥ 2".into()));
        }
        if self.positive_source == PositiveSource::RealOnly
            && self.real_per_condition.is_some_and(|r| r < self.positives_per_condition)
        {
            return Err(TfdError::Config(
                "real_only positives need real_per_condition ≥ positives_per_condition".into(),
            ));
        }
        if self.eval_samples <= 2 {
            return Err(TfdError::Config("train.eval_samples must exceed the sample dimension".into()));
        }
        let nonneg = [
            ("lambda_anchor", self.lambda_anchor),
            ("alpha", self.alpha),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(TfdError::Config(format!("train.{name} must be ≥ 0")));
            }
        }
        for (name, v) in [
            ("lr", self.lr),
            ("clip_max_norm", self.clip_max_norm),
            ("coverage_temperature", self.coverage_temperature),
        ] {
            if !(v > 0.0) {
                return Err(TfdError::Config(format!("train.{name} must be positive")));
            }
        }
        if self.total_steps > 0 && self.warmup_steps > self.total_steps {
            return Err(TfdError::Config("train.warmup_steps exceeds total_steps".into()));
        }
        Ok(())
    }
}
