use super::generator::{sample_labeled, GeneratorNet};
use crate::datasets::{sample_batch, Family, SyntheticSpec};
use crate::error::Result;
use crate::metrics::{gaussian_frechet, max_pairwise_similarity, mmd_squared, mode_coverage, CoverageSummary, MetricLog};
use crate::numerics::Tensor;
use crate::rng::SeedStream;
use crate::teacher::{extract_feature_values, DenoiserNet, FeatureSpec};

/// Kernel bandwidths of the MMD statistic.
pub const MMD_BANDWIDTHS: [f64; 3] = [0.1, 0.5, 2.0];

/// Within-mode radius, in component standard deviations.
pub const COVERAGE_RADIUS: f64 = 3.0;

const DIVERSITY_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frechet: f64,
    pub mmd: f64,
    /// Present for ring mixtures only.
    pub coverage: Option<CoverageSummary>,
    pub max_pairwise_similarity: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn push_to(&self, log: &mut MetricLog, step: usize) {
        log.push(step, "eval/frechet", self.frechet);
        log.push(step, "eval/mmd", self.mmd);
        if let Some(c) = &self.coverage {
            log.push(step, "eval/modes_hit", c.modes_hit as f64);
            log.push(step, "eval/high_quality_fraction", c.high_quality_fraction);
        }
        log.push(step, "eval/max_pairwise_similarity", self.max_pairwise_similarity);
    }
}

/// `i mod K` for `i < n`: per-class counts differ by at most one.
pub fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % classes).collect()
}

/// Clean teacher features of `points`, layers concatenated and scaled so
/// each row has unit norm.
pub fn diversity_features(teacher: &DenoiserNet, points: &Tensor, labels: &[usize], fs: &FeatureSpec) -> Result<Tensor> {
    let clean = FeatureSpec {
        sigma_tf: 0.0,
        ..fs.clone()
    };
    let per_layer = extract_feature_values(teacher, points, labels, &clean, &mut SeedStream::new(0))?;
    let scale = 1.0 / (per_layer.len() as f64).sqrt();
    let n = points.rows();
    let width: usize = per_layer.values().map(Tensor::cols).sum();
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        for f in per_layer.values() {
            data.extend(f.row(i).iter().map(|v| v * scale));
        }
    }
    Tensor::matrix(n, width, data)
}

/// Draws `n` balanced-condition samples from the student and compares them
/// against `n` held-out real samples.
pub fn evaluate_student(
    student: &GeneratorNet,
    teacher: &DenoiserNet,
    spec: &SyntheticSpec,
    fs: &FeatureSpec,
    n: usize,
    seed: &SeedStream,
) -> Result<EvalReport> {
    let labels = balanced_labels(n, spec.num_classes());
    let generated = sample_labeled(student, &labels, &mut seed.derive("eval-noise", 0))?;
    let real = sample_batch(spec, n, &mut seed.derive("eval-real", 0), None)?;
    let frechet = gaussian_frechet(&generated.points, &real.points)?;
    let mmd = mmd_squared(&generated.points, &real.points, &MMD_BANDWIDTHS)?;
    let feats = diversity_features(teacher, &generated.points, &labels, fs)?;
    let coverage = match spec.family {
        Family::GaussianMixtureRing { .. } => Some(mode_coverage(
            &generated.points,
            spec,
            COVERAGE_RADIUS,
            Some((&feats, &labels)),
        )?),
        _ => None,
    };
    let diversity = match &coverage {
        Some(c) => c.max_pairwise_similarity,
        None => max_pairwise_similarity(&feats, &labels, DIVERSITY_CAP),
    };
    Ok(EvalReport {
        frechet,
        mmd,
        coverage,
        max_pairwise_similarity: diversity,
        samples: n,
    })
}
