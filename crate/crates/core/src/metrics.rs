//! Sample-quality metrics for the toy benchmark and budgeted reporting.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::datasets::{Family, SyntheticSpec};
use crate::error::{Result, TfdError};
use crate::numerics::{euclidean, Tensor};

/// Diagonal jitter added to covariances before square roots.
const JITTER: f64 = 1e-9;

/// One metric observation plus the best (minimum) value seen up to it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub name: String,
    pub value: f64,
    pub budget_best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageSummary {
    pub modes_hit: usize,
    /// Fraction of samples within `radius_mult·std` of their nearest mode.
    pub high_quality_fraction: f64,
    /// Largest `exp(−‖zᵢ − zⱼ‖)` between two samples of the same class,
    /// averaged over classes.
    pub max_pairwise_similarity: f64,
}

fn moments(samples: &Tensor) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = samples.require_matrix("frechet samples")?;
    if n <= d {
        return Err(TfdError::contract(format!(
            "need more samples than dimensions, got {n} ≤ {d}"
        )));
    }
    let x = DMatrix::from_row_slice(n, d, samples.data());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-9 * scale) {
        return Err(TfdError::Numeric(format!(
            "matrix is not positive semidefinite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between `N(μa, Σa)` and `N(μb, Σb)`.
pub fn frechet_from_moments(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean_a.len();
    let jitter = DMatrix::<f64>::identity(d, d) * JITTER;
    let ca = cov_a + &jitter;
    let cb = cov_b + &jitter;
    let root_a = psd_sqrt(&ca)?;
    let inner = &root_a * &cb * &root_a;
    let cross = psd_sqrt(&inner)?.trace();
    let diff = mean_a - mean_b;
    Ok(diff.dot(&diff) + ca.trace() + cb.trace() - 2.0 * cross)
}

/// Fréchet distance between Gaussians fitted to two sample sets.
pub fn gaussian_frechet(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(TfdError::dim(format!("frechet: widths {} vs {}", a.cols(), b.cols())));
    }
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    frechet_from_moments(&ma, &ca, &mb, &cb)
}

/// Biased (V-statistic) squared MMD with a sum of Gaussian kernels
/// `exp(−‖x−y‖²/(2b²))` over `bandwidths`.
pub fn mmd_squared(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 || bandwidths.is_empty() {
        return Err(TfdError::contract("mmd needs nonempty sets and bandwidths"));
    }
    if a.cols() != b.cols() {
        return Err(TfdError::dim(format!("mmd: widths {} vs {}", a.cols(), b.cols())));
    }
    let kernel = |x: &[f64], y: &[f64]| {
        let sq = euclidean(x, y).powi(2);
        bandwidths.iter().map(|bw| (-sq / (2.0 * bw * bw)).exp()).sum::<f64>()
    };
    let mean_k = |p: &Tensor, q: &Tensor| {
        let mut s = 0.0;
        for i in 0..p.rows() {
            for j in 0..q.rows() {
                s += kernel(p.row(i), q.row(j));
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    Ok(mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b))
}

/// Mean over classes of the largest pairwise `exp(−‖zᵢ − zⱼ‖)` among at
/// most `per_class_cap` feature rows of each class. Classes with fewer than
/// two rows are skipped.
pub fn max_pairwise_similarity(features: &Tensor, labels: &[usize], per_class_cap: usize) -> f64 {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        let rows = by_class.entry(c).or_default();
        if rows.len() < per_class_cap {
            rows.push(i);
        }
    }
    let per_class: Vec<f64> = by_class
        .values()
        .filter(|rows| rows.len() >= 2)
        .map(|rows| {
            let mut best = 0.0f64;
            for (a, &i) in rows.iter().enumerate() {
                for &j in &rows[a + 1..] {
                    best = best.max((-euclidean(features.row(i), features.row(j))).exp());
                }
            }
            best
        })
        .collect();
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Nearest-mode statistics of samples against a ring mixture.
///
/// A mode is hit when at least `max(1, 0.01·n)` samples lie within
/// `radius_mult` component standard deviations of its mean. The diversity
/// statistic is computed on `features` grouped by `labels` when given,
/// otherwise on the samples grouped by their nearest mode.
pub fn mode_coverage(
    samples: &Tensor,
    spec: &SyntheticSpec,
    radius_mult: f64,
    features: Option<(&Tensor, &[usize])>,
) -> Result<CoverageSummary> {
    let Family::GaussianMixtureRing {
        num_components,
        component_std,
        ..
    } = spec.family
    else {
        return Err(TfdError::Unsupported("mode coverage needs a gaussian_mixture_ring".into()));
    };
    let n = samples.rows();
    if samples.cols() != spec.dimension {
        return Err(TfdError::dim(format!(
            "samples have width {}, spec has {}",
            samples.cols(),
            spec.dimension
        )));
    }
    let means: Vec<Vec<f64>> = (0..num_components).map(|k| spec.component_mean(k)).collect::<Result<_>>()?;
    let threshold = radius_mult * component_std;
    let mut close = vec![0usize; num_components];
    let mut nearest_of = Vec::with_capacity(n);
    for i in 0..n {
        let (k, dist) = means
            .iter()
            .enumerate()
            .map(|(k, mu)| (k, euclidean(samples.row(i), mu)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one mode");
        nearest_of.push(k);
        if dist <= threshold {
            close[k] += 1;
        }
    }
    let need = ((0.01 * n as f64).ceil() as usize).max(1);
    let modes_hit = close.iter().filter(|&&c| c >= need).count();
    let high_quality_fraction = if n == 0 {
        0.0
    } else {
        close.iter().sum::<usize>() as f64 / n as f64
    };
    let max_pairwise_similarity = match features {
        Some((f, labels)) => max_pairwise_similarity(f, labels, 64),
        None => max_pairwise_similarity(samples, &nearest_of, 64),
    };
    Ok(CoverageSummary {
        modes_hit,
        high_quality_fraction,
        max_pairwise_similarity,
    })
}

/// Minimum value at a step not exceeding each budget. Budgets before the
/// first record map to `+∞`.
pub fn budgeted_best(trace: &[MetricRecord], budgets: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if trace.is_empty() {
        return Err(TfdError::contract("budgeted_best needs a nonempty trace"));
    }
    if trace.windows(2).any(|w| w[1].step < w[0].step) {
        return Err(TfdError::contract("trace must be sorted by step"));
    }
    Ok(budgets
        .iter()
        .map(|&b| {
            let best = trace
                .iter()
                .take_while(|r| r.step <= b)
                .map(|r| r.value)
                .fold(f64::INFINITY, f64::min);
            (b, best)
        })
        .collect())
}

/// Append-only metric stream with running per-name minima.
#[derive(Clone, Debug, Default)]
pub struct MetricLog {
    records: Vec<MetricRecord>,
    best: HashMap<String, f64>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: usize, name: &str, value: f64) {
        let best = self.best.entry(name.to_string()).or_insert(f64::INFINITY);
        *best = best.min(value);
        self.records.push(MetricRecord {
            step,
            name: name.to_string(),
            value,
            budget_best: *best,
        });
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of a single metric, in step order.
    pub fn series(&self, name: &str) -> Vec<MetricRecord> {
        self.records.iter().filter(|r| r.name == name).cloned().collect()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.name == name).map(|r| r.value)
    }

    /// Keeps only records at or before `step`.
    pub fn truncate_after(&mut self, step: usize) {
        let kept: Vec<MetricRecord> = self.records.drain(..).filter(|r| r.step <= step).collect();
        self.best.clear();
        for r in kept {
            self.push(r.step, &r.name, r.value);
        }
    }

    /// CSV body rows (no header) for records starting at `from`.
    pub fn csv_rows(&self, from: usize) -> String {
        let mut out = String::new();
        for r in &self.records[from..] {
            let _ = writeln!(out, "{},{},{}", r.step, r.name, r.value);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", CSV_HEADER, self.csv_rows(0))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(TfdError::Format(format!("metrics file must start with `{CSV_HEADER}`")));
        }
        let mut log = Self::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let parts: Vec<&str> = line.splitn(3, ',').collect();
            let bad = || TfdError::Format(format!("metrics line {}: `{line}`", i + 2));
            if parts.len() != 3 {
                return Err(bad());
            }
            let step = parts[0].parse().map_err(|_| bad())?;
            let value = parts[2].parse().map_err(|_| bad())?;
            log.push(step, parts[1], value);
        }
        Ok(log)
    }
}

pub const CSV_HEADER: &str = "step,name,value";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::sample_batch;
    use crate::rng::SeedStream;

    fn rec(step: usize, value: f64) -> MetricRecord {
        MetricRecord {
            step,
            name: "fd".into(),
            value,
            budget_best: value,
        }
    }

    #[test]
    fn frechet_identical_and_symmetric() {
        let spec = SyntheticSpec::default();
        let a = sample_batch(&spec, 500, &mut SeedStream::new(1), None).unwrap().points;
        let b = sample_batch(&spec, 400, &mut SeedStream::new(2), None).unwrap().points;
        assert!(gaussian_frechet(&a, &a).unwrap().abs() < 1e-9);
        let ab = gaussian_frechet(&a, &b).unwrap();
        let ba = gaussian_frechet(&b, &a).unwrap();
        assert!(ab >= -1e-9 && (ab - ba).abs() < 1e-9);
    }

    #[test]
    fn frechet_population_cases() {
        let one = |v: f64| DVector::from_vec(vec![v]);
        let var = |v: f64| DMatrix::from_vec(1, 1, vec![v]);
        let fd = frechet_from_moments(&one(0.0), &var(1.0), &one(0.0), &var(4.0)).unwrap();
        assert!((fd - 1.0).abs() < 1e-8, "{fd}");

        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let m1 = DVector::from_vec(vec![1.0, -2.0]);
        let m2 = DVector::from_vec(vec![0.5, 1.0]);
        let fd = frechet_from_moments(&m1, &cov, &m2, &cov).unwrap();
        assert!((fd - (0.25 + 9.0)).abs() < 1e-8, "{fd}");
    }

    #[test]
    fn frechet_needs_enough_samples() {
        let t = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(gaussian_frechet(&t, &t), Err(TfdError::Contract(_))));
    }

    #[test]
    fn mmd_cases() {
        let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(mmd_squared(&a, &a, &[0.5, 1.0]).unwrap(), 0.0);
        let b = Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap();
        assert_eq!(mmd_squared(&a, &b, &[1.0]).unwrap(), mmd_squared(&b, &a, &[1.0]).unwrap());
        let p = Tensor::from_rows(&[vec![0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![3.0]]).unwrap();
        let expect = 2.0 - 2.0 * (-9.0f64 / 2.0).exp();
        assert!((mmd_squared(&p, &q, &[1.0]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn coverage_of_centers_and_collapse() {
        let spec = SyntheticSpec::default();
        let centers = Tensor::from_rows(&(0..8).map(|k| spec.component_mean(k).unwrap()).collect::<Vec<_>>()).unwrap();
        let c = mode_coverage(&centers, &spec, 3.0, None).unwrap();
        assert_eq!(c.modes_hit, 8);
        assert_eq!(c.high_quality_fraction, 1.0);

        let collapsed = Tensor::from_rows(&vec![spec.component_mean(3).unwrap(); 50]).unwrap();
        let c = mode_coverage(&collapsed, &spec, 3.0, None).unwrap();
        assert_eq!(c.modes_hit, 1);
        assert_eq!(c.max_pairwise_similarity, 1.0);
    }

    #[test]
    fn coverage_rotation_invariant() {
        let spec = SyntheticSpec::default();
        let b = sample_batch(&spec, 300, &mut SeedStream::new(4), None).unwrap();
        let rot = std::f64::consts::PI / 4.0;
        let rotated = Tensor::from_rows(
            &(0..300)
                .map(|i| {
                    let (x, y) = (b.points.get(i, 0), b.points.get(i, 1));
                    vec![x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos()]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let c0 = mode_coverage(&b.points, &spec, 3.0, None).unwrap();
        let c1 = mode_coverage(&rotated, &spec, 3.0, None).unwrap();
        assert_eq!(c0.modes_hit, c1.modes_hit);
        assert!((c0.high_quality_fraction - c1.high_quality_fraction).abs() < 1e-12);
    }

    #[test]
    fn budgeted_best_semantics() {
        let trace = vec![rec(10, 5.0), rec(20, 7.0), rec(30, 4.0)];
        let b = budgeted_best(&trace, &[5, 10, 20, 30, 100]).unwrap();
        assert_eq!(b[&5], f64::INFINITY);
        assert_eq!(b[&10], 5.0);
        assert_eq!(b[&20], 5.0);
        assert_eq!(b[&30], 4.0);
        assert_eq!(b[&100], 4.0);
        assert!(budgeted_best(&[], &[1]).is_err());
        assert!(budgeted_best(&[rec(5, 1.0), rec(1, 2.0)], &[1]).is_err());
    }

    #[test]
    fn metric_log_csv_round_trip() {
        let mut log = MetricLog::new();
        log.push(50, "tfd", 0.125);
        log.push(50, "frechet", 1.0 / 3.0);
        log.push(100, "frechet", 0.5);
        assert_eq!(log.records()[2].budget_best, 1.0 / 3.0);
        let text = log.to_csv();
        assert!(text.starts_with("step,name,value\n50,tfd,0.125\n"));
        let back = MetricLog::from_csv(&text).unwrap();
        assert_eq!(back.records(), log.records());
        let mut cut = back.clone();
        cut.truncate_after(50);
        assert_eq!(cut.len(), 2);
        assert!(MetricLog::from_csv("bad\n").is_err());
    }
}
