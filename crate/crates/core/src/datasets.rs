//! Synthetic low-dimensional reference distributions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::numerics::Tensor;
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Equal-weight isotropic Gaussians with means evenly spaced on a circle
    /// in the first two coordinates. Each component is its own class.
    GaussianMixtureRing {
        num_components: usize,
        radius: f64,
        component_std: f64,
    },
    TwoMoons {
        noise: f64,
    },
    /// Uniform on the "black" cells of a `cells × cells` board spanning
    /// `[-extent, extent]²`.
    Checkerboard {
        extent: f64,
        cells: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
}

fn default_dimension() -> usize {
    2
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::ring(8, 1.0, 0.05)
    }
}

impl SyntheticSpec {
    pub fn ring(num_components: usize, radius: f64, component_std: f64) -> Self {
        Self {
            family: Family::GaussianMixtureRing {
                num_components,
                radius,
                component_std,
            },
            dimension: 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.family {
            Family::GaussianMixtureRing { num_components, .. } => num_components,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension < 1 {
            return Err(TfdError::contract("dimension must be at least 1"));
        }
        match self.family {
            Family::GaussianMixtureRing {
                num_components,
                radius,
                component_std,
            } => {
                if num_components < 1 {
                    return Err(TfdError::contract("ring needs at least one component"));
                }
                if self.dimension < 2 {
                    return Err(TfdError::contract("ring lives in at least two dimensions"));
                }
                if !(radius >= 0.0) || !(component_std > 0.0) {
                    return Err(TfdError::contract("ring radius must be ≥ 0 and std > 0"));
                }
            }
            Family::TwoMoons { noise } => {
                if self.dimension != 2 || !(noise >= 0.0) {
                    return Err(TfdError::contract("two_moons is 2-D with noise ≥ 0"));
                }
            }
            Family::Checkerboard { extent, cells } => {
                if self.dimension != 2 || !(extent > 0.0) || cells < 2 {
                    return Err(TfdError::contract(
                        "checkerboard is 2-D with extent > 0 and at least 2 cells",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Mean of ring component `k`.
    pub fn component_mean(&self, k: usize) -> Result<Vec<f64>> {
        match self.family {
            Family::GaussianMixtureRing {
                num_components,
                radius,
                ..
            } => {
                let angle = 2.0 * PI * k as f64 / num_components as f64;
                let mut mu = vec![0.0; self.dimension];
                mu[0] = radius * angle.cos();
                mu[1] = radius * angle.sin();
                Ok(mu)
            }
            _ => Err(TfdError::Unsupported(
                "component means exist only for gaussian_mixture_ring".into(),
            )),
        }
    }
}

/// Points with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub points: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose label equals `class`.
    pub fn of_class(&self, class: usize) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
        self.points.select_rows(&idx)
    }
}

pub fn sample_batch(
    spec: &SyntheticSpec,
    n: usize,
    seed: &mut SeedStream,
    class_filter: Option<usize>,
) -> Result<LabeledBatch> {
    spec.validate()?;
    if n == 0 {
        return Err(TfdError::contract("batch size must be at least 1"));
    }
    let classes = spec.num_classes();
    if let Some(c) = class_filter {
        if c >= classes {
            return Err(TfdError::contract(format!(
                "class {c} out of range for {classes} classes"
            )));
        }
    }
    let d = spec.dimension;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = class_filter.unwrap_or_else(|| seed.below(classes));
        match spec.family {
            Family::GaussianMixtureRing { component_std, .. } => {
                let mu = spec.component_mean(label)?;
                data.extend(mu.iter().map(|m| m + component_std * seed.normal()));
            }
            Family::TwoMoons { noise } => {
                let t = PI * seed.uniform();
                let (x, y) = if seed.uniform() < 0.5 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                data.push(x + noise * seed.normal());
                data.push(y + noise * seed.normal());
            }
            Family::Checkerboard { extent, cells } => {
                let cell = 2.0 * extent / cells as f64;
                let (i, j) = loop {
                    let (i, j) = (seed.below(cells), seed.below(cells));
                    if (i + j) % 2 == 0 {
                        break (i, j);
                    }
                };
                data.push(-extent + cell * (i as f64 + seed.uniform()));
                data.push(-extent + cell * (j as f64 + seed.uniform()));
            }
        }
        labels.push(label);
    }
    Ok(LabeledBatch {
        points: Tensor::matrix(n, d, data)?,
        labels,
    })
}

/// Exact log density of the equal-weight ring mixture at `x`.
pub fn mixture_log_density(spec: &SyntheticSpec, x: &[f64]) -> Result<f64> {
    let Family::GaussianMixtureRing {
        num_components,
        component_std,
        ..
    } = spec.family
    else {
        return Err(TfdError::Unsupported(
            "log density is only available for gaussian_mixture_ring".into(),
        ));
    };
    if x.len() != spec.dimension {
        return Err(TfdError::dim(format!(
            "point has {} coordinates, spec has {}",
            x.len(),
            spec.dimension
        )));
    }
    let d = spec.dimension as f64;
    let var = component_std * component_std;
    let log_norm = -0.5 * d * (2.0 * PI * var).ln();
    let terms: Vec<f64> = (0..num_components)
        .map(|k| {
            let mu = spec.component_mean(k)?;
            let sq: f64 = x.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(log_norm - 0.5 * sq / var)
        })
        .collect::<Result<_>>()?;
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(lse - (num_components as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_class_means() {
        let spec = SyntheticSpec::ring(8, 1.5, 0.05);
        let n = 100_000;
        for k in [0usize, 3] {
            let mut seed = SeedStream::new(11 + k as u64);
            let b = sample_batch(&spec, n, &mut seed, Some(k)).unwrap();
            assert!(b.labels.iter().all(|&l| l == k));
            let angle = 2.0 * PI * k as f64 / 8.0;
            let expect = [1.5 * angle.cos(), 1.5 * angle.sin()];
            for (j, e) in expect.iter().enumerate() {
                let mean = (0..n).map(|i| b.points.get(i, j)).sum::<f64>() / n as f64;
                assert!((mean - e).abs() < 3.0 * 0.05 / (n as f64).sqrt(), "{mean} vs {e}");
            }
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let spec = SyntheticSpec::default();
        let a = sample_batch(&spec, 64, &mut SeedStream::new(5), None).unwrap();
        let b = sample_batch(&spec, 64, &mut SeedStream::new(5), None).unwrap();
        assert_eq!(a, b);
        assert!(a.labels.iter().all(|&l| l < 8));
    }

    #[test]
    fn noiseless_moons_lie_on_loci() {
        let spec = SyntheticSpec {
            family: Family::TwoMoons { noise: 0.0 },
            dimension: 2,
        };
        let b = sample_batch(&spec, 500, &mut SeedStream::new(1), None).unwrap();
        for i in 0..500 {
            let (x, y) = (b.points.get(i, 0), b.points.get(i, 1));
            let upper = ((x * x + y * y).sqrt() - 1.0).abs() < 1e-12 && y >= -1e-12;
            let (u, v) = (x - 1.0, y - 0.5);
            let lower = ((u * u + v * v).sqrt() - 1.0).abs() < 1e-12 && v <= 1e-12;
            assert!(upper || lower, "({x}, {y}) off both moons");
        }
    }

    #[test]
    fn checkerboard_stays_on_black_cells() {
        let spec = SyntheticSpec {
            family: Family::Checkerboard { extent: 2.0, cells: 4 },
            dimension: 2,
        };
        let b = sample_batch(&spec, 300, &mut SeedStream::new(2), None).unwrap();
        for i in 0..300 {
            let ci = ((b.points.get(i, 0) + 2.0) / 1.0).floor() as usize;
            let cj = ((b.points.get(i, 1) + 2.0) / 1.0).floor() as usize;
            assert_eq!((ci + cj) % 2, 0);
        }
    }

    #[test]
    fn class_filter_out_of_range() {
        let spec = SyntheticSpec::default();
        let r = sample_batch(&spec, 4, &mut SeedStream::new(0), Some(8));
        assert!(matches!(r, Err(TfdError::Contract(_))));
    }

    #[test]
    fn single_component_peak_density() {
        let s = 0.3;
        let spec = SyntheticSpec::ring(1, 1.0, s);
        let mu = spec.component_mean(0).unwrap();
        let got = mixture_log_density(&spec, &mu).unwrap();
        let expect = (1.0 / (2.0 * PI * s * s)).ln();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn density_rotation_symmetry() {
        let spec = SyntheticSpec::ring(8, 1.0, 0.2);
        let rot = 2.0 * PI / 8.0;
        for &(x, y) in &[(0.3, 0.9), (1.1, -0.2), (-0.5, -0.5)] {
            let (xr, yr) = (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos());
            let a = mixture_log_density(&spec, &[x, y]).unwrap();
            let b = mixture_log_density(&spec, &[xr, yr]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // midpoint rule on [-1.5, 1.5]²; the mass outside is negligible at std 0.05
        let spec = SyntheticSpec::default();
        let h = 0.005;
        let steps = (3.0 / h) as usize;
        let mut mass = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = -1.5 + (i as f64 + 0.5) * h;
                let y = -1.5 + (j as f64 + 0.5) * h;
                mass += mixture_log_density(&spec, &[x, y]).unwrap().exp() * h * h;
            }
        }
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn other_families_have_no_density() {
        let spec = SyntheticSpec {
            family: Family::TwoMoons { noise: 0.1 },
            dimension: 2,
        };
        assert!(matches!(
            mixture_log_density(&spec, &[0.0, 0.0]),
            Err(TfdError::Unsupported(_))
        ));
    }
}
