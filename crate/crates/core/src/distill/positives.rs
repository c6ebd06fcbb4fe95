use super::config::PositiveSource;
use crate::datasets::LabeledBatch;
use crate::error::{Result, TfdError};
use crate::numerics::Tensor;
use crate::rng::SeedStream;
use crate::teacher::DenoiserNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Teacher,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositiveSet {
    pub points: Tensor,
    pub provenance: Vec<Provenance>,
}

impl PositiveSet {
    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&x| x == p).count()
    }
}

/// Positives for one condition.
///
/// `Hybrid` takes the condition-matched real points of `real_pool` (up to
/// `n_plus`) and fills any remaining slots with multi-step teacher samples.
/// `RealOnly` fails when the pool is short; `TeacherOnly` ignores the pool.
pub fn build_positive_set(
    condition: usize,
    n_plus: usize,
    real_pool: &LabeledBatch,
    teacher: &DenoiserNet,
    policy: PositiveSource,
    sampling_steps: usize,
    seed: &mut SeedStream,
) -> Result<PositiveSet> {
    if n_plus == 0 {
        return Err(TfdError::contract("need at least one positive"));
    }
    let matched: Vec<usize> = (0..real_pool.len())
        .filter(|&i| real_pool.labels[i] == condition)
        .take(n_plus)
        .collect();
    let n_real = match policy {
        PositiveSource::TeacherOnly => 0,
        PositiveSource::RealOnly if matched.len() < n_plus => {
            return Err(TfdError::contract(format!(
                "condition {condition}: {} real positives available, {n_plus} required",
                matched.len()
            )))
        }
        _ => matched.len(),
    };
    let real = real_pool.points.select_rows(&matched[..n_real]);
    let n_teacher = n_plus - n_real;
    let points = if n_teacher > 0 {
        let fills = teacher.sample_multistep(n_teacher, condition, sampling_steps, seed)?;
        if n_real > 0 {
            Tensor::vstack(&[&real, &fills])?
        } else {
            fills
        }
    } else {
        real
    };
    let mut provenance = vec![Provenance::Real; n_real];
    provenance.extend(std::iter::repeat(Provenance::Teacher).take(n_teacher));
    Ok(PositiveSet { points, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sample_batch, SyntheticSpec};
    use crate::teacher::{Architecture, NoiseSchedule};

    fn setup(real: usize) -> (DenoiserNet, LabeledBatch) {
        let arch = Architecture {
            dim: 2,
            num_classes: 8,
            widths: vec![8, 8],
            embed_freqs: 2,
        };
        let t = DenoiserNet::new(arch, NoiseSchedule::default(), &mut SeedStream::new(1)).unwrap();
        let mut rng = SeedStream::new(2);
        let spec = SyntheticSpec::default();
        let mut pool = sample_batch(&spec, 3, &mut rng, Some(5)).unwrap();
        if real > 0 {
            let own = sample_batch(&spec, real, &mut rng, Some(1)).unwrap();
            pool = LabeledBatch {
                points: Tensor::vstack(&[&pool.points, &own.points]).unwrap(),
                labels: pool.labels.into_iter().chain(own.labels).collect(),
            };
        }
        (t, pool)
    }

    fn build(real: usize, policy: PositiveSource) -> Result<PositiveSet> {
        let (t, pool) = setup(real);
        build_positive_set(1, 4, &pool, &t, policy, 5, &mut SeedStream::new(3))
    }

    #[test]
    fn enough_real_points_means_real_only() {
        let set = build(4, PositiveSource::Hybrid).unwrap();
        assert_eq!((set.count(Provenance::Real), set.count(Provenance::Teacher)), (4, 0));
    }

    #[test]
    fn short_pool_is_filled_by_teacher() {
        let set = build(2, PositiveSource::Hybrid).unwrap();
        assert_eq!(set.provenance, vec![Provenance::Real, Provenance::Real, Provenance::Teacher, Provenance::Teacher]);
        assert_eq!(set.points.rows(), 4);
    }

    #[test]
    fn no_real_points_means_all_teacher() {
        let set = build(0, PositiveSource::Hybrid).unwrap();
        assert_eq!(set.count(Provenance::Teacher), 4);
        assert_eq!(build(4, PositiveSource::TeacherOnly).unwrap().count(Provenance::Teacher), 4);
    }

    #[test]
    fn real_only_refuses_a_short_pool() {
        assert!(matches!(build(2, PositiveSource::RealOnly), Err(TfdError::Contract(_))));
        assert_eq!(build(6, PositiveSource::RealOnly).unwrap().count(Provenance::Real), 4);
    }
}
