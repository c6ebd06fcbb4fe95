use proptest::prelude::*;

use tfd::anchor::{anchor_margin_loss, SupportNormalizer};
use tfd::datasets::{sample_batch, SyntheticSpec};
use tfd::drift::{drift_field, DriftConfig};
use tfd::metrics::{budgeted_best, mode_coverage, MetricRecord};
use tfd::{SeedStream, Tape, Tensor};

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
    let mut rng = SeedStream::new(seed);
    Tensor::matrix(rows, cols, rng.normals(rows * cols).into_iter().map(|v| v * scale).collect()).unwrap()
}

fn config(radii: Vec<f64>) -> DriftConfig {
    DriftConfig {
        radii,
        ..DriftConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn field_is_translation_equivariant(
        n in 1usize..12, m in 1usize..12, d in 1usize..6, seed in 0u64..1000,
        shift in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let x = matrix(n, d, seed, 1.0);
        let p = matrix(m, d, seed + 1, 1.0);
        let q = matrix(m, d, seed + 2, 1.0);
        let cfg = config(vec![0.5, 1.0, 2.0]);
        let moved = |t: &Tensor| {
            let mut t = t.clone();
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v += shift[j % d];
            }
            t
        };
        let a = drift_field(&x, &p, &q, &cfg).unwrap().field_values;
        let b = drift_field(&moved(&x), &moved(&p), &moved(&q), &cfg).unwrap().field_values;
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn field_scales_with_inputs_and_radii(
        n in 1usize..10, m in 1usize..10, seed in 0u64..1000, c in 0.1f64..5.0,
    ) {
        let x = matrix(n, 3, seed, 1.0);
        let p = matrix(m, 3, seed + 1, 1.0);
        let q = matrix(m, 3, seed + 2, 1.0);
        let a = drift_field(&x, &p, &q, &config(vec![0.5, 1.5])).unwrap().field_values;
        let s = |t: &Tensor| t.map(|v| v * c);
        let b = drift_field(&s(&x), &s(&p), &s(&q), &config(vec![0.5 * c, 1.5 * c])).unwrap().field_values;
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((c * u - v).abs() < 1e-8 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn anchor_loss_nonnegative_and_monotone_in_alpha(
        m in 2usize..8, n in 1usize..8, seed in 0u64..1000, h in 0.2f64..3.0,
        a1 in 0.0f64..1.0, a2 in 0.0f64..1.0,
    ) {
        let anchors = matrix(m, 2, seed, 1.0);
        let generated = matrix(n, 2, seed + 7, 2.0);
        let tape = Tape::new();
        let g = tape.constant(generated);
        let loss = |alpha| anchor_margin_loss(&anchors, g, h, alpha, SupportNormalizer::Anchors).unwrap().0.item();
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        prop_assert!(loss(lo) >= 0.0);
        prop_assert!(loss(lo) <= loss(hi) + 1e-15);
    }

    #[test]
    fn budgeted_best_is_monotone(values in prop::collection::vec(-10.0f64..10.0, 1..30), stride in 1usize..9) {
        let trace: Vec<MetricRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricRecord { step: i * stride, name: "m".into(), value: v, budget_best: v })
            .collect();
        let budgets: Vec<usize> = (0..values.len() * stride + 5).collect();
        let best = budgeted_best(&trace, &budgets).unwrap();
        let series: Vec<f64> = best.values().copied().collect();
        prop_assert!(series.windows(2).all(|w| w[1] <= w[0]));
        let overall = values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(*series.last().unwrap(), overall);
    }

    #[test]
    fn coverage_is_rotation_invariant(seed in 0u64..500, k in 1usize..8) {
        let spec = SyntheticSpec::default();
        let batch = sample_batch(&spec, 400, &mut SeedStream::new(seed), None).unwrap();
        let theta = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
        let (s, c) = theta.sin_cos();
        let mut rotated = batch.points.clone();
        for p in rotated.data_mut().chunks_mut(2) {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
        let a = mode_coverage(&batch.points, &spec, 3.0, None).unwrap();
        let b = mode_coverage(&rotated, &spec, 3.0, None).unwrap();
        prop_assert_eq!(a.modes_hit, b.modes_hit);
        prop_assert!((a.high_quality_fraction - b.high_quality_fraction).abs() < 1e-12);
        prop_assert!((a.max_pairwise_similarity - b.max_pairwise_similarity).abs() < 1e-9);
    }
}
