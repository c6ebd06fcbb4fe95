use serde::{Deserialize, Serialize};

use super::net::{DenoiserNet, Depth};
use crate::datasets::{sample_batch, SyntheticSpec};
use crate::error::{Result, TfdError};
use crate::numerics::{AdamW, Tape, Tensor};
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 2e-3,
            batch_size: 128,
        }
    }
}

/// Trained denoiser plus the per-step mean squared denoising error.
pub struct TrainedTeacher {
    pub net: DenoiserNet,
    pub loss_trace: Vec<f64>,
}

/// Fits the denoiser to predict `x` from `x + σξ` with `σ` drawn from the
/// net's schedule, under a cosine-decayed learning rate. Step `k` draws from `seed.derive("teacher-step", k)`.
pub fn train_teacher(
    spec: &SyntheticSpec,
    mut net: DenoiserNet,
    cfg: &TeacherTrainConfig,
    seed: &SeedStream,
) -> Result<TrainedTeacher> {
    spec.validate()?;
    if net.arch().dim != spec.dimension || net.arch().num_classes != spec.num_classes() {
        return Err(TfdError::contract(
            "teacher architecture does not match the dataset dimension/classes",
        ));
    }
    let schedule = net.schedule();
    let mut opt = AdamW::new(net.params(), 0.0);
    let mut trace = Vec::with_capacity(cfg.steps);
    let n = cfg.batch_size;
    let d = spec.dimension;
    for step in 0..cfg.steps {
        let mut rng = seed.derive("teacher-step", step as u64);
        let batch = sample_batch(spec, n, &mut rng, None)?;
        let sigmas: Vec<f64> = (0..n).map(|_| schedule.sample(&mut rng)).collect();
        let noisy: Vec<f64> = batch
            .points
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + sigmas[i / d] * rng.normal())
            .collect();

        let tape = Tape::new();
        let params = net.bind(&tape, true);
        let x = tape.constant(Tensor::matrix(n, d, noisy)?);
        let pred = net
            .forward(&params, x, &sigmas, &batch.labels, Depth::Full)?
            .output
            .expect("full pass");
        let target = tape.constant(batch.points.clone());
        let loss = pred.sub(target)?.square()?.mean(None)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(TfdError::Divergence {
                step,
                detail: format!("teacher loss {value}"),
            });
        }
        tape.backward(loss)?;
        let grads: Vec<Tensor> = params.iter().map(|p| tape.grad(*p)).collect();
        let progress = step as f64 / cfg.steps as f64;
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.step(net.params_mut(), &grads, lr)?;
        trace.push(value);
    }
    Ok(TrainedTeacher {
        net,
        loss_trace: trace,
    })
}
