use std::sync::atomic::{AtomicU64, Ordering};

use crate::datasets::LabeledBatch;
use crate::error::{Result, TfdError};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::SeedStream;
use crate::teacher::{DenoiserNet, Depth};

/// One-step student `x = f(ε, c)`.
///
/// Shares the denoiser architecture; the noise-level input is pinned to a
/// fixed value so `ε` is read as a maximally noised sample.
#[derive(Debug)]
pub struct GeneratorNet {
    net: DenoiserNet,
    input_sigma: f64,
    forward_samples: AtomicU64,
}

impl Clone for GeneratorNet {
    fn clone(&self) -> Self {
        Self {
            net: self.net.clone(),
            input_sigma: self.input_sigma,
            forward_samples: AtomicU64::new(self.forward_samples()),
        }
    }
}

impl PartialEq for GeneratorNet {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.input_sigma == other.input_sigma
    }
}

impl GeneratorNet {
    pub fn new(net: DenoiserNet, input_sigma: f64) -> Result<Self> {
        if !(input_sigma > 0.0) {
            return Err(TfdError::contract("generator input sigma must be positive"));
        }
        Ok(Self {
            net,
            input_sigma,
            forward_samples: AtomicU64::new(0),
        })
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenoiserNet {
        &mut self.net
    }

    pub fn input_sigma(&self) -> f64 {
        self.input_sigma
    }

    pub fn checksum(&self) -> String {
        self.net.checksum()
    }

    /// Total number of samples pushed through the network so far.
    pub fn forward_samples(&self) -> u64 {
        self.forward_samples.load(Ordering::Relaxed)
    }

    /// `ε ~ N(0, input_sigma²·I)`, `n×d`.
    pub fn draw_noise(&self, n: usize, seed: &mut SeedStream) -> Tensor {
        let d = self.net.arch().dim;
        let data = seed.normals(n * d).into_iter().map(|z| z * self.input_sigma).collect();
        Tensor::matrix(n, d, data).expect("noise shape")
    }

    /// One network evaluation per row of `eps`.
    pub fn forward<'t>(&self, params: &[Var<'t>], eps: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        let n = labels.len();
        let pass = self.net.forward(params, eps, &vec![self.input_sigma; n], labels, Depth::Full)?;
        self.forward_samples.fetch_add(n as u64, Ordering::Relaxed);
        Ok(pass.output.expect("full pass"))
    }

    pub fn generate(&self, eps: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let params = self.net.bind(&tape, false);
        let out = self.forward(&params, tape.constant(eps.clone()), labels)?;
        Ok((*out.value()).clone())
    }
}

/// Copies the teacher's weights into a student that reads its input at the
/// teacher's largest noise level.
pub fn init_student_from_teacher(teacher: &DenoiserNet) -> Result<GeneratorNet> {
    GeneratorNet::new(teacher.clone(), teacher.schedule().sigma_max)
}

/// `n` one-step samples of class `condition`.
pub fn sample(student: &GeneratorNet, n: usize, condition: usize, seed: &mut SeedStream) -> Result<LabeledBatch> {
    let labels = vec![condition; n];
    let eps = student.draw_noise(n, seed);
    let points = student.generate(&eps, &labels)?;
    Ok(LabeledBatch { points, labels })
}

/// One-step samples with the given per-row labels.
pub fn sample_labeled(student: &GeneratorNet, labels: &[usize], seed: &mut SeedStream) -> Result<LabeledBatch> {
    let eps = student.draw_noise(labels.len(), seed);
    let points = student.generate(&eps, labels)?;
    Ok(LabeledBatch {
        points,
        labels: labels.to_vec(),
    })
}
