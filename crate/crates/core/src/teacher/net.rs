use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TfdError};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::SeedStream;

/// Shape of a noise-conditioned fully connected denoiser.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Sample dimension `d`.
    pub dim: usize,
    pub num_classes: usize,
    /// Hidden layer widths `w₁..w_L`.
    pub widths: Vec<usize>,
    /// Number of sinusoid frequencies in the noise-level embedding.
    pub embed_freqs: usize,
}

impl Architecture {
    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 || self.widths.is_empty() {
            return Err(TfdError::contract(
                "architecture needs dim ≥ 1, classes ≥ 1 and at least one layer",
            ));
        }
        if self.widths.iter().any(|&w| w == 0) || self.embed_freqs == 0 {
            return Err(TfdError::contract("layer widths and embed_freqs must be positive"));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let w1 = self.widths[0];
        let mut shapes = vec![
            vec![self.dim, w1],
            vec![2 * self.embed_freqs, w1],
            vec![self.num_classes, w1],
            vec![w1],
        ];
        for pair in self.widths.windows(2) {
            shapes.push(vec![pair[0], pair[1]]);
            shapes.push(vec![pair[1]]);
        }
        shapes.push(vec![*self.widths.last().unwrap(), self.dim]);
        shapes.push(vec![self.dim]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Range of noise levels the denoiser is trained on, sampled log-uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 2.0,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
            return Err(TfdError::contract(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    pub fn sample(&self, seed: &mut SeedStream) -> f64 {
        let (lo, hi) = (self.sigma_min.ln(), self.sigma_max.ln());
        (lo + (hi - lo) * seed.uniform()).exp()
    }

    /// `steps + 1` levels from `sigma_max` down to `sigma_min`, geometric.
    pub fn geometric_grid(&self, steps: usize) -> Vec<f64> {
        let ratio = (self.sigma_min / self.sigma_max).powf(1.0 / steps.max(1) as f64);
        (0..=steps).map(|i| self.sigma_max * ratio.powi(i as i32)).collect()
    }
}

/// How far to run a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    /// All hidden layers plus the output head.
    Full,
    /// Stop after hidden layer `ℓ` (1-based); no output.
    Hidden(usize),
}

/// Hidden states (post-activation, one per layer run) and the optional
/// output of a forward pass.
pub struct ForwardPass<'t> {
    pub hidden: Vec<Var<'t>>,
    pub output: Option<Var<'t>>,
}

/// Noise-conditioned denoiser predicting the clean sample.
///
/// The first layer mixes the sample, a sinusoidal embedding of `ln σ` and a
/// learned class vector; every hidden layer applies SiLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    schedule: NoiseSchedule,
    params: Vec<Tensor>,
}

impl DenoiserNet {
    pub fn new(arch: Architecture, schedule: NoiseSchedule, seed: &mut SeedStream) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        let first_fan_in = (arch.dim + 2 * arch.embed_freqs + 1) as f64;
        let params = arch
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let fan_in = if i < 3 { first_fan_in } else { shape[0] as f64 };
                let is_head = i == arch.param_shapes().len() - 2;
                let gain = if is_head { 1.0 } else { 2.0f64.sqrt() };
                let std = gain / fan_in.sqrt();
                let n = shape.iter().product();
                let data = seed.normals(n).into_iter().map(|z| z * std).collect();
                Tensor::new(shape, data).expect("param shape")
            })
            .collect();
        Ok(Self {
            arch,
            schedule,
            params,
        })
    }

    pub fn from_parts(arch: Architecture, schedule: NoiseSchedule, params: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        schedule.validate()?;
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(TfdError::Format("parameters do not match the architecture".into()));
        }
        Ok(Self {
            arch,
            schedule,
            params,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Concatenation of all parameters in layout order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.arch.param_count() {
            return Err(TfdError::Format(format!(
                "expected {} parameters, got {}",
                self.arch.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 over the little-endian parameter bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.params.iter().flat_map(|p| p.data()) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Puts the parameters on the tape, tracked or constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// `[n × 2F]` sinusoidal features of `ln σ` per row.
    pub fn sigma_embedding(&self, sigmas: &[f64]) -> Tensor {
        let f = self.arch.embed_freqs;
        let mut data = Vec::with_capacity(sigmas.len() * 2 * f);
        for &s in sigmas {
            let u = s.ln();
            for k in 0..f {
                let w = 0.25 * 2f64.powi(k as i32);
                data.push((w * u).sin());
            }
            for k in 0..f {
                let w = 0.25 * 2f64.powi(k as i32);
                data.push((w * u).cos());
            }
        }
        Tensor::matrix(sigmas.len(), 2 * f, data).expect("embedding shape")
    }

    fn one_hot(&self, labels: &[usize]) -> Result<Tensor> {
        let k = self.arch.num_classes;
        let mut data = vec![0.0; labels.len() * k];
        for (i, &c) in labels.iter().enumerate() {
            if c >= k {
                return Err(TfdError::contract(format!("label {c} out of range for {k} classes")));
            }
            data[i * k + c] = 1.0;
        }
        Tensor::matrix(labels.len(), k, data)
    }

    /// Runs the network on `x` (`n×d`) at per-row noise levels `sigmas`.
    pub fn forward<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        sigmas: &[f64],
        labels: &[usize],
        depth: Depth,
    ) -> Result<ForwardPass<'t>> {
        let tape = x.tape();
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.arch.dim {
            return Err(TfdError::dim(format!(
                "denoiser input must be n×{}, got {:?}",
                self.arch.dim, shape
            )));
        }
        let n = shape[0];
        if sigmas.len() != n || labels.len() != n {
            return Err(TfdError::dim(format!(
                "{n} rows but {} noise levels and {} labels",
                sigmas.len(),
                labels.len()
            )));
        }
        let last = match depth {
            Depth::Full => self.arch.num_layers(),
            Depth::Hidden(l) if (1..=self.arch.num_layers()).contains(&l) => l,
            Depth::Hidden(l) => {
                return Err(TfdError::contract(format!(
                    "layer {l} outside 1..={}",
                    self.arch.num_layers()
                )))
            }
        };
        let emb = tape.constant(self.sigma_embedding(sigmas));
        let onehot = tape.constant(self.one_hot(labels)?);
        let pre = x
            .matmul(params[0])?
            .add(emb.matmul(params[1])?)?
            .add(onehot.matmul(params[2])?)?
            .add_row(params[3])?;
        let mut h = pre.silu()?;
        let mut hidden = vec![h];
        for layer in 1..last {
            let w = params[4 + 2 * (layer - 1)];
            let b = params[5 + 2 * (layer - 1)];
            h = h.matmul(w)?.add_row(b)?.silu()?;
            hidden.push(h);
        }
        let output = if depth == Depth::Full {
            let k = params.len();
            Some(h.matmul(params[k - 2])?.add_row(params[k - 1])?)
        } else {
            None
        };
        Ok(ForwardPass { hidden, output })
    }

    /// Clean-sample prediction without recording gradients.
    pub fn denoise(&self, x: &Tensor, sigmas: &[f64], labels: &[usize]) -> Result<Tensor> {
        let tape = Tape::new();
        let params = self.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let pass = self.forward(&params, xv, sigmas, labels, Depth::Full)?;
        Ok((*pass.output.expect("full pass").value()).clone())
    }

    /// Deterministic multi-step sampler: starting from `sigma_max·ε`,
    /// predict the clean sample and move to the next lower level of a
    /// geometric grid along the implied noise direction.
    pub fn sample_multistep(
        &self,
        n: usize,
        class: usize,
        steps: usize,
        seed: &mut SeedStream,
    ) -> Result<Tensor> {
        let d = self.arch.dim;
        let grid = self.schedule.geometric_grid(steps.max(1));
        let start: Vec<f64> = seed.normals(n * d).into_iter().map(|z| z * grid[0]).collect();
        let mut x = Tensor::matrix(n, d, start)?;
        let labels = vec![class; n];
        let mut x0 = x.clone();
        for pair in grid.windows(2) {
            let (cur, next) = (pair[0], pair[1]);
            x0 = self.denoise(&x, &vec![cur; n], &labels)?;
            let ratio = next / cur;
            let data = x
                .data()
                .iter()
                .zip(x0.data())
                .map(|(xt, p)| p + ratio * (xt - p))
                .collect();
            x = Tensor::matrix(n, d, data)?;
        }
        if !x0.all_finite() {
            return Err(TfdError::Numeric("teacher sampling produced non-finite values".into()));
        }
        Ok(x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture {
            dim: 2,
            num_classes: 3,
            widths: vec![8, 8, 8],
            embed_freqs: 2,
        }
    }

    #[test]
    fn param_layout_matches_count() {
        let arch = tiny_arch();
        let net = DenoiserNet::new(arch.clone(), NoiseSchedule::default(), &mut SeedStream::new(0)).unwrap();
        assert_eq!(net.flat_params().len(), arch.param_count());
        // 2·8 + 4·8 + 3·8 + 8 + 2·(64 + 8) + 8·2 + 2
        assert_eq!(arch.param_count(), 16 + 32 + 24 + 8 + 144 + 16 + 2);
    }

    #[test]
    fn hidden_states_per_layer() {
        let net = DenoiserNet::new(tiny_arch(), NoiseSchedule::default(), &mut SeedStream::new(1)).unwrap();
        let tape = Tape::new();
        let p = net.bind(&tape, false);
        let x = tape.constant(Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.5]).unwrap());
        let full = net.forward(&p, x, &[0.5, 0.5], &[0, 2], Depth::Full).unwrap();
        assert_eq!(full.hidden.len(), 3);
        assert_eq!(full.output.unwrap().shape(), vec![2, 2]);
        let partial = net.forward(&p, x, &[0.5, 0.5], &[0, 2], Depth::Hidden(2)).unwrap();
        assert_eq!(partial.hidden.len(), 2);
        assert!(partial.output.is_none());
        assert_eq!(*partial.hidden[1].value(), *full.hidden[1].value());
        assert!(net.forward(&p, x, &[0.5, 0.5], &[0, 3], Depth::Full).is_err());
    }

    #[test]
    fn flat_round_trip_keeps_checksum() {
        let mut net = DenoiserNet::new(tiny_arch(), NoiseSchedule::default(), &mut SeedStream::new(2)).unwrap();
        let sum = net.checksum();
        let flat = net.flat_params();
        net.set_flat_params(&flat).unwrap();
        assert_eq!(net.checksum(), sum);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let s = NoiseSchedule { sigma_min: 0.01, sigma_max: 2.0 };
        let g = s.geometric_grid(20);
        assert_eq!(g.len(), 21);
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[20] - 0.01).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }
}
