use super::tensor::Tensor;
use crate::error::{Result, TfdError};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Tensor], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TfdError::contract("optimizer/parameter count mismatch"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *pi -= lr * (update + self.weight_decay * *pi);
            }
        }
        Ok(())
    }

    /// Flat optimizer state: `[t, m..., v...]`.
    pub fn export_state(&self) -> Vec<f64> {
        let mut out = vec![self.t as f64];
        self.m.iter().for_each(|m| out.extend_from_slice(m));
        self.v.iter().for_each(|v| out.extend_from_slice(v));
        out
    }

    pub fn import_state(&mut self, state: &[f64]) -> Result<()> {
        let total: usize = self.m.iter().map(Vec::len).sum();
        if state.len() != 1 + 2 * total {
            return Err(TfdError::Format(format!(
                "optimizer state has {} values, expected {}",
                state.len(),
                1 + 2 * total
            )));
        }
        self.t = state[0] as u64;
        let mut it = state[1..].iter().copied();
        for m in self.m.iter_mut().chain(self.v.iter_mut()) {
            m.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their joint norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Linear warmup to `base` over `warmup` steps, constant afterwards.
pub fn warmup_lr(base: f64, warmup: usize, step: usize) -> f64 {
    if warmup == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::vector(vec![30.0, 40.0]), Tensor::vector(vec![0.0])];
        let before = clip_global_norm(&mut g, 10.0);
        assert_eq!(before, 50.0);
        assert!(global_norm(&g) <= 10.0 + 1e-9);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![Tensor::vector(vec![1.0, -1.0])];
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[Tensor::vector(vec![2.0, -3.0])], 0.1).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn state_round_trip() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0, 3.0])];
        let mut opt = AdamW::new(&p, 0.01);
        opt.step(&mut p, &[Tensor::vector(vec![0.1, 0.2, 0.3])], 1e-2).unwrap();
        let mut other = AdamW::new(&p, 0.01);
        other.import_state(&opt.export_state()).unwrap();
        assert_eq!(other.export_state(), opt.export_state());
        assert!(other.import_state(&[0.0]).is_err());
    }

    #[test]
    fn warmup_is_linear_then_flat() {
        assert_eq!(warmup_lr(1.0, 4, 0), 0.25);
        assert_eq!(warmup_lr(1.0, 4, 3), 1.0);
        assert_eq!(warmup_lr(1.0, 4, 100), 1.0);
        assert_eq!(warmup_lr(0.5, 0, 0), 0.5);
    }
}
