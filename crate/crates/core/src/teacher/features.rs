use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::net::{DenoiserNet, Depth};
use crate::error::{Result, TfdError};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::SeedStream;

/// Per-row norm floor used when normalizing pooled features.
const NORM_EPS: f64 = 1e-12;

/// Which teacher layers feed the drifting space and how inputs are noised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    /// 1-based hidden layer indices, strictly increasing.
    pub layers: Vec<usize>,
    /// Standard deviation of the Gaussian perturbation applied before the
    /// teacher runs; the teacher is also conditioned on this level.
    pub sigma_tf: f64,
    pub pool_size: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            layers: vec![2, 3, 4],
            sigma_tf: 0.1,
            pool_size: 4,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self, teacher: &DenoiserNet) -> Result<()> {
        let widths = &teacher.arch().widths;
        if self.layers.is_empty() {
            return Err(TfdError::contract("feature layer set is empty"));
        }
        if self.layers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TfdError::contract("feature layers must be strictly increasing"));
        }
        if !(self.sigma_tf >= 0.0) || self.pool_size == 0 {
            return Err(TfdError::contract("sigma_tf must be ≥ 0 and pool_size ≥ 1"));
        }
        for &l in &self.layers {
            if l == 0 || l > widths.len() {
                return Err(TfdError::contract(format!(
                    "layer {l} outside 1..={}",
                    widths.len()
                )));
            }
            if widths[l - 1] % self.pool_size != 0 {
                return Err(TfdError::contract(format!(
                    "pool size {} does not divide width {} of layer {l}",
                    self.pool_size,
                    widths[l - 1]
                )));
            }
        }
        Ok(())
    }

    pub fn feature_width(&self, teacher: &DenoiserNet, layer: usize) -> usize {
        teacher.arch().widths[layer - 1] / self.pool_size
    }

    /// Noise level the teacher is conditioned on. Clean extraction uses the
    /// smallest trained level, since `ln 0` is undefined.
    pub fn conditioning_sigma(&self, teacher: &DenoiserNet) -> f64 {
        self.sigma_tf.max(teacher.schedule().sigma_min)
    }
}

/// Mean over contiguous groups of `pool` columns.
pub fn average_pool<'t>(v: Var<'t>, pool: usize) -> Result<Var<'t>> {
    v.avg_pool(pool)
}

/// Noised, pooled and row-normalized hidden states for every layer of `fs`.
///
/// Draws one fresh `ξ ~ N(0, I)` per call and sample from `seed`. Gradients
/// flow through `x`; the teacher's parameters are bound as constants.
pub fn extract_features<'t>(
    teacher: &DenoiserNet,
    x: Var<'t>,
    labels: &[usize],
    fs: &FeatureSpec,
    seed: &mut SeedStream,
) -> Result<BTreeMap<usize, Var<'t>>> {
    fs.validate(teacher)?;
    let tape = x.tape();
    let shape = x.shape();
    let n = shape.first().copied().unwrap_or(0);
    let noised = if fs.sigma_tf > 0.0 {
        let xi: Vec<f64> = seed.normals(x.value().numel()).into_iter().map(|z| fs.sigma_tf * z).collect();
        x.add(tape.constant(Tensor::new(shape.clone(), xi)?))?
    } else {
        x
    };
    let params = teacher.bind(tape, false);
    let deepest = *fs.layers.last().unwrap();
    let sigma = fs.conditioning_sigma(teacher);
    let pass = teacher.forward(&params, noised, &vec![sigma; n], labels, Depth::Hidden(deepest))?;
    fs.layers
        .iter()
        .map(|&l| {
            let pooled = average_pool(pass.hidden[l - 1], fs.pool_size)?;
            Ok((l, pooled.normalize_rows(NORM_EPS)?))
        })
        .collect()
}

/// Value-only variant of [`extract_features`] for detached inputs.
pub fn extract_feature_values(
    teacher: &DenoiserNet,
    x: &Tensor,
    labels: &[usize],
    fs: &FeatureSpec,
    seed: &mut SeedStream,
) -> Result<BTreeMap<usize, Tensor>> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let feats = extract_features(teacher, xv, labels, fs, seed)?;
    Ok(feats.into_iter().map(|(l, v)| (l, (*v.value()).clone())).collect())
}
