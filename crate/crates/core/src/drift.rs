//! Kernel attraction/repulsion drifting fields and the fixed-point
//! regression losses built on them.
//!
//! For a query `x`, each side contributes a Laplace-kernel mean shift
//! `Σⱼ k(x,yⱼ)(yⱼ − x) / max(Σⱼ k(x,yⱼ), eps)`; the field is the positive
//! shift minus the negative shift, averaged over kernel radii. Both sides
//! include every batch sample, so identical positive and negative sets give
//! an exactly zero field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::numerics::{euclidean, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Laplace kernel radii; the field is the mean of the per-radius fields.
    pub radii: Vec<f64>,
    /// Floor on the kernel-weight sum of each mean shift.
    #[serde(default = "default_eps")]
    pub eps_denominator: f64,
    /// Drop each query's own row from its negatives when the negatives are
    /// the query batch itself. Off by default, which keeps the
    /// identical-batch equilibrium exact.
    #[serde(default)]
    pub exclude_self: bool,
}

fn default_eps() -> f64 {
    1e-12
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.02, 0.05, 0.2],
            eps_denominator: default_eps(),
            exclude_self: false,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|&r| !(r > 0.0)) {
            return Err(TfdError::contract("drift radii must be a nonempty list of positive values"));
        }
        if !(self.eps_denominator >= 0.0) {
            return Err(TfdError::contract("eps_denominator must be ≥ 0"));
        }
        Ok(())
    }
}

/// Queries and the field evaluated at each of them.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldBatch {
    pub queries: Tensor,
    pub field_values: Tensor,
}

pub fn laplace_kernel(x: &[f64], y: &[f64], tau: f64) -> f64 {
    (-euclidean(x, y) / tau).exp()
}

/// Kernel-weighted mean displacement from `x` toward the rows of `samples`.
pub fn mean_shift_field(x: &[f64], samples: &Tensor, tau: f64, eps: f64) -> Vec<f64> {
    let d = x.len();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for j in 0..samples.rows() {
        let y = samples.row(j);
        let k = laplace_kernel(x, y, tau);
        den += k;
        for (n, (yi, xi)) in num.iter_mut().zip(y.iter().zip(x)) {
            *n += k * (yi - xi);
        }
    }
    let den = den.max(eps);
    num.iter().map(|n| n / den).collect()
}

fn check_sides(x: &Tensor, positives: &Tensor, negatives: &Tensor) -> Result<(usize, usize)> {
    let (n, d) = x.require_matrix("drift queries")?;
    let (mp, dp) = positives.require_matrix("drift positives")?;
    let (mn, dn) = negatives.require_matrix("drift negatives")?;
    if dp != d || dn != d {
        return Err(TfdError::dim(format!(
            "drift: query width {d}, positive width {dp}, negative width {dn}"
        )));
    }
    if mp == 0 || mn == 0 {
        return Err(TfdError::contract("drift needs at least one positive and one negative"));
    }
    Ok((n, d))
}

/// Per-radius mean shift of every query toward `samples`, accumulated into
/// `out` with the given sign and weight. With `skip_diagonal`, sample `i`
/// is ignored for query `i`.
fn accumulate_shift(
    x: &Tensor,
    samples: &Tensor,
    radii: &[f64],
    eps: f64,
    sign: f64,
    skip_diagonal: bool,
    out: &mut [f64],
) -> Result<()> {
    let (n, d) = (x.rows(), x.cols());
    let m = samples.rows();
    let mut dist = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            dist[i * m + j] = euclidean(x.row(i), samples.row(j));
        }
    }
    let weight = sign / radii.len() as f64;
    for &tau in radii {
        let mut kernel = Tensor::matrix(n, m, dist.iter().map(|r| (-r / tau).exp()).collect())?;
        if skip_diagonal {
            for i in 0..n.min(m) {
                kernel.data_mut()[i * m + i] = 0.0;
            }
        }
        let pulled = kernel.matmul(samples)?;
        for i in 0..n {
            let mass: f64 = kernel.row(i).iter().sum();
            let denom = mass.max(eps);
            for k in 0..d {
                let shift = (pulled.get(i, k) - x.get(i, k) * mass) / denom;
                out[i * d + k] += weight * shift;
            }
        }
    }
    Ok(())
}

/// Drifting field at every row of `x`. Operates on plain values, so the
/// result is never part of a differentiation record.
pub fn drift_field(x: &Tensor, positives: &Tensor, negatives: &Tensor, cfg: &DriftConfig) -> Result<FieldBatch> {
    cfg.validate()?;
    let (n, d) = check_sides(x, positives, negatives)?;
    let mut field = vec![0.0; n * d];
    accumulate_shift(x, positives, &cfg.radii, cfg.eps_denominator, 1.0, false, &mut field)?;
    accumulate_shift(x, negatives, &cfg.radii, cfg.eps_denominator, -1.0, false, &mut field)?;
    Ok(FieldBatch {
        queries: x.clone(),
        field_values: Tensor::matrix(n, d, field)?,
    })
}

/// Field with the queries themselves as negatives, honoring
/// `cfg.exclude_self`.
pub fn self_repelling_field(x: &Tensor, positives: &Tensor, cfg: &DriftConfig) -> Result<FieldBatch> {
    cfg.validate()?;
    let (n, d) = check_sides(x, positives, x)?;
    let mut field = vec![0.0; n * d];
    accumulate_shift(x, positives, &cfg.radii, cfg.eps_denominator, 1.0, false, &mut field)?;
    accumulate_shift(x, x, &cfg.radii, cfg.eps_denominator, -1.0, cfg.exclude_self, &mut field)?;
    Ok(FieldBatch {
        queries: x.clone(),
        field_values: Tensor::matrix(n, d, field)?,
    })
}

/// Transported targets `x + V(x)`, detached.
pub fn drift_targets(generated: &Tensor, positives: &Tensor, negatives: &Tensor, cfg: &DriftConfig) -> Result<Tensor> {
    let field = drift_field(generated, positives, negatives, cfg)?;
    let data = generated
        .data()
        .iter()
        .zip(field.field_values.data())
        .map(|(g, v)| g + v)
        .collect();
    Tensor::new(generated.shape().to_vec(), data)
}

/// Mean over rows of `‖generated − target‖²`. Targets enter as constants.
pub fn drift_loss<'t>(generated: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    if generated.shape() != targets.shape() {
        return Err(TfdError::dim(format!(
            "drift_loss: generated {:?} vs targets {:?}",
            generated.shape(),
            targets.shape()
        )));
    }
    let n = targets.rows() as f64;
    let target = generated.tape().constant(targets.clone());
    generated.sub(target)?.square()?.sum(None)?.scale(1.0 / n)
}

/// Row layout of a batch split into equally sized condition groups.
///
/// Group `g` owns generated rows `g·gen_per_group ..` and positive rows
/// `g·pos_per_group ..`; drifting fields only mix rows of the same group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupLayout {
    pub groups: usize,
    pub gen_per_group: usize,
    pub pos_per_group: usize,
}

impl GroupLayout {
    pub fn single(generated: usize, positives: usize) -> Self {
        Self {
            groups: 1,
            gen_per_group: generated,
            pos_per_group: positives,
        }
    }

    fn check(&self, generated: &Tensor, positives: &Tensor) -> Result<()> {
        if generated.rows() != self.groups * self.gen_per_group || positives.rows() != self.groups * self.pos_per_group {
            return Err(TfdError::dim(format!(
                "group layout {self:?} does not fit {} generated / {} positive rows",
                generated.rows(),
                positives.rows()
            )));
        }
        Ok(())
    }
}

pub type LayerFeatures = BTreeMap<usize, Tensor>;

/// Per-layer transported targets: queries and negatives are the generated
/// features of a group, positives the real features of the same group.
pub fn tfd_targets(real: &LayerFeatures, generated: &LayerFeatures, layout: GroupLayout, cfg: &DriftConfig) -> Result<LayerFeatures> {
    if real.keys().ne(generated.keys()) {
        return Err(TfdError::contract(format!(
            "layer mismatch: real {:?} vs generated {:?}",
            real.keys().collect::<Vec<_>>(),
            generated.keys().collect::<Vec<_>>()
        )));
    }
    let mut out = BTreeMap::new();
    for (&layer, gen) in generated {
        let pos = &real[&layer];
        layout.check(gen, pos)?;
        let mut parts = Vec::with_capacity(layout.groups);
        for g in 0..layout.groups {
            let z = gen.slice_rows(g * layout.gen_per_group, (g + 1) * layout.gen_per_group);
            let p = pos.slice_rows(g * layout.pos_per_group, (g + 1) * layout.pos_per_group);
            let field = self_repelling_field(&z, &p, cfg)?;
            let moved: Vec<f64> = z.data().iter().zip(field.field_values.data()).map(|(g, v)| g + v).collect();
            parts.push(Tensor::new(z.shape().to_vec(), moved)?);
        }
        out.insert(layer, Tensor::vstack(&parts.iter().collect::<Vec<_>>())?);
    }
    Ok(out)
}

/// Summed multi-layer drifting loss and its per-layer values.
pub struct TfdLoss<'t> {
    pub total: Var<'t>,
    pub per_layer: Vec<(usize, f64)>,
    pub targets: LayerFeatures,
}

/// Regresses each layer's generated features toward fixed targets.
pub fn tfd_loss_with_targets<'t>(generated: &BTreeMap<usize, Var<'t>>, targets: &LayerFeatures) -> Result<TfdLoss<'t>> {
    if generated.keys().ne(targets.keys()) {
        return Err(TfdError::contract("generated features and targets cover different layers"));
    }
    let mut total: Option<Var<'t>> = None;
    let mut per_layer = Vec::with_capacity(generated.len());
    for (&layer, &z) in generated {
        let l = drift_loss(z, &targets[&layer])?;
        per_layer.push((layer, l.item()));
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| TfdError::contract("no feature layers"))?;
    Ok(TfdLoss {
        total,
        per_layer,
        targets: targets.clone(),
    })
}

/// Multi-layer drifting loss with targets computed from the current values.
pub fn tfd_loss<'t>(
    real: &LayerFeatures,
    generated: &BTreeMap<usize, Var<'t>>,
    layout: GroupLayout,
    cfg: &DriftConfig,
) -> Result<TfdLoss<'t>> {
    let values: LayerFeatures = generated.iter().map(|(&l, v)| (l, (*v.value()).clone())).collect();
    let targets = tfd_targets(real, &values, layout, cfg)?;
    tfd_loss_with_targets(generated, &targets)
}
