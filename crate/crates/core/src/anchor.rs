//! Anchor-margin coverage regularizer.
//!
//! Each anchor `aᵢ` gets a generated-sample support `sᵢ` (Laplace KDE at
//! bandwidth `h`) and a self-support `s̄ᵢ` from the other anchors at
//! bandwidth `2h`. Anchors with `sᵢ < α·s̄ᵢ` are penalized by the hinge
//! `max(0, α·s̄ᵢ − sᵢ)`, averaged over anchors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::drift::{GroupLayout, LayerFeatures};
use crate::error::{Result, TfdError};
use crate::numerics::{euclidean, Tensor, Var};
use crate::rng::SeedStream;

/// Normalizer of the generated-support sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportNormalizer {
    /// `1/M`, the number of anchors.
    #[default]
    Anchors,
    /// `1/N`, the number of generated samples.
    Generated,
}

/// Frozen anchor features per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorBank {
    pub anchors: LayerFeatures,
    pub bandwidth: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportReport {
    pub generated_support: Vec<f64>,
    pub self_support: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub violations: usize,
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(TfdError::contract(format!("bandwidth must be positive, got {h}")))
    }
}

/// Block mask `[groups·M × groups·N]` with ones on same-group pairs.
fn group_mask(layout: GroupLayout) -> Tensor {
    let (m, n) = (layout.pos_per_group, layout.gen_per_group);
    let cols = layout.groups * n;
    let mut mask = Tensor::zeros(&[layout.groups * m, cols]);
    for g in 0..layout.groups {
        for i in g * m..(g + 1) * m {
            for j in g * n..(g + 1) * n {
                mask.data_mut()[i * cols + j] = 1.0;
            }
        }
    }
    mask
}

fn grouped_support<'t>(
    anchors: &Tensor,
    generated: Var<'t>,
    layout: GroupLayout,
    h: f64,
    normalizer: SupportNormalizer,
) -> Result<Var<'t>> {
    check_bandwidth(h)?;
    let tape = generated.tape();
    let gshape = generated.shape();
    if anchors.rows() != layout.groups * layout.pos_per_group || gshape.first() != Some(&(layout.groups * layout.gen_per_group)) {
        return Err(TfdError::dim(format!(
            "anchor layout {layout:?} does not fit {} anchors / {:?} generated",
            anchors.rows(),
            gshape
        )));
    }
    let a = tape.constant(anchors.clone());
    let mut k = a.pairwise_distance(generated)?.scale(-1.0 / h)?.exp()?;
    if layout.groups > 1 {
        k = k.mul(tape.constant(group_mask(layout)))?;
    }
    let norm = match normalizer {
        SupportNormalizer::Anchors => layout.pos_per_group,
        SupportNormalizer::Generated => layout.gen_per_group,
    };
    k.sum(Some(1))?.scale(1.0 / norm as f64)
}

/// `sᵢ = (1/M)·Σⱼ exp(−‖aᵢ − zⱼ‖/h)` for every anchor; differentiable in
/// the generated points.
pub fn generated_support<'t>(anchors: &Tensor, generated: Var<'t>, h: f64, normalizer: SupportNormalizer) -> Result<Var<'t>> {
    let n = generated.shape().first().copied().unwrap_or(0);
    grouped_support(anchors, generated, GroupLayout::single(n, anchors.rows()), h, normalizer)
}

/// `s̄ᵢ = (1/(M−1))·Σ_{k≠i} exp(−‖aᵢ − a_k‖/(2h))`.
pub fn self_support(anchors: &Tensor, h: f64) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    let m = anchors.rows();
    if m < 2 {
        return Err(TfdError::contract(format!("self-support needs at least 2 anchors, got {m}")));
    }
    Ok((0..m)
        .map(|i| {
            (0..m)
                .filter(|&k| k != i)
                .map(|k| (-euclidean(anchors.row(i), anchors.row(k)) / (2.0 * h)).exp())
                .sum::<f64>()
                / (m - 1) as f64
        })
        .collect())
}

/// Hinge loss over anchor groups; each group's anchors only see that
/// group's generated rows. Returns the mean hinge over all anchors.
pub fn grouped_margin_loss<'t>(
    anchors: &Tensor,
    generated: Var<'t>,
    layout: GroupLayout,
    h: f64,
    alpha: f64,
    normalizer: SupportNormalizer,
) -> Result<(Var<'t>, SupportReport)> {
    if !(alpha >= 0.0) {
        return Err(TfdError::contract(format!("alpha must be ≥ 0, got {alpha}")));
    }
    let support = grouped_support(anchors, generated, layout, h, normalizer)?;
    let mut sbar = Vec::with_capacity(anchors.rows());
    for g in 0..layout.groups {
        let block = anchors.slice_rows(g * layout.pos_per_group, (g + 1) * layout.pos_per_group);
        sbar.extend(self_support(&block, h)?);
    }
    let rho: Vec<f64> = sbar.iter().map(|s| alpha * s).collect();
    let s_values = support.value().data().to_vec();
    let violations = s_values.iter().zip(&rho).filter(|(s, r)| s < r).count();
    let tape = generated.tape();
    let loss = tape.constant(Tensor::vector(rho.clone())).sub(support)?.relu()?.mean(None)?;
    Ok((
        loss,
        SupportReport {
            generated_support: s_values,
            self_support: sbar,
            thresholds: rho,
            violations,
        },
    ))
}

/// `(1/M)·Σᵢ max(0, α·s̄ᵢ − sᵢ)` with its support report.
pub fn anchor_margin_loss<'t>(
    anchors: &Tensor,
    generated: Var<'t>,
    h: f64,
    alpha: f64,
    normalizer: SupportNormalizer,
) -> Result<(Var<'t>, SupportReport)> {
    let n = generated.shape().first().copied().unwrap_or(0);
    grouped_margin_loss(anchors, generated, GroupLayout::single(n, anchors.rows()), h, alpha, normalizer)
}

/// Uniform subsample of `m` rows per layer, without replacement. The same
/// row indices are used for every layer.
pub fn build_anchor_bank(real: &LayerFeatures, m: usize, bandwidth: f64, alpha: f64, seed: &mut SeedStream) -> Result<AnchorBank> {
    let available = real.values().map(Tensor::rows).min().unwrap_or(0);
    if m > available {
        return Err(TfdError::contract(format!("asked for {m} anchors, only {available} features available")));
    }
    let idx = if m == available {
        (0..m).collect()
    } else {
        let mut idx = seed.choose_indices(available, m);
        idx.sort_unstable();
        idx
    };
    let anchors: BTreeMap<usize, Tensor> = real.iter().map(|(&l, t)| (l, t.select_rows(&idx))).collect();
    Ok(AnchorBank {
        anchors,
        bandwidth,
        alpha,
    })
}

/// Median of all pairwise row distances; the bandwidth heuristic.
pub fn median_pairwise_distance(points: &Tensor) -> Option<f64> {
    let n = points.rows();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| euclidean(points.row(i), points.row(j)))
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) })
}
