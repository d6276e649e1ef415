//! Loss-ranked data selection.
//!
//! Two reductions of the working batch, both keeping the highest-loss
//! examples: support selection feeds the ascent (perturbation) step, and
//! redundant-example elimination shrinks the descent step — per-example
//! training loss standing in for gradient magnitude, whose influence it
//! bounds.

use serde::{Deserialize, Serialize};

use crate::ceil_frac;
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::nn::{self, Batch, NetworkSpec, ParamVector};

/// Where the descent-step subset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EreSource {
    /// Reduce the already-selected support batch (default).
    #[default]
    Support,
    /// Reduce the full mini-batch instead.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Fraction of the batch kept as support examples for the ascent step.
    pub inner_frac: f64,
    /// Fraction kept for the descent step.
    pub outer_frac: f64,
    pub ere_from: EreSource,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            inner_frac: 0.4,
            outer_frac: 0.4,
            ere_from: EreSource::Support,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("selection.inner_frac", self.inner_frac),
            ("selection.outer_frac", self.outer_frac),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name}: must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Indices of the `j` largest losses, ties broken by lower index,
/// returned sorted ascending.
pub fn top_j_indices(losses: &[f64], j: usize) -> Result<Vec<usize>> {
    let n = losses.len();
    if j == 0 || j > n {
        return Err(Error::SelectionOutOfRange { j, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        losses[b]
            .total_cmp(&losses[a])
            .then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(j).collect();
    kept.sort_unstable();
    Ok(kept)
}

fn keep_top_fraction(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
    frac: f64,
) -> Result<Batch> {
    let losses = nn::per_example_losses_on(spec, params, mask, batch)?;
    let j = ceil_frac(frac, batch.n()).max(1);
    let kept = top_j_indices(&losses, j)?;
    Ok(batch.subset(&kept))
}

/// Support batch for the ascent step: the top `inner_frac` of examples by
/// loss, input order preserved.
pub fn select_support(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
    cfg: &SelectionConfig,
) -> Result<Batch> {
    keep_top_fraction(spec, params, mask, batch, cfg.inner_frac)
}

/// Descent batch after dropping low-loss examples: the top `outer_frac`
/// by loss, input order preserved.
pub fn eliminate_redundant(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
    cfg: &SelectionConfig,
) -> Result<Batch> {
    keep_top_fraction(spec, params, mask, batch, cfg.outer_frac)
}
