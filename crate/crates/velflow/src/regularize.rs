//! Flow regularizers: geodesic path-length and inverse consistency.
//!
//! The geodesic penalty is the Riemann sum Σ_cells dt·E[‖v(z_cell)‖²] along
//! each sample's trajectory — the discretized path energy of the flow under
//! the identity inner product. The inverse-consistency penalty is the mean
//! ℓ2 residual between a point and its forward-then-backward image.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sq_norm, Scalar};
use crate::flow::{flow_pass, Direction, FlowModel, PassOptions};
use crate::{Error, Result};

/// Regularization constants; a zero weight disables the penalty entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub gamma_geodesic: f64,
    pub gamma_inverse: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights::none()
    }
}

impl RegWeights {
    pub fn none() -> Self {
        RegWeights { gamma_geodesic: 0.0, gamma_inverse: 0.0 }
    }

    pub fn geodesic(gamma: f64) -> Self {
        RegWeights { gamma_geodesic: gamma, gamma_inverse: 0.0 }
    }

    pub fn inverse(gamma: f64) -> Self {
        RegWeights { gamma_geodesic: 0.0, gamma_inverse: gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_geodesic < 0.0 || self.gamma_inverse < 0.0 {
            return Err(Error::InvalidSpec("regularization weights must be >= 0".into()));
        }
        Ok(())
    }

    pub fn any_active(&self) -> bool {
        self.gamma_geodesic > 0.0 || self.gamma_inverse > 0.0
    }
}

/// ℓ2 distance with a zero-residual branch: the norm's kink at zero is given
/// subgradient zero, so exactly self-consistent flows contribute no gradient
/// noise.
pub(crate) fn residual_norm<R: Scalar>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<R> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let sq = sq_norm(&diff);
    if sq.value() == 0.0 {
        sq.lift(0.0)
    } else {
        sq.sqrt()
    }
}

/// Γ̂ = Σ over all K·T cells of dt · mean over the batch of ‖v_k(z_cell)‖².
pub fn geodesic_penalty(
    model: &FlowModel,
    batch: &[Vec<f64>],
    context: Option<&[f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyData("geodesic penalty batch"));
    }
    let blocks = model.block_params();
    let mut total = 0.0;
    for z0 in batch {
        let out = flow_pass(
            &model.spec,
            &blocks,
            z0,
            context,
            Direction::Forward,
            PassOptions { logdet: false, geodesic: true, trajectory: false },
            None,
        )?;
        total += out.geodesic.expect("geodesic requested");
    }
    Ok(total / batch.len() as f64)
}

/// Mean over the batch of ‖z0 − φ⁻¹(φ(z0))‖₂.
pub fn inverse_consistency_penalty(
    model: &FlowModel,
    batch: &[Vec<f64>],
    context: Option<&[f64]>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyData("inverse consistency batch"));
    }
    let blocks = model.block_params();
    let opts = PassOptions { logdet: false, geodesic: false, trajectory: false };
    let mut total = 0.0;
    for z0 in batch {
        let fwd = flow_pass(&model.spec, &blocks, z0, context, Direction::Forward, opts, None)?;
        let back =
            flow_pass(&model.spec, &blocks, &fwd.z, context, Direction::Inverse, opts, None)?;
        total += residual_norm(z0, &back.z);
    }
    Ok(total / batch.len() as f64)
}
