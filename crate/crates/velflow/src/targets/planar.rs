//! Planar normalizing flow, the single-bottleneck baseline:
//! f(z) = z + u h(wᵀz + b) with h = tanh.
//!
//! Invertibility needs wᵀu >= -1, enforced by reprojecting u before every
//! use. The inverse has no closed form but reduces to a monotone scalar
//! equation in wᵀz, solved by safeguarded Newton.

use crate::autodiff::{dot, sq_norm, Scalar};
use crate::rng::Rng;
use crate::targets::special::{ln_abs, softplus};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarLayer {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

/// Reproject `u` so that ŵᵀû >= -1:
/// û = u + (m(wᵀu) - wᵀu) w / ‖w‖², with m(x) = -1 + softplus(x).
pub fn planar_constrain(u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    constrain_with(u, w)
}

pub(crate) fn constrain_with<R: Scalar>(u: &[R], w: &[R]) -> Result<Vec<R>> {
    assert_eq!(u.len(), w.len(), "planar u/w length mismatch");
    let w_sq = sq_norm(w);
    if w_sq.value() == 0.0 {
        return Err(Error::InvalidSpec("planar constraint requires w != 0".into()));
    }
    let wu = dot(w, u);
    let m = softplus(wu).add_const(-1.0);
    let coef = (m - wu) / w_sq;
    Ok(u.iter().zip(w).map(|(&ui, &wi)| ui + wi * coef).collect())
}

impl PlanarLayer {
    /// The layer with `u` replaced by its invertibility projection.
    pub fn constrained(&self) -> Result<PlanarLayer> {
        Ok(PlanarLayer {
            u: planar_constrain(&self.u, &self.w)?,
            w: self.w.clone(),
            b: self.b,
        })
    }
}

/// Apply one (already constrained) planar layer; returns (z', log|det J|).
pub fn planar_forward(layer: &PlanarLayer, z: &[f64]) -> (Vec<f64>, f64) {
    layer_forward(&layer.u, &layer.w, layer.b, z)
}

fn layer_forward<R: Scalar>(u_hat: &[R], w: &[R], b: R, z: &[R]) -> (Vec<R>, R) {
    let pre = dot(w, z) + b;
    let h = pre.tanh();
    let z_out: Vec<R> = z.iter().zip(u_hat).map(|(&zi, &ui)| zi + ui * h).collect();
    // ψᵀû = h'(pre) wᵀû
    let h_prime = h.square().sub_from(1.0);
    let logdet = ln_abs((h_prime * dot(w, u_hat)).add_const(1.0));
    (z_out, logdet)
}

/// Invert one constrained layer by solving α + (wᵀû) tanh(α + b) = wᵀz' for
/// α = wᵀz. The left side is strictly increasing, so Newton with a bisection
/// safeguard always converges.
pub fn planar_inverse(layer: &PlanarLayer, z_out: &[f64]) -> Vec<f64> {
    let wu: f64 = dot(&layer.w, &layer.u);
    let target: f64 = dot(&layer.w, z_out);
    let g = |alpha: f64| alpha + wu * (alpha + layer.b).tanh() - target;

    // bracket the root
    let (mut lo, mut hi) = (target - wu.abs() - 1.0, target + wu.abs() + 1.0);
    debug_assert!(g(lo) <= 0.0 && g(hi) >= 0.0);
    let mut alpha = target;
    for _ in 0..200 {
        let val = g(alpha);
        if val.abs() < 1e-14 {
            break;
        }
        if val > 0.0 {
            hi = alpha;
        } else {
            lo = alpha;
        }
        let t = (alpha + layer.b).tanh();
        let deriv = 1.0 + wu * (1.0 - t * t);
        let newton = alpha - val / deriv;
        alpha = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let h = (alpha + layer.b).tanh();
    z_out.iter().zip(&layer.u).map(|(&zi, &ui)| zi - ui * h).collect()
}

/// A trainable stack of planar layers with flat parameter storage
/// `[u (d), w (d), b] * layers`. Constraint projection is applied inside the
/// forward pass, so raw parameters stay unconstrained for the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarStack {
    pub dim: usize,
    pub n_layers: usize,
    pub params: Vec<f64>,
}

impl PlanarStack {
    pub fn param_count(dim: usize, n_layers: usize) -> usize {
        n_layers * (2 * dim + 1)
    }

    pub fn init(dim: usize, n_layers: usize, seed: u64) -> Result<Self> {
        if dim == 0 || n_layers == 0 {
            return Err(Error::InvalidSpec("planar stack needs dim >= 1, layers >= 1".into()));
        }
        let mut rng = Rng::new(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut params = Vec::with_capacity(Self::param_count(dim, n_layers));
        for _ in 0..n_layers {
            for _ in 0..2 * dim {
                params.push(rng.uniform_in(-scale, scale));
            }
            params.push(rng.uniform_in(-scale, scale));
        }
        Ok(PlanarStack { dim, n_layers, params })
    }

    pub fn from_params(dim: usize, n_layers: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(dim, n_layers) {
            return Err(Error::DimensionMismatch {
                expected: Self::param_count(dim, n_layers),
                got: params.len(),
                context: "planar stack parameters",
            });
        }
        Ok(PlanarStack { dim, n_layers, params })
    }

    /// The constrained layers currently encoded by the parameters.
    pub fn layers(&self) -> Result<Vec<PlanarLayer>> {
        let d = self.dim;
        (0..self.n_layers)
            .map(|l| {
                let base = l * (2 * d + 1);
                let u = &self.params[base..base + d];
                let w = &self.params[base + d..base + 2 * d];
                PlanarLayer { u: u.to_vec(), w: w.to_vec(), b: self.params[base + 2 * d] }
                    .constrained()
            })
            .collect()
    }

    /// Push a point through the stack; returns (z_out, Σ log|det|).
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        stack_forward(self.dim, self.n_layers, &self.params, z)
    }

    /// Invert the stack (layers in reverse), then recompute the forward
    /// log-determinant from the recovered input.
    pub fn log_density(&self, base: &crate::targets::BaseDistribution, z: &[f64]) -> Result<f64> {
        let layers = self.layers()?;
        let mut current = z.to_vec();
        for layer in layers.iter().rev() {
            current = planar_inverse(layer, &current);
        }
        let (_, sum_logdet) = self.forward(&current)?;
        Ok(base.log_density(&current)? - sum_logdet)
    }
}

pub(crate) fn stack_forward<R: Scalar>(
    dim: usize,
    n_layers: usize,
    params: &[R],
    z: &[R],
) -> Result<(Vec<R>, R)> {
    assert_eq!(z.len(), dim, "planar stack input dimension");
    let mut current = z.to_vec();
    let mut sum_logdet: Option<R> = None;
    for l in 0..n_layers {
        let base = l * (2 * dim + 1);
        let u = &params[base..base + dim];
        let w = &params[base + dim..base + 2 * dim];
        let b = params[base + 2 * dim];
        let u_hat = constrain_with(u, w)?;
        let (next, logdet) = layer_forward(&u_hat, w, b, &current);
        current = next;
        sum_logdet = Some(match sum_logdet {
            None => logdet,
            Some(acc) => acc + logdet,
        });
    }
    Ok((current, sum_logdet.expect("n_layers >= 1")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::finite_diff_grad;
    use crate::rng::Rng;

    #[test]
    fn constrain_at_orthogonal_u_w() {
        // wᵀu = 0: m(0) = -1 + ln 2, so û = u + (ln 2 - 1) w / ‖w‖²
        let u = vec![1.0, 0.0];
        let w = vec![0.0, 2.0];
        let u_hat = planar_constrain(&u, &w).unwrap();
        let shift = (-1.0 + 2.0f64.ln()) / 4.0 * 2.0;
        assert!((u_hat[0] - 1.0).abs() < 1e-15);
        assert!((u_hat[1] - shift).abs() < 1e-15);
    }

    #[test]
    fn constrain_asymptote_for_large_inner_product() {
        // wᵀu large: m(x) ≈ x - 1, so û ≈ u - w/‖w‖²
        let u = vec![20.0];
        let w = vec![1.0];
        let u_hat = planar_constrain(&u, &w).unwrap();
        assert!((u_hat[0] - 19.0).abs() < 1e-6);
    }

    #[test]
    fn constraint_guarantees_invertibility_margin() {
        let mut rng = Rng::new(404);
        for _ in 0..100 {
            let u: Vec<f64> = (0..3).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let u_hat = planar_constrain(&u, &w).unwrap();
            let wu: f64 = dot(&w, &u_hat);
            assert!(wu > -1.0, "wᵀû = {wu} violates the bound");
        }
    }

    #[test]
    fn zero_w_rejected() {
        assert!(planar_constrain(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_u_is_identity() {
        let layer = PlanarLayer { u: vec![0.0, 0.0], w: vec![1.0, -1.0], b: 0.3 };
        let (z, logdet) = planar_forward(&layer, &[0.4, 0.9]);
        assert_eq!(z, vec![0.4, 0.9]);
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn one_dimensional_hand_case() {
        // u = 0.5, w = 1, b = 0, z = 0: z' = 0, log|det| = ln(1.5)
        let layer = PlanarLayer { u: vec![0.5], w: vec![1.0], b: 0.0 };
        let (z, logdet) = planar_forward(&layer, &[0.0]);
        assert_eq!(z, vec![0.0]);
        assert!((logdet - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        let mut rng = Rng::new(7070);
        for _ in 0..20 {
            let u: Vec<f64> = (0..2).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            if sq_norm(&w) < 1e-3 {
                continue;
            }
            let layer = PlanarLayer { u, w, b: rng.uniform_in(-1.0, 1.0) }.constrained().unwrap();
            let z: Vec<f64> = (0..2).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let (_, logdet) = planar_forward(&layer, &z);
            // finite-difference Jacobian, 2x2 determinant
            let f0 = finite_diff_grad(|p| planar_forward(&layer, p).0[0], &z, 1e-6);
            let f1 = finite_diff_grad(|p| planar_forward(&layer, p).0[1], &z, 1e-6);
            let det = f0[0] * f1[1] - f0[1] * f1[0];
            let expected = det.abs().ln();
            assert!(
                (logdet - expected).abs() / expected.abs().max(1e-2) < 1e-5,
                "logdet {logdet} vs fd {expected}"
            );
        }
    }

    #[test]
    fn inverse_recovers_input() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let u: Vec<f64> = (0..2).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            if sq_norm(&w) < 1e-3 {
                continue;
            }
            let layer = PlanarLayer { u, w, b: rng.uniform_in(-1.0, 1.0) }.constrained().unwrap();
            let z: Vec<f64> = (0..2).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let (z_out, _) = planar_forward(&layer, &z);
            let recovered = planar_inverse(&layer, &z_out);
            for i in 0..2 {
                assert!((recovered[i] - z[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn stack_roundtrip_density_is_consistent() {
        let stack = PlanarStack::init(2, 3, 99).unwrap();
        let base = crate::targets::BaseDistribution::standard(2);
        let z0 = [0.3, -0.8];
        let (z_out, logdet) = stack.forward(&z0).unwrap();
        // log q(z_out) computed via inversion should equal log q0(z0) - logdet
        let direct = base.log_density(&z0).unwrap() - logdet;
        let via_inverse = stack.log_density(&base, &z_out).unwrap();
        assert!((direct - via_inverse).abs() < 1e-9);
    }
}
