//! Base distributions, unnormalized target densities, and the planar-flow
//! baseline.

mod betabinom;
mod planar;
pub(crate) mod special;

pub use betabinom::BetaBinomialModel;
pub use planar::{
    planar_constrain, planar_forward, planar_inverse, PlanarLayer, PlanarStack,
};
pub(crate) use planar::stack_forward as planar_stack_forward;
pub use special::{ln_beta, ln_gamma, log_binomial};

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::rng::Rng;
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian q0, optionally with learnable location and log-scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseDistribution {
    pub dim: usize,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub learnable: bool,
}

impl BaseDistribution {
    pub fn standard(dim: usize) -> Self {
        BaseDistribution { dim, mu: vec![0.0; dim], log_sigma: vec![0.0; dim], learnable: false }
    }

    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>, learnable: bool) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: log_sigma.len(),
                context: "base distribution mu vs log_sigma",
            });
        }
        Ok(BaseDistribution { dim: mu.len(), mu, log_sigma, learnable })
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
                context: "base distribution input",
            });
        }
        Ok(gaussian_log_density(&self.mu, &self.log_sigma, z))
    }

    /// Reparameterized draw z = mu + sigma ⊙ eps.
    pub fn reparam(&self, eps: &[f64]) -> Vec<f64> {
        eps.iter()
            .zip(&self.mu)
            .zip(&self.log_sigma)
            .map(|((&e, &m), &ls)| m + ls.exp() * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim);
        self.reparam(&eps)
    }
}

/// Diagonal Gaussian log-density, generic so learnable (mu, log_sigma) stay
/// differentiable during training.
pub(crate) fn gaussian_log_density<R: Scalar>(mu: &[R], log_sigma: &[R], z: &[R]) -> R {
    let mut acc: Option<R> = None;
    for i in 0..z.len() {
        let standardized = (z[i] - mu[i]) / log_sigma[i].exp();
        let term = -standardized.square().scale(0.5) - log_sigma[i] - log_sigma[i].lift(HALF_LN_2PI);
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    acc.expect("dimension >= 1")
}

/// Which toy ring density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyName {
    U1,
    U2,
}

/// Whether the ring term uses ‖z‖² (the default) or plain ‖z‖.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingNorm {
    Squared,
    Plain,
}

/// Unnormalized 2-D energy U(z); the target density is p(z) ∝ exp(-U(z)).
/// Both variants are bimodal in z1 with modes near z1 = ±2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyTarget {
    pub name: EnergyName,
    pub ring_norm: RingNorm,
}

impl EnergyTarget {
    pub fn u1() -> Self {
        EnergyTarget { name: EnergyName::U1, ring_norm: RingNorm::Squared }
    }

    pub fn u2() -> Self {
        EnergyTarget { name: EnergyName::U2, ring_norm: RingNorm::Squared }
    }

    fn ring_constant(&self) -> f64 {
        match self.name {
            EnergyName::U1 => 4.0,
            EnergyName::U2 => 2.0,
        }
    }

    /// U(z) for z in R².
    pub fn energy(&self, z: &[f64]) -> f64 {
        self.energy_with(z)
    }

    /// -U(z).
    pub fn log_unnorm(&self, z: &[f64]) -> f64 {
        -self.energy(z)
    }

    pub(crate) fn energy_with<R: Scalar>(&self, z: &[R]) -> R {
        assert_eq!(z.len(), 2, "energy targets are 2-dimensional");
        let norm_sq = z[0].square() + z[1].square();
        let ring_arg = match self.ring_norm {
            RingNorm::Squared => norm_sq,
            RingNorm::Plain => norm_sq.sqrt(),
        };
        let ring = ring_arg
            .add_const(-self.ring_constant())
            .scale(1.0 / 0.4)
            .square()
            .scale(0.5);
        let bump = |center: f64| {
            z[0].add_const(-center).scale(1.0 / 0.8).square().scale(-0.5).exp()
        };
        let wells = (bump(2.0) + bump(-2.0)).ln();
        ring - wells
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn standard_base_log_density_at_origin() {
        let base = BaseDistribution::standard(2);
        let expected = -(2.0 * std::f64::consts::PI).ln(); // -1.837877...
        assert!((base.log_density(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn base_density_integrates_to_one() {
        // midpoint rule on [-6,6]² at 400², error <= 1e-3
        let base = BaseDistribution::new(vec![0.3, -0.2], vec![0.1f64.ln(), 0.0], false)
            .unwrap();
        let n = 400;
        let (lo, hi) = (-6.0, 6.0);
        let cell = (hi - lo) / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = [lo + (i as f64 + 0.5) * cell, lo + (j as f64 + 0.5) * cell];
                mass += base.log_density(&z).unwrap().exp() * cell * cell;
            }
        }
        assert!((mass - 1.0).abs() <= 1e-3, "grid mass {mass}");
    }

    #[test]
    fn reparam_applies_location_scale() {
        let base =
            BaseDistribution::new(vec![1.0, -2.0], vec![0.0, 2.0f64.ln()], true).unwrap();
        let z = base.reparam(&[0.5, -1.0]);
        assert_eq!(z, vec![1.5, -4.0]);
    }

    #[test]
    fn u1_vanishes_on_ring_crossing() {
        // z = (2, 0): ring term zero, wells ≈ ln(1 + e^{-12.5})
        let u1 = EnergyTarget::u1();
        assert!(u1.energy(&[2.0, 0.0]).abs() < 1e-5);
    }

    #[test]
    fn u1_at_origin_closed_form() {
        // ½(-4/0.4)² = 50; wells: -ln(2 e^{-3.125}) = 3.125 - ln 2
        let u1 = EnergyTarget::u1();
        let expected = 50.0 + 3.125 - 2.0f64.ln();
        assert!((u1.energy(&[0.0, 0.0]) - expected).abs() < 1e-9);
        assert!((expected - 52.43185).abs() < 1e-5);
    }

    #[test]
    fn u2_uses_radius_two_ring() {
        let u2 = EnergyTarget::u2();
        // ‖z‖² = 2 on the ring of the squared variant
        let z = [2.0f64.sqrt(), 0.0];
        let ring_part = u2.energy(&z)
            + (f64::exp(-0.5 * ((z[0] - 2.0) / 0.8).powi(2))
                + f64::exp(-0.5 * ((z[0] + 2.0) / 0.8).powi(2)))
            .ln();
        assert!(ring_part.abs() < 1e-12);
    }

    #[test]
    fn energies_even_in_z1() {
        let mut rng = Rng::new(15);
        for target in [EnergyTarget::u1(), EnergyTarget::u2()] {
            for _ in 0..100 {
                let z = [rng.uniform_in(-4.0, 4.0), rng.uniform_in(-4.0, 4.0)];
                let flipped = [-z[0], z[1]];
                assert!((target.energy(&z) - target.energy(&flipped)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plain_ring_norm_moves_the_ring() {
        let squared = EnergyTarget::u1();
        let plain = EnergyTarget { ring_norm: RingNorm::Plain, ..EnergyTarget::u1() };
        // on ‖z‖ = 4 the plain variant's ring term vanishes instead
        let z = [0.0, 4.0];
        assert!(plain.energy(&z) < squared.energy(&z));
    }

    #[test]
    fn mode_masses_are_symmetric() {
        // exp(-U) has finite mass on [-6,6]² and the two z1 modes carry equal
        // mass to 1%
        for target in [EnergyTarget::u1(), EnergyTarget::u2()] {
            let n = 300;
            let (lo, hi) = (-6.0, 6.0);
            let cell = (hi - lo) / n as f64;
            let (mut pos, mut neg, mut total) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let z = [lo + (i as f64 + 0.5) * cell, lo + (j as f64 + 0.5) * cell];
                    let p = (-target.energy(&z)).exp() * cell * cell;
                    total += p;
                    if z[0] > 0.5 {
                        pos += p;
                    } else if z[0] < -0.5 {
                        neg += p;
                    }
                }
            }
            assert!(total.is_finite() && total > 0.0);
            let asymmetry = (pos - neg).abs() / pos.max(neg);
            assert!(asymmetry < 0.01, "mode asymmetry {asymmetry}");
        }
    }
}
