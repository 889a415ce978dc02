//! Dormand-Prince 5(4) embedded pair with standard step-size control.
//!
//! Mirrors the classic `ode45` configuration: safety factor 0.9, step growth
//! clamped to [0.2, 5]. Used as the high-accuracy forward integrator against
//! which the Euler flow is measured.

use crate::velocity::VelocityField;
use crate::{Error, Result};

// Butcher tableau (Dormand & Prince 1980).
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order solution weights (identical to the last A row; stage 7 is unused
// in the solution but feeds the embedded error estimate).
const B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
// b5 - b4: weights of the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MIN_STEP: f64 = 1e-14;

/// Outcome of one adaptive integration.
#[derive(Clone, Debug)]
pub struct RkResult {
    pub z_final: Vec<f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// Largest accepted local error, expressed in the units of the requested
    /// relative tolerance; at most `rtol` on success.
    pub max_error_estimate: f64,
}

/// Integrate the autonomous system `dz/dt = f(z)` from 0 to `t1`.
pub fn rk45_system(
    f: impl Fn(&[f64]) -> Vec<f64>,
    z0: &[f64],
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<RkResult> {
    assert!(rtol > 0.0 && atol > 0.0, "tolerances must be positive");
    let dim = z0.len();
    let mut z = z0.to_vec();
    let mut t = 0.0;
    let mut accepted = 0;
    let mut rejected = 0;
    let mut max_err = 0.0f64;

    if t1 == 0.0 {
        return Ok(RkResult { z_final: z, steps_accepted: 0, steps_rejected: 0, max_error_estimate: 0.0 });
    }

    // optimistic first attempt: the controller shrinks quickly on rejection,
    // and trivially smooth fields cover the interval in one accepted step
    let mut h = t1;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];

    while t < t1 {
        if h < MIN_STEP {
            return Err(Error::StepUnderflow { t });
        }
        if t + h > t1 {
            h = t1 - t;
        }

        for stage in 0..7 {
            let mut y = z.clone();
            for (prev, k_prev) in k.iter().enumerate().take(stage) {
                let a = A[stage][prev];
                if a != 0.0 {
                    for i in 0..dim {
                        y[i] += h * a * k_prev[i];
                    }
                }
            }
            let _ = C[stage]; // autonomous field: stage times affect only y
            k[stage] = f(&y);
        }

        let mut z_new = z.clone();
        for (stage, k_stage) in k.iter().enumerate() {
            if B5[stage] != 0.0 {
                for i in 0..dim {
                    z_new[i] += h * B5[stage] * k_stage[i];
                }
            }
        }

        // scaled RMS error of the embedded 4th-order estimate
        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (stage, k_stage) in k.iter().enumerate() {
                e += E[stage] * k_stage[i];
            }
            e *= h;
            let tol = atol + rtol * z[i].abs().max(z_new[i].abs());
            err_sq += (e / tol) * (e / tol);
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            z = z_new;
            accepted += 1;
            max_err = max_err.max(err);
        } else {
            rejected += 1;
        }

        let factor = if err == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        h *= factor;
    }

    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "rk45", phase: "forward" });
    }
    Ok(RkResult {
        z_final: z,
        steps_accepted: accepted,
        steps_rejected: rejected,
        max_error_estimate: max_err * rtol,
    })
}

/// Integrate a velocity field (optionally with context) as the ground truth
/// for the Euler flow.
pub fn rk45_integrate(
    field: &VelocityField,
    z0: &[f64],
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<RkResult> {
    rk45_integrate_ctx(field, z0, None, t1, rtol, atol)
}

pub fn rk45_integrate_ctx(
    field: &VelocityField,
    z0: &[f64],
    context: Option<&[f64]>,
    t1: f64,
    rtol: f64,
    atol: f64,
) -> Result<RkResult> {
    rk45_system(|z| field.eval(z, context).expect("field evaluation failed"), z0, t1, rtol, atol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mat;
    use crate::velocity::VelocityField;

    #[test]
    fn exponential_growth_reaches_e() {
        // dz/dt = z, z(0) = 1 -> z(1) = e
        let r = rk45_system(|z| vec![z[0]], &[1.0], 1.0, 1e-10, 1e-12).unwrap();
        assert!((r.z_final[0] - std::f64::consts::E).abs() < 1e-8);
        assert!(r.max_error_estimate <= 1e-10);
    }

    #[test]
    fn zero_field_is_exact_in_one_step() {
        let field = VelocityField::constant(&[0.0, 0.0]);
        let r = rk45_integrate(&field, &[2.0, -3.0], 1.0, 1e-10, 1e-12).unwrap();
        assert_eq!(r.z_final, vec![2.0, -3.0]);
        assert_eq!(r.steps_rejected, 0);
        assert_eq!(r.steps_accepted, 1);
        assert_eq!(r.max_error_estimate, 0.0);
    }

    #[test]
    fn rotation_field_lands_on_circle() {
        let a = Mat::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        let field = VelocityField::linear(&a, &[0.0, 0.0]);
        let r = rk45_integrate(&field, &[1.0, 0.0], 1.0, 1e-10, 1e-12).unwrap();
        assert!((r.z_final[0] - 1.0f64.cos()).abs() < 1e-8);
        assert!((r.z_final[1] - 1.0f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let a = Mat::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        let field = VelocityField::linear(&a, &[0.0, 0.0]);
        let exact = [1.0f64.cos(), 1.0f64.sin()];
        let mut errs = Vec::new();
        for rtol in [1e-4, 1e-6, 1e-8] {
            let r = rk45_integrate(&field, &[1.0, 0.0], 1.0, rtol, rtol * 1e-2).unwrap();
            let err: f64 = r
                .z_final
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            errs.push(err.max(1e-16));
        }
        // tightening rtol by 1e2 should reduce the error by at least 10x
        assert!(errs[0] / errs[1] >= 10.0, "{errs:?}");
        assert!(errs[1] / errs[2] >= 10.0, "{errs:?}");
    }
}
