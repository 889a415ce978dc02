//! Independent ground-truth computations.
//!
//! Nothing in this module shares code with the implementation paths it
//! checks: the adaptive integrator is the reference for Euler flows, the
//! LU log-determinant for the Taylor approximations, finite differences for
//! the tape, Metropolis-Hastings for posterior moments.

mod mcmc;
mod rk45;

pub use mcmc::{mh_sample, McmcChain, McmcConfig, ProposalScale};
pub use rk45::{rk45_integrate, rk45_system, RkResult};

use crate::autodiff::Mat;
use crate::{Error, Result};

/// Central finite differences per coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// `log|det(I + dt J)|` via LU with partial pivoting, with the determinant
/// sign reported separately so orientation-reversing cells are detectable.
pub fn exact_cell_logdet(j: &Mat<f64>, dt: f64) -> Result<(f64, f64)> {
    assert_eq!(j.rows(), j.cols(), "cell Jacobian must be square");
    let d = j.rows();
    let mut a = Mat::from_fn(d, d, |r, c| {
        let eye = if r == c { 1.0 } else { 0.0 };
        eye + dt * j.at(r, c)
    });
    let mut sign = 1.0;
    let mut log_abs = 0.0;
    for col in 0..d {
        // pivot: largest magnitude on or below the diagonal
        let mut pivot_row = col;
        let mut pivot_mag = a.at(col, col).abs();
        for r in col + 1..d {
            let mag = a.at(r, col).abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return Err(Error::SingularMatrix("exact_cell_logdet"));
        }
        if pivot_row != col {
            for c in 0..d {
                let tmp = a.at(col, c);
                a.set(col, c, a.at(pivot_row, c));
                a.set(pivot_row, c, tmp);
            }
            sign = -sign;
        }
        let pivot = a.at(col, col);
        if pivot < 0.0 {
            sign = -sign;
        }
        log_abs += pivot.abs().ln();
        for r in col + 1..d {
            let factor = a.at(r, col) / pivot;
            for c in col..d {
                let v = a.at(r, c) - factor * a.at(col, c);
                a.set(r, c, v);
            }
        }
    }
    Ok((log_abs, sign))
}

/// Matrix exponential by scaling-and-squaring with a degree-18 Taylor sum.
/// Intended for small matrices (d <= 8).
pub fn matrix_exp(a: &Mat<f64>) -> Mat<f64> {
    assert_eq!(a.rows(), a.cols(), "matrix_exp of non-square matrix");
    let d = a.rows();
    assert!(d <= 8, "matrix_exp is desk-scale only (d <= 8)");

    // 1-norm (max column sum) controls the scaling.
    let mut norm: f64 = 0.0;
    for j in 0..d {
        let col_sum: f64 = (0..d).map(|i| a.at(i, j).abs()).sum();
        norm = norm.max(col_sum);
    }
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(s as i32);
    let b = Mat::from_fn(d, d, |i, j| a.at(i, j) * scale);

    // exp(B) ≈ Σ_{k=0}^{18} B^k / k!
    let mut result = Mat::identity(d);
    let mut term = Mat::identity(d);
    for k in 1..=18 {
        term = term.matmul(&b);
        let inv_fact = 1.0 / (k as f64);
        term = Mat::from_fn(d, d, |i, j| term.at(i, j) * inv_fact);
        result = Mat::from_fn(d, d, |i, j| result.at(i, j) + term.at(i, j));
    }
    for _ in 0..s {
        result = result.matmul(&result);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn finite_diff_power_rule() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_tanh_at_zero() {
        let g = finite_diff_grad(|x| x[0].tanh(), &[0.0], 1e-6);
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logdet_of_zero_jacobian() {
        let j = Mat::zeros(3, 3);
        let (logdet, sign) = exact_cell_logdet(&j, 0.25).unwrap();
        assert_eq!(logdet, 0.0);
        assert_eq!(sign, 1.0);
    }

    #[test]
    fn logdet_diagonal_case() {
        let j = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let (logdet, sign) = exact_cell_logdet(&j, 0.1).unwrap();
        let expected = 1.1f64.ln() + 1.2f64.ln(); // 0.277632...
        assert!((logdet - expected).abs() < 1e-14);
        assert!((logdet - 0.277632).abs() < 1e-6);
        assert_eq!(sign, 1.0);
    }

    #[test]
    fn logdet_negative_determinant_reports_sign() {
        // I + 0.1 * diag(-30, 0) = diag(-2, 1): det = -2
        let j = Mat::from_rows(vec![vec![-30.0, 0.0], vec![0.0, 0.0]]);
        let (logdet, sign) = exact_cell_logdet(&j, 0.1).unwrap();
        assert!((logdet - 2.0f64.ln()).abs() < 1e-14);
        assert_eq!(sign, -1.0);
    }

    #[test]
    fn logdet_singular_errors() {
        // I + 1.0 * (-I) = 0
        let j = Mat::from_rows(vec![vec![-1.0, 0.0], vec![0.0, -1.0]]);
        assert!(exact_cell_logdet(&j, 1.0).is_err());
    }

    #[test]
    fn logdet_approaches_trace_for_small_dt() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let j = Mat::from_fn(3, 3, |_, _| rng.uniform_in(-1.0, 1.0));
            let dt = 1e-5;
            let (logdet, _) = exact_cell_logdet(&j, dt).unwrap();
            let linear = dt * j.trace();
            if linear.abs() > 1e-7 {
                assert!(
                    (logdet / linear - 1.0).abs() < 0.01,
                    "ratio {} not within 1% at dt=1e-5",
                    logdet / linear
                );
            }
        }
    }

    #[test]
    fn matrix_exp_of_zero_is_identity() {
        let e = matrix_exp(&Mat::zeros(3, 3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(e.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn matrix_exp_rotation_generator() {
        let a = Mat::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        let e = matrix_exp(&a);
        let (c, s) = (1.0f64.cos(), 1.0f64.sin());
        assert!((e.at(0, 0) - c).abs() < 1e-12);
        assert!((e.at(0, 1) + s).abs() < 1e-12);
        assert!((e.at(1, 0) - s).abs() < 1e-12);
        assert!((e.at(1, 1) - c).abs() < 1e-12);
    }

    #[test]
    fn matrix_exp_satisfies_jacobi_formula() {
        // det(exp(A)) = e^{Tr(A)}
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let a = Mat::from_fn(3, 3, |_, _| rng.uniform_in(-1.0, 1.0));
            let e = matrix_exp(&a);
            // det of exp(A) via the LU helper with I + 1*(E - I)
            let shifted = Mat::from_fn(3, 3, |i, j| {
                e.at(i, j) - if i == j { 1.0 } else { 0.0 }
            });
            let (log_abs, sign) = exact_cell_logdet(&shifted, 1.0).unwrap();
            assert_eq!(sign, 1.0);
            let det = log_abs.exp();
            let expected = a.trace().exp();
            assert!((det - expected).abs() / expected.abs() < 1e-10);
        }
    }
}
