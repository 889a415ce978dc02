//! Special functions composed from the scalar primitive set, so they stay
//! differentiable on the tape and under dual numbers.

use crate::autodiff::Scalar;

// Lanczos approximation, g = 7, 9 coefficients. Valid for positive
// arguments, which is all the beta-binomial likelihood ever needs.
const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)] // canonical published coefficients
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(z) for z > 0.
pub fn ln_gamma<R: Scalar>(z: R) -> R {
    debug_assert!(z.value() > 0.0, "ln_gamma domain is z > 0, got {}", z.value());
    // Standard shift: work with x = z - 1.
    let mut series = z.lift(LANCZOS[0]);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        // x + k = z - 1 + k
        series = series + z.add_const(k as f64 - 1.0).recip_const(c);
    }
    let t = z.add_const(LANCZOS_G - 0.5); // x + g + 0.5
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    series.scale(sqrt_2pi).ln() + z.add_const(-0.5) * t.ln() - t
}

/// ln B(a, b) = ln Γ(a) + ln Γ(b) - ln Γ(a+b).
pub fn ln_beta<R: Scalar>(a: R, b: R) -> R {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// ln C(n, y) through log-gamma.
pub fn log_binomial(n: u64, y: u64) -> f64 {
    debug_assert!(y <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(y as f64 + 1.0) - ln_gamma((n - y) as f64 + 1.0)
}

/// Numerically stable logistic function.
pub fn sigmoid<R: Scalar>(x: R) -> R {
    if x.value() >= 0.0 {
        (-x).exp().add_const(1.0).recip_const(1.0)
    } else {
        let e = x.exp();
        e / e.add_const(1.0)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus<R: Scalar>(x: R) -> R {
    if x.value() > 0.0 {
        // x + ln(1 + e^{-x})
        x + (-x).exp().add_const(1.0).ln()
    } else {
        x.exp().add_const(1.0).ln()
    }
}

/// log|x|, with the sign handled outside the tape.
pub fn ln_abs<R: Scalar>(x: R) -> R {
    let s = if x.value() < 0.0 { -1.0 } else { 1.0 };
    x.scale(s).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        // Γ(n) = (n-1)!, Γ(1/2) = √π
        let cases = [
            (1.0, 0.0),
            (2.0, 0.0),
            (5.0, 24.0f64.ln()),
            (11.0, 3_628_800.0f64.ln()),
            (0.5, std::f64::consts::PI.sqrt().ln()),
            (1.5, (std::f64::consts::PI.sqrt() / 2.0).ln()),
        ];
        for (x, expected) in cases {
            let got = ln_gamma(x);
            assert!(
                (got - expected).abs() < 1e-13,
                "ln_gamma({x}) = {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn ln_gamma_recurrence() {
        // ln Γ(z+1) = ln Γ(z) + ln z across the relevant range
        for &z in &[1e-3, 0.1, 0.7, 3.3, 42.0, 1_000.0, 250_000.0] {
            let lhs = ln_gamma(z + 1.0);
            let rhs = ln_gamma(z) + z.ln();
            let denom = lhs.abs().max(1.0);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-13,
                "recurrence at z={z}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn ln_beta_recurrence_identity() {
        // B(a+1, b) / B(a, b) = a / (a + b)
        let (a, b) = (0.6, 3.0);
        let lhs = ln_beta(a + 1.0, b) - ln_beta(a, b);
        let rhs = (a / (a + b)).ln();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn log_binomial_small_cases() {
        assert!((log_binomial(1, 1) - 0.0).abs() < 1e-13);
        assert!((log_binomial(5, 2) - 10.0f64.ln()).abs() < 1e-12);
        assert!((log_binomial(100_000, 42) - 42f64.mul_add(0.0, {
            // cross-check against the multiplicative form
            let mut acc = 0.0;
            for i in 0..42u64 {
                acc += ((100_000 - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            acc
        }))
        .abs()
            < 1e-8);
    }

    #[test]
    fn sigmoid_and_softplus_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0) < 1e-300);
        assert_eq!(sigmoid(-800.0), 0.0); // graceful underflow, not NaN
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((softplus(900.0) - 900.0).abs() < 1e-12);
        assert!(softplus(-900.0).abs() < 1e-300);
    }

    #[test]
    fn ln_gamma_differentiable_on_tape() {
        use crate::autodiff::grad;
        use crate::oracles::finite_diff_grad;
        for &x in &[0.3, 1.7, 12.0] {
            let g = grad(|_, xs| Ok(ln_gamma(xs[0])), &[x]).unwrap();
            let fd = finite_diff_grad(|v| ln_gamma(v[0]), &[x], 1e-6);
            assert!(
                (g.grad[0] - fd[0]).abs() / fd[0].abs().max(1.0) < 1e-7,
                "digamma mismatch at {x}: {} vs {}",
                g.grad[0],
                fd[0]
            );
        }
    }
}
