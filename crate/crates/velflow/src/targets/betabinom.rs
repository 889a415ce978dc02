//! Beta-binomial over-dispersion model with the improper prior
//! p(m, L) ∝ 1 / (m (1-m) (1+L)²) over (0,1) x (0,∞).
//!
//! Inference runs on the unconstrained plane z = (logit m, ln L); the
//! log-posterior includes the Jacobian of that transform so flows and MCMC
//! chains both target the same density.

use std::path::Path;

use crate::autodiff::Scalar;
use crate::targets::special::{ln_gamma, log_binomial, sigmoid};
use crate::{Error, Result};

/// Observation pairs (n_j at risk, y_j events).
#[derive(Clone, Debug, PartialEq)]
pub struct BetaBinomialModel {
    data: Vec<(u64, u64)>,
    log_binom: Vec<f64>,
}

impl BetaBinomialModel {
    pub fn new(data: Vec<(u64, u64)>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyData("beta-binomial observations"));
        }
        for &(n, y) in &data {
            if n == 0 || y > n {
                return Err(Error::InvalidSpec(format!(
                    "invalid observation (n={n}, y={y}): need n >= 1 and 0 <= y <= n"
                )));
            }
        }
        let log_binom = data.iter().map(|&(n, y)| log_binomial(n, y)).collect();
        Ok(BetaBinomialModel { data, log_binom })
    }

    /// Two-column CSV with header `n,y`, one record per city.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            message: "empty file".into(),
        })?;
        if header.trim() != "n,y" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("expected header `n,y`, found `{header}`"),
            });
        }
        let mut data = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |field: Option<&str>| -> Result<u64> {
                field
                    .map(str::trim)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        path: path.display().to_string(),
                        message: format!("bad record on line {}", lineno + 2),
                    })
            };
            let n = parse(parts.next())?;
            let y = parse(parts.next())?;
            data.push((n, y));
        }
        BetaBinomialModel::new(data)
    }

    pub fn records(&self) -> &[(u64, u64)] {
        &self.data
    }

    /// Map the unconstrained point to (m, L).
    pub fn transform(z: &[f64]) -> (f64, f64) {
        (sigmoid(z[0]), z[1].exp())
    }

    /// Unnormalized log prior in (m, L) space.
    pub fn log_prior(m: f64, l: f64) -> f64 {
        -(m.ln() + (1.0 - m).ln() + 2.0 * (1.0 + l).ln())
    }

    /// Unnormalized log posterior at the unconstrained point z = (z_m, z_L),
    /// including the log-Jacobian of the (m, L) transform.
    pub fn log_unnorm_posterior(&self, z: &[f64]) -> f64 {
        self.log_unnorm_posterior_with(z)
    }

    pub(crate) fn log_unnorm_posterior_with<R: Scalar>(&self, z: &[R]) -> R {
        assert_eq!(z.len(), 2, "beta-binomial posterior is 2-dimensional");
        let m = sigmoid(z[0]);
        let one_minus_m = m.sub_from(1.0);
        let l = z[1].exp();

        // prior + transform Jacobian: the log m and log(1-m) terms cancel
        // but are written out to mirror the model statement
        let prior = -(m.ln() + one_minus_m.ln() + l.add_const(1.0).ln().scale(2.0));
        let jacobian = m.ln() + one_minus_m.ln() + z[1];

        let a0 = l * m;
        let b0 = l * one_minus_m;
        let lg_a0 = ln_gamma(a0);
        let lg_b0 = ln_gamma(b0);
        let lg_l = ln_gamma(l);

        let mut log_lik = prior.lift(0.0);
        for (&(n, y), &lc) in self.data.iter().zip(&self.log_binom) {
            let numer = ln_gamma(a0.add_const(y as f64))
                + ln_gamma(b0.add_const((n - y) as f64))
                - ln_gamma(l.add_const(n as f64));
            let denom = lg_a0 + lg_b0 - lg_l;
            log_lik = log_lik + (numer - denom).add_const(lc);
        }
        prior + jacobian + log_lik
    }
}
