//! Random-walk Metropolis sampling, the posterior ground truth.
//!
//! Gaussian proposals, optional scale adaptation during burn-in (frozen
//! afterwards so the chain stays Markovian), deterministic per seed.

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum ProposalScale {
    Isotropic(f64),
    PerDim(Vec<f64>),
}

impl ProposalScale {
    fn at(&self, i: usize) -> f64 {
        match self {
            ProposalScale::Isotropic(s) => *s,
            ProposalScale::PerDim(v) => v[i],
        }
    }

    fn scale_all(&mut self, factor: f64) {
        match self {
            ProposalScale::Isotropic(s) => *s *= factor,
            ProposalScale::PerDim(v) => v.iter_mut().for_each(|s| *s *= factor),
        }
    }
}

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: ProposalScale,
    pub seed: u64,
    /// Retune the proposal scale toward 20-50% acceptance during burn-in.
    pub adapt_during_burn_in: bool,
}

/// Post burn-in samples plus chain diagnostics.
#[derive(Clone, Debug)]
pub struct McmcChain {
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub warnings: Vec<String>,
}

impl McmcChain {
    pub fn mean(&self) -> Vec<f64> {
        let d = self.samples[0].len();
        let n = self.samples.len() as f64;
        let mut m = vec![0.0; d];
        for s in &self.samples {
            for i in 0..d {
                m[i] += s[i];
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn std(&self) -> Vec<f64> {
        let d = self.samples[0].len();
        let n = self.samples.len() as f64;
        let mean = self.mean();
        let mut var = vec![0.0; d];
        for s in &self.samples {
            for i in 0..d {
                let c = s[i] - mean[i];
                var[i] += c * c;
            }
        }
        var.iter().map(|v| (v / n).sqrt()).collect()
    }

    /// Mean and standard deviation of `f` applied to each sample.
    pub fn moments_of(&self, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let n = self.samples.len() as f64;
        let vals: Vec<f64> = self.samples.iter().map(|s| f(s)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

/// Random-walk Metropolis on an unnormalized log-density.
pub fn mh_sample(
    log_target: impl Fn(&[f64]) -> f64,
    init: &[f64],
    config: &McmcConfig,
) -> Result<McmcChain> {
    if config.steps <= config.burn_in {
        return Err(Error::InvalidSpec(format!(
            "mcmc steps ({}) must exceed burn-in ({})",
            config.steps, config.burn_in
        )));
    }
    let d = init.len();
    let mut rng = Rng::new(config.seed);
    let mut scale = config.proposal_scale.clone();

    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::InvalidSpec(
            "mcmc initial point has non-finite log density".into(),
        ));
    }

    let mut samples = Vec::with_capacity(config.steps - config.burn_in);
    let mut accepted_total = 0usize;
    let mut window_accepted = 0usize;
    let mut window_len = 0usize;
    let mut proposal = vec![0.0; d];

    for step in 0..config.steps {
        for i in 0..d {
            proposal[i] = current[i] + scale.at(i) * rng.normal();
        }
        let proposal_lp = log_target(&proposal);
        let log_alpha = proposal_lp - current_lp;
        let accept = log_alpha >= 0.0 || rng.uniform().ln() < log_alpha;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = proposal_lp;
            accepted_total += 1;
            window_accepted += 1;
        }
        window_len += 1;

        if config.adapt_during_burn_in && step < config.burn_in && window_len == 500 {
            let rate = window_accepted as f64 / window_len as f64;
            if !(0.20..=0.50).contains(&rate) {
                scale.scale_all(if rate < 0.20 { 0.7 } else { 1.4 });
            }
            window_accepted = 0;
            window_len = 0;
        }

        if step >= config.burn_in {
            samples.push(current.clone());
        }
    }

    let acceptance_rate = accepted_total as f64 / config.steps as f64;
    let mut warnings = Vec::new();
    if acceptance_rate < 0.01 {
        warnings.push(format!("acceptance rate {acceptance_rate:.4} below 0.01"));
    } else if acceptance_rate > 0.99 {
        warnings.push(format!("acceptance rate {acceptance_rate:.4} above 0.99"));
    }

    Ok(McmcChain { samples, acceptance_rate, burn_in: config.burn_in, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_1d(z: &[f64]) -> f64 {
        -0.5 * z[0] * z[0]
    }

    #[test]
    fn standard_normal_moments() {
        let config = McmcConfig {
            steps: 110_000,
            burn_in: 10_000,
            proposal_scale: ProposalScale::Isotropic(2.4),
            seed: 17,
            adapt_during_burn_in: false,
        };
        let chain = mh_sample(std_normal_1d, &[0.0], &config).unwrap();
        let mean = chain.mean()[0];
        let std = chain.std()[0];
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&(std * std)), "variance {}", std * std);
        assert!(chain.warnings.is_empty());
        assert!(chain.acceptance_rate > 0.0 && chain.acceptance_rate < 1.0);
    }

    #[test]
    fn identical_proposal_always_accepted() {
        // scale -> 0: proposal equals the current point up to rounding; a
        // symmetric proposal with equal density is always accepted.
        let config = McmcConfig {
            steps: 200,
            burn_in: 0,
            proposal_scale: ProposalScale::Isotropic(0.0),
            seed: 3,
            adapt_during_burn_in: false,
        };
        let chain = mh_sample(std_normal_1d, &[0.7], &config).unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
        assert!(chain.samples.iter().all(|s| s[0] == 0.7));
        // rate > 0.99 is flagged
        assert_eq!(chain.warnings.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let config = McmcConfig {
            steps: 2_000,
            burn_in: 100,
            proposal_scale: ProposalScale::Isotropic(1.0),
            seed: 99,
            adapt_during_burn_in: true,
        };
        let a = mh_sample(std_normal_1d, &[0.0], &config).unwrap();
        let b = mh_sample(std_normal_1d, &[0.0], &config).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn bimodal_target_visits_both_modes() {
        // mixture of N(-3, 0.5²) and N(3, 0.5²)
        let log_target = |z: &[f64]| {
            let a = -0.5 * ((z[0] + 3.0) / 0.5).powi(2);
            let b = -0.5 * ((z[0] - 3.0) / 0.5).powi(2);
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln()
        };
        let config = McmcConfig {
            steps: 1_000_000,
            burn_in: 10_000,
            proposal_scale: ProposalScale::Isotropic(2.5),
            seed: 5,
            adapt_during_burn_in: false,
        };
        let chain = mh_sample(log_target, &[0.0], &config).unwrap();
        let positive =
            chain.samples.iter().filter(|s| s[0] > 0.0).count() as f64 / chain.samples.len() as f64;
        assert!(positive >= 0.25 && positive <= 0.75, "positive-mode mass {positive}");
    }

    #[test]
    fn per_dim_scales_and_moments_of() {
        let log_target = |z: &[f64]| -0.5 * (z[0] * z[0] + z[1] * z[1] / 4.0);
        let config = McmcConfig {
            steps: 120_000,
            burn_in: 20_000,
            proposal_scale: ProposalScale::PerDim(vec![2.0, 4.0]),
            seed: 11,
            adapt_during_burn_in: false,
        };
        let chain = mh_sample(log_target, &[0.0, 0.0], &config).unwrap();
        let (mean_z1, std_z1) = chain.moments_of(|s| s[1]);
        assert!(mean_z1.abs() < 0.1);
        assert!((std_z1 - 2.0).abs() < 0.15);
    }
}
