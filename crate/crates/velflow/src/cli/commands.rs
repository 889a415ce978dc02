//! The experiment commands behind the `velflow` binary. Each command writes
//! its manifest first, then its output tables; re-running with the same
//! config and seed reproduces every file byte-for-byte except the wallclock
//! column of training histories.

use std::path::Path;

use serde::Serialize;

use crate::cli::config::{
    ExportGridConfig, FitConfig, FitKind, FlowFamily, InversionConfig, McmcCommandConfig,
    OdeAccuracyConfig,
};
use crate::cli::report::{fmt_f64, write_csv, write_manifest, write_toml};
use crate::flow::{FlowModel, FlowSpec};
use crate::inference::{train, FittedFlow, FlowArch, Target, TrainConfig, TrainOutcome};
use crate::io::{load_model, save_model, SavedModel};
use crate::oracles::{mh_sample, rk45_integrate, McmcChain, McmcConfig, ProposalScale};
use crate::rng::Rng;
use crate::targets::{BaseDistribution, BetaBinomialModel, EnergyName, EnergyTarget};
use crate::velocity::{VelocityField, VelocitySpec};
use crate::{Error, Result};

const TRIAL_STREAM: u64 = 0x747269;
const SAMPLE_STREAM: u64 = 0x73616d;
const PUSH_STREAM: u64 = 0x707573;

fn velocity_spec(dim: usize, hidden: &[usize], init_scale: f64) -> VelocitySpec {
    VelocitySpec {
        dim,
        hidden: hidden.to_vec(),
        context_dim: 0,
        init_scale,
        zero_init_output: false,
    }
}

fn random_blocks(spec: &VelocitySpec, blocks: usize, rng: &Rng) -> Result<Vec<VelocityField>> {
    (0..blocks)
        .map(|k| VelocityField::init(spec.clone(), rng.derive(k as u64).next_u64()))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Forward Euler accuracy against the adaptive integrator, per cell count.
pub fn run_ode_accuracy(cfg: &OdeAccuracyConfig) -> Result<()> {
    if cfg.t_list.is_empty() {
        return Err(Error::InvalidSpec("t_list must be non-empty".into()));
    }
    write_manifest(&cfg.out, "ode-accuracy", cfg)?;

    let vspec = velocity_spec(cfg.dim, &cfg.hidden, cfg.init_scale);
    let root = Rng::new(cfg.seed);
    let mut sum_sq = vec![0.0; cfg.t_list.len()];

    for trial in 0..cfg.trials {
        let trial_rng = root.derive(TRIAL_STREAM ^ trial as u64);
        let fields = random_blocks(&vspec, cfg.blocks, &trial_rng)?;
        let z0 = trial_rng.derive(SAMPLE_STREAM).normal_vec(cfg.dim);

        // ground truth: high-accuracy integration, one time segment per block
        let mut truth = z0.clone();
        for field in &fields {
            truth = rk45_integrate(
                field,
                &truth,
                1.0 / cfg.blocks as f64,
                cfg.rtol,
                cfg.rtol * 1e-2,
            )?
            .z_final;
        }

        for (i, &t) in cfg.t_list.iter().enumerate() {
            let mut spec = FlowSpec::new(cfg.dim, cfg.blocks, t);
            spec.velocity = vspec.clone();
            let model = FlowModel::from_blocks(spec, fields.clone())?;
            let fwd = model.forward(&z0, None, false)?;
            sum_sq[i] += sq_dist(&fwd.z_out, &truth);
        }
    }

    let rows = cfg.t_list.iter().enumerate().map(|(i, &t)| {
        let dt = 1.0 / (cfg.blocks * t) as f64;
        format!("{t},{},{}", fmt_f64(dt), fmt_f64(sum_sq[i] / cfg.trials as f64))
    });
    write_csv(&cfg.out.join("ode_accuracy.csv"), "t,dt,mse", rows)
}

/// Reconstruction error of forward-then-backward integration, per cell count.
pub fn run_inversion(cfg: &InversionConfig) -> Result<()> {
    if cfg.t_list.is_empty() {
        return Err(Error::InvalidSpec("t_list must be non-empty".into()));
    }
    write_manifest(&cfg.out, "inversion", cfg)?;

    let vspec = velocity_spec(cfg.dim, &cfg.hidden, cfg.init_scale);
    let root = Rng::new(cfg.seed);
    // per (t, trial): mean over samples
    let mut per_trial = vec![Vec::with_capacity(cfg.trials); cfg.t_list.len()];

    for trial in 0..cfg.trials {
        let trial_rng = root.derive(TRIAL_STREAM ^ trial as u64);
        let fields = random_blocks(&vspec, cfg.blocks, &trial_rng)?;
        let mut sample_rng = trial_rng.derive(SAMPLE_STREAM);
        let samples: Vec<Vec<f64>> =
            (0..cfg.samples).map(|_| sample_rng.normal_vec(cfg.dim)).collect();

        for (i, &t) in cfg.t_list.iter().enumerate() {
            let mut spec = FlowSpec::new(cfg.dim, cfg.blocks, t);
            spec.velocity = vspec.clone();
            let model = FlowModel::from_blocks(spec, fields.clone())?;
            let mut mse = 0.0;
            for z0 in &samples {
                let fwd = model.forward(z0, None, false)?;
                let back = model.inverse(&fwd.z_out, None)?;
                mse += sq_dist(z0, &back.z_out);
            }
            per_trial[i].push(mse / cfg.samples as f64);
        }
    }

    let rows = cfg.t_list.iter().enumerate().map(|(i, &t)| {
        let dt = 1.0 / (cfg.blocks * t) as f64;
        let vals = &per_trial[i];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        format!("{t},{},{},{}", fmt_f64(dt), fmt_f64(mean), fmt_f64(var.sqrt()))
    });
    write_csv(&cfg.out.join("inversion.csv"), "t,dt,mse,std", rows)
}

#[derive(Serialize)]
struct FitSummary {
    status: &'static str,
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diverged_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode_mass_positive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode_mass_negative: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_std: Option<f64>,
}

/// Train a flow on a toy energy or the beta-binomial posterior; emit the
/// model file, training history, pushforward samples, and (for energies) a
/// grid log-density table.
pub fn run_fit(cfg: &FitConfig) -> Result<()> {
    write_manifest(&cfg.out, "fit", cfg)?;

    let target = match cfg.kind {
        FitKind::EnergyU1 => {
            Target::Energy(EnergyTarget { name: EnergyName::U1, ring_norm: cfg.ring_norm })
        }
        FitKind::EnergyU2 => {
            Target::Energy(EnergyTarget { name: EnergyName::U2, ring_norm: cfg.ring_norm })
        }
        FitKind::Posterior => {
            let path = cfg.data.as_ref().ok_or_else(|| {
                Error::InvalidSpec("posterior fit requires --data <csv>".into())
            })?;
            Target::Posterior(BetaBinomialModel::from_csv(path)?)
        }
    };
    let learnable = cfg.base_learnable.unwrap_or(matches!(cfg.kind, FitKind::Posterior));
    let base = BaseDistribution { learnable, ..BaseDistribution::standard(2) };

    let arch = match cfg.flow {
        FlowFamily::Ddnf => {
            let mut spec = FlowSpec::new(2, cfg.blocks, cfg.cells_per_block);
            spec.logdet_method = cfg.logdet_method;
            spec.hutchinson_probes = cfg.hutchinson_probes;
            spec.velocity = VelocitySpec {
                zero_init_output: cfg.zero_init_output,
                ..velocity_spec(2, &cfg.hidden, cfg.init_scale)
            };
            FlowArch::Ddnf(spec)
        }
        FlowFamily::Planar => FlowArch::Planar { dim: 2, layers: cfg.blocks },
    };

    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        iterations: cfg.iterations,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        reg: crate::regularize::RegWeights {
            gamma_geodesic: cfg.gamma_geodesic,
            gamma_inverse: cfg.gamma_inverse,
        },
        seed: cfg.seed,
        logdet_method: cfg.logdet_method,
        eval_every: cfg.eval_every,
    };

    let outcome = train(target, arch, base, &train_cfg)?;
    write_fit_outputs(cfg, &outcome)?;
    match outcome.diverged_at {
        Some(iteration) => Err(Error::Diverged { iteration }),
        None => Ok(()),
    }
}

fn write_fit_outputs(cfg: &FitConfig, outcome: &TrainOutcome) -> Result<()> {
    let history = outcome.records.iter().map(|r| {
        format!(
            "{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.loss),
            fmt_f64(r.elbo_estimate),
            fmt_f64(r.geodesic_value),
            fmt_f64(r.inverse_consistency_value),
            fmt_f64(r.wallclock)
        )
    });
    write_csv(&cfg.out.join("history.csv"), "iter,loss,elbo,geo,invc,seconds", history)?;

    let doc = match &outcome.flow {
        FittedFlow::Ddnf(model) => SavedModel::from_ddnf(model, &outcome.base),
        FittedFlow::Planar(stack) => SavedModel::from_planar(stack, &outcome.base),
    };
    save_model(&doc, &cfg.out.join("model.toml"))?;

    let mut summary = FitSummary {
        status: if outcome.diverged_at.is_some() { "diverged" } else { "completed" },
        final_loss: outcome.final_loss(),
        diverged_at: outcome.diverged_at,
        mode_mass_positive: None,
        mode_mass_negative: None,
        m_mean: None,
        m_std: None,
        l_mean: None,
        l_std: None,
    };

    if outcome.diverged_at.is_none() {
        // pushforward samples through the trained flow
        let mut rng = Rng::new(cfg.seed).derive(PUSH_STREAM);
        let mut samples = Vec::with_capacity(cfg.pushforward_samples);
        for _ in 0..cfg.pushforward_samples {
            let z0 = outcome.base.sample(&mut rng);
            let z_k = match &outcome.flow {
                FittedFlow::Ddnf(model) => model.forward(&z0, None, false)?.z_out,
                FittedFlow::Planar(stack) => stack.forward(&z0)?.0,
            };
            samples.push(z_k);
        }

        match cfg.kind {
            FitKind::Posterior => {
                let transformed: Vec<(f64, f64)> =
                    samples.iter().map(|z| BetaBinomialModel::transform(z)).collect();
                write_csv(
                    &cfg.out.join("samples.csv"),
                    "m,L",
                    transformed.iter().map(|(m, l)| format!("{},{}", fmt_f64(*m), fmt_f64(*l))),
                )?;
                let n = transformed.len() as f64;
                let m_mean = transformed.iter().map(|t| t.0).sum::<f64>() / n;
                let l_mean = transformed.iter().map(|t| t.1).sum::<f64>() / n;
                let m_var =
                    transformed.iter().map(|t| (t.0 - m_mean).powi(2)).sum::<f64>() / n;
                let l_var =
                    transformed.iter().map(|t| (t.1 - l_mean).powi(2)).sum::<f64>() / n;
                summary.m_mean = Some(m_mean);
                summary.m_std = Some(m_var.sqrt());
                summary.l_mean = Some(l_mean);
                summary.l_std = Some(l_var.sqrt());
            }
            FitKind::EnergyU1 | FitKind::EnergyU2 => {
                write_csv(
                    &cfg.out.join("samples.csv"),
                    "z0,z1",
                    samples.iter().map(|z| format!("{},{}", fmt_f64(z[0]), fmt_f64(z[1]))),
                )?;
                let n = samples.len() as f64;
                summary.mode_mass_positive =
                    Some(samples.iter().filter(|z| z[0] > 0.5).count() as f64 / n);
                summary.mode_mass_negative =
                    Some(samples.iter().filter(|z| z[0] < -0.5).count() as f64 / n);

                // grid log-density table
                let res = cfg.grid_resolution;
                let r = cfg.grid_range;
                let mut rows = Vec::with_capacity(res * res);
                for i in 0..res {
                    for j in 0..res {
                        let x = -r + 2.0 * r * i as f64 / (res - 1) as f64;
                        let y = -r + 2.0 * r * j as f64 / (res - 1) as f64;
                        let ld = match &outcome.flow {
                            FittedFlow::Ddnf(model) => {
                                model.log_density(&outcome.base, &[x, y], None)?
                            }
                            FittedFlow::Planar(stack) => {
                                stack.log_density(&outcome.base, &[x, y])?
                            }
                        };
                        rows.push(format!("{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(ld)));
                    }
                }
                write_csv(&cfg.out.join("grid.csv"), "x,y,log_density", rows)?;
            }
        }
    }

    write_toml(&cfg.out.join("summary.toml"), &summary)
}

#[derive(Serialize)]
struct McmcSummary {
    acceptance_rate: f64,
    steps: usize,
    burn_in: usize,
    warnings: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l_std: Option<f64>,
}

/// Run the Metropolis oracle on the beta-binomial posterior (or the built-in
/// standard-normal smoke target) and export the chain.
pub fn run_mcmc(cfg: &McmcCommandConfig) -> Result<()> {
    write_manifest(&cfg.out, "mcmc", cfg)?;

    let (chain, posterior) = match (&cfg.data, cfg.smoke_normal) {
        (Some(_), true) => {
            return Err(Error::InvalidSpec(
                "choose either --data or --smoke-normal, not both".into(),
            ))
        }
        (None, false) => {
            return Err(Error::InvalidSpec(
                "mcmc needs a --data file or --smoke-normal".into(),
            ))
        }
        (None, true) => {
            let chain = mh_sample(
                |z| -0.5 * z[0] * z[0],
                &[0.0],
                &McmcConfig {
                    steps: cfg.steps,
                    burn_in: cfg.burn_in,
                    proposal_scale: ProposalScale::Isotropic(cfg.scale),
                    seed: cfg.seed,
                    adapt_during_burn_in: cfg.adapt,
                },
            )?;
            (chain, None)
        }
        (Some(path), false) => {
            let model = BetaBinomialModel::from_csv(path)?;
            // data-driven start: pooled rate and a moderate concentration
            let (n_total, y_total) = model
                .records()
                .iter()
                .fold((0u64, 0u64), |(n, y), &(nj, yj)| (n + nj, y + yj));
            let rate = (y_total as f64 / n_total as f64).clamp(1e-9, 1.0 - 1e-9);
            let init = [(rate / (1.0 - rate)).ln(), 100.0f64.ln()];
            let chain = mh_sample(
                |z| model.log_unnorm_posterior(z),
                &init,
                &McmcConfig {
                    steps: cfg.steps,
                    burn_in: cfg.burn_in,
                    proposal_scale: ProposalScale::Isotropic(cfg.scale),
                    seed: cfg.seed,
                    adapt_during_burn_in: cfg.adapt,
                },
            )?;
            (chain, Some(model))
        }
    };

    export_chain(&cfg.out, &chain, cfg.burn_in, posterior.is_some())
}

fn export_chain(out: &Path, chain: &McmcChain, burn_in: usize, posterior: bool) -> Result<()> {
    let dim = chain.samples[0].len();
    let header = match dim {
        1 => "step,z0".to_string(),
        _ => {
            let cols: Vec<String> = (0..dim).map(|i| format!("z{i}")).collect();
            format!("step,{}", cols.join(","))
        }
    };
    let rows = chain.samples.iter().enumerate().map(|(i, z)| {
        let vals: Vec<String> = z.iter().map(|&v| fmt_f64(v)).collect();
        format!("{},{}", burn_in + i, vals.join(","))
    });
    write_csv(&out.join("samples.csv"), &header, rows)?;

    let mut summary = McmcSummary {
        acceptance_rate: chain.acceptance_rate,
        steps: chain.samples.len() + burn_in,
        burn_in,
        warnings: chain.warnings.clone(),
        mean: chain.mean(),
        std: chain.std(),
        m_mean: None,
        m_std: None,
        l_mean: None,
        l_std: None,
    };
    if posterior {
        let (m_mean, m_std) = chain.moments_of(|z| BetaBinomialModel::transform(z).0);
        let (l_mean, l_std) = chain.moments_of(|z| BetaBinomialModel::transform(z).1);
        summary.m_mean = Some(m_mean);
        summary.m_std = Some(m_std);
        summary.l_mean = Some(l_mean);
        summary.l_std = Some(l_std);
    }
    write_toml(&out.join("summary.toml"), &summary)
}

#[derive(Serialize)]
struct GridSummary {
    mean_inverse_residual: f64,
}

/// Deformed grid, displacement field, and log-density heatmap of a saved
/// model, plus the mean inverse-consistency residual over the grid.
pub fn run_export_grid(cfg: &ExportGridConfig) -> Result<()> {
    write_manifest(&cfg.out, "export-grid", cfg)?;
    let (model, base) = load_model(&cfg.model)?.into_ddnf()?;
    if model.spec.dim != 2 {
        return Err(Error::InvalidSpec("export-grid expects a 2-d model".into()));
    }

    let lin = |n: usize, i: usize| -cfg.range + 2.0 * cfg.range * i as f64 / (n - 1) as f64;

    let res = cfg.deform_resolution;
    let mut deformed = Vec::with_capacity(res * res);
    let mut displacement = Vec::with_capacity(res * res);
    let mut residual_sum = 0.0;
    for i in 0..res {
        for j in 0..res {
            let g = [lin(res, i), lin(res, j)];
            let phi = model.forward(&g, None, false)?.z_out;
            deformed.push(format!(
                "{},{},{},{}",
                fmt_f64(g[0]),
                fmt_f64(g[1]),
                fmt_f64(phi[0]),
                fmt_f64(phi[1])
            ));
            displacement.push(format!(
                "{},{},{},{}",
                fmt_f64(g[0]),
                fmt_f64(g[1]),
                fmt_f64(phi[0] - g[0]),
                fmt_f64(phi[1] - g[1])
            ));
            let back = model.inverse(&phi, None)?.z_out;
            residual_sum += sq_dist(&g, &back).sqrt();
        }
    }
    write_csv(&cfg.out.join("deformed_grid.csv"), "x,y,phi_x,phi_y", deformed)?;
    write_csv(&cfg.out.join("displacement.csv"), "x,y,dx,dy", displacement)?;

    let res_h = cfg.heat_resolution;
    let mut heat = Vec::with_capacity(res_h * res_h);
    for i in 0..res_h {
        for j in 0..res_h {
            let g = [lin(res_h, i), lin(res_h, j)];
            let ld = model.log_density(&base, &g, None)?;
            heat.push(format!("{},{},{}", fmt_f64(g[0]), fmt_f64(g[1]), fmt_f64(ld)));
        }
    }
    write_csv(&cfg.out.join("heatmap.csv"), "x,y,log_density", heat)?;

    write_toml(
        &cfg.out.join("summary.toml"),
        &GridSummary { mean_inverse_residual: residual_sum / (res * res) as f64 },
    )
}
