//! Variational objectives and the stochastic-gradient training loop.
//!
//! The loss is the negative of the (regularized) evidence lower bound,
//! estimated with one reparameterized draw per sample:
//!
//! ```text
//! loss = mean_i [ log q0(z0_i) − Σ log|det| + U(zK_i) ]
//!        + γ_geo · Γ̂ + γ_inv · R̂
//! ```
//!
//! where U is the target's negative unnormalized log-density. Per-sample
//! terms are built on individual tapes and reduced in index order, so batches
//! can be evaluated in parallel while training histories stay bitwise
//! reproducible for a fixed seed.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape};
use crate::flow::{flow_pass, Direction, FlowModel, FlowSpec, LogdetMethod, PassOptions};
use crate::regularize::{residual_norm, RegWeights};
use crate::rng::Rng;
use crate::targets::{
    gaussian_log_density, BaseDistribution, BetaBinomialModel, EnergyTarget, PlanarStack,
};
use crate::velocity::VelocityField;
use crate::{Error, Result};

/// What the flow is fit to.
#[derive(Clone, Debug)]
pub enum Target {
    Energy(EnergyTarget),
    Posterior(BetaBinomialModel),
}

/// Which flow family is trained.
#[derive(Clone, Debug)]
pub enum FlowArch {
    Ddnf(FlowSpec),
    Planar { dim: usize, layers: usize },
}

impl FlowArch {
    pub fn dim(&self) -> usize {
        match self {
            FlowArch::Ddnf(spec) => spec.dim,
            FlowArch::Planar { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub reg: RegWeights,
    pub seed: u64,
    /// Overrides the flow spec's log-determinant method during training, so
    /// one architecture can be trained under several approximations.
    pub logdet_method: LogdetMethod,
    pub eval_every: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for the toy experiments.
    pub fn default_toy() -> Self {
        TrainConfig {
            batch_size: 256,
            iterations: 5000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            reg: RegWeights::none(),
            seed: 0,
            logdet_method: LogdetMethod::Exact,
            eval_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidSpec("learning_rate must be > 0".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidSpec("eval_every must be >= 1".into()));
        }
        self.reg.validate()
    }
}

/// One diagnostics row, emitted every `eval_every` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Negative of the unregularized loss part; an ELBO estimate up to the
    /// target's normalizing constant.
    pub elbo_estimate: f64,
    pub geodesic_value: f64,
    pub inverse_consistency_value: f64,
    pub wallclock: f64,
}

#[derive(Clone, Debug)]
pub enum FittedFlow {
    Ddnf(FlowModel),
    Planar(PlanarStack),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub flow: FittedFlow,
    pub base: BaseDistribution,
    pub records: Vec<TrainRecord>,
    /// Iteration at which the loss went non-finite; the partial history and
    /// last finite parameters are preserved (divergence is data for the
    /// stability experiments).
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

// ---- objective --------------------------------------------------------------

/// A variational objective bound to a target, flow family, base distribution
/// and regularization weights, exposing the loss as a deterministic function
/// of one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Objective {
    target: Target,
    arch: FlowArch,
    base_init: BaseDistribution,
    reg: RegWeights,
}

struct Views<'a, R> {
    blocks: Vec<&'a [R]>,
    planar: Option<&'a [R]>,
    base_mu: Option<&'a [R]>,
    base_log_sigma: Option<&'a [R]>,
}

struct SampleParts<R> {
    total: R,
    nll: R,
    geodesic: f64,
    inverse_consistency: f64,
}

/// Mean loss (and components) of a batch of reparameterized draws.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    pub elbo_estimate: f64,
    pub geodesic: f64,
    pub inverse_consistency: f64,
}

impl Objective {
    pub fn new(
        target: Target,
        arch: FlowArch,
        base_init: BaseDistribution,
        reg: RegWeights,
    ) -> Result<Self> {
        reg.validate()?;
        match &arch {
            FlowArch::Ddnf(spec) => {
                spec.validate()?;
                if spec.context_dim != 0 {
                    return Err(Error::InvalidSpec(
                        "training objectives run unconditioned flows (context_dim = 0)".into(),
                    ));
                }
                if spec.dim != base_init.dim {
                    return Err(Error::InvalidSpec("flow dim != base dim".into()));
                }
            }
            FlowArch::Planar { dim, layers } => {
                if *dim == 0 || *layers == 0 {
                    return Err(Error::InvalidSpec("planar arch needs dim, layers >= 1".into()));
                }
                if *dim != base_init.dim {
                    return Err(Error::InvalidSpec("flow dim != base dim".into()));
                }
                if reg.any_active() {
                    return Err(Error::InvalidSpec(
                        "geodesic / inverse-consistency penalties apply to velocity flows only"
                            .into(),
                    ));
                }
            }
        }
        if let Target::Energy(_) = target {
            if arch.dim() != 2 {
                return Err(Error::InvalidSpec("energy targets are 2-dimensional".into()));
            }
        }
        if let Target::Posterior(_) = target {
            if arch.dim() != 2 {
                return Err(Error::InvalidSpec("the posterior target is 2-dimensional".into()));
            }
        }
        Ok(Objective { target, arch, base_init, reg })
    }

    pub fn dim(&self) -> usize {
        self.arch.dim()
    }

    fn flow_param_count(&self) -> usize {
        match &self.arch {
            FlowArch::Ddnf(spec) => spec.blocks * spec.velocity.param_count(),
            FlowArch::Planar { dim, layers } => PlanarStack::param_count(*dim, *layers),
        }
    }

    pub fn param_count(&self) -> usize {
        let base = if self.base_init.learnable { 2 * self.base_init.dim } else { 0 };
        self.flow_param_count() + base
    }

    /// Flat initial parameters: flow blocks first, then (mu, log_sigma) when
    /// the base is learnable.
    pub fn initial_params(&self, seed: u64) -> Result<Vec<f64>> {
        let mut flat = Vec::with_capacity(self.param_count());
        match &self.arch {
            FlowArch::Ddnf(spec) => {
                let model = FlowModel::init(spec.clone(), seed)?;
                for block in &model.blocks {
                    flat.extend_from_slice(&block.params.values);
                }
            }
            FlowArch::Planar { dim, layers } => {
                flat.extend(PlanarStack::init(*dim, *layers, seed)?.params);
            }
        }
        if self.base_init.learnable {
            flat.extend_from_slice(&self.base_init.mu);
            flat.extend_from_slice(&self.base_init.log_sigma);
        }
        debug_assert_eq!(flat.len(), self.param_count());
        Ok(flat)
    }

    fn views<'a, R>(&self, flat: &'a [R]) -> Views<'a, R> {
        let (blocks, planar, mut offset) = match &self.arch {
            FlowArch::Ddnf(spec) => {
                let per_block = spec.velocity.param_count();
                let blocks: Vec<&[R]> = (0..spec.blocks)
                    .map(|k| &flat[k * per_block..(k + 1) * per_block])
                    .collect();
                (blocks, None, spec.blocks * per_block)
            }
            FlowArch::Planar { dim, layers } => {
                let n = PlanarStack::param_count(*dim, *layers);
                (Vec::new(), Some(&flat[..n]), n)
            }
        };
        let (base_mu, base_log_sigma) = if self.base_init.learnable {
            let d = self.base_init.dim;
            let mu = &flat[offset..offset + d];
            offset += d;
            let ls = &flat[offset..offset + d];
            (Some(mu), Some(ls))
        } else {
            (None, None)
        };
        Views { blocks, planar, base_mu, base_log_sigma }
    }

    /// Rebuild the flow and base encoded by a flat parameter vector.
    pub fn unpack(&self, flat: &[f64]) -> Result<(FittedFlow, BaseDistribution)> {
        let views = self.views(flat);
        let flow = match &self.arch {
            FlowArch::Ddnf(spec) => {
                let layout = spec.velocity.layout();
                let blocks = views
                    .blocks
                    .iter()
                    .map(|slice| {
                        Ok(VelocityField {
                            spec: spec.velocity.clone(),
                            params: crate::autodiff::ParamVector::new(
                                slice.to_vec(),
                                layout.clone(),
                            )?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FittedFlow::Ddnf(FlowModel::from_blocks(spec.clone(), blocks)?)
            }
            FlowArch::Planar { dim, layers } => FittedFlow::Planar(PlanarStack::from_params(
                *dim,
                *layers,
                views.planar.unwrap().to_vec(),
            )?),
        };
        let base = match (views.base_mu, views.base_log_sigma) {
            (Some(mu), Some(ls)) => BaseDistribution::new(mu.to_vec(), ls.to_vec(), true)?,
            _ => self.base_init.clone(),
        };
        Ok((flow, base))
    }

    fn sample_loss<R: Scalar>(
        &self,
        flat: &[R],
        eps: &[f64],
        logdet_method: LogdetMethod,
        probe_rng: Option<&mut Rng>,
    ) -> Result<SampleParts<R>> {
        let views = self.views(flat);
        let anchor = flat[0];
        let d = self.dim();

        // z0 = mu + sigma ⊙ eps, through the learnable parameters when present
        let (mu, log_sigma): (Vec<R>, Vec<R>) = match (views.base_mu, views.base_log_sigma) {
            (Some(mu), Some(ls)) => (mu.to_vec(), ls.to_vec()),
            _ => (
                self.base_init.mu.iter().map(|&m| anchor.lift(m)).collect(),
                self.base_init.log_sigma.iter().map(|&s| anchor.lift(s)).collect(),
            ),
        };
        let z0: Vec<R> = (0..d)
            .map(|i| mu[i] + log_sigma[i].exp() * anchor.lift(eps[i]))
            .collect();
        let log_q0 = gaussian_log_density(&mu, &log_sigma, &z0);

        let (z_k, sum_logdet, geodesic) = match &self.arch {
            FlowArch::Ddnf(spec) => {
                let mut eff = spec.clone();
                eff.logdet_method = logdet_method;
                let out = flow_pass(
                    &eff,
                    &views.blocks,
                    &z0,
                    None,
                    Direction::Forward,
                    PassOptions {
                        logdet: true,
                        geodesic: self.reg.gamma_geodesic > 0.0,
                        trajectory: false,
                    },
                    probe_rng,
                )?;
                (out.z, out.sum_logdet.expect("logdet requested"), out.geodesic)
            }
            FlowArch::Planar { dim, layers } => {
                let (z_k, logdet) =
                    crate::targets::planar_stack_forward(*dim, *layers, views.planar.unwrap(), &z0)?;
                (z_k, logdet, None)
            }
        };

        let target_term = match &self.target {
            Target::Energy(energy) => energy.energy_with(&z_k),
            Target::Posterior(bb) => -bb.log_unnorm_posterior_with(&z_k),
        };
        let nll = log_q0 - sum_logdet + target_term;

        let mut total = nll;
        let mut geodesic_value = 0.0;
        if let Some(geo) = geodesic {
            geodesic_value = geo.value();
            total = total + geo.scale(self.reg.gamma_geodesic);
        }
        let mut inverse_consistency_value = 0.0;
        if self.reg.gamma_inverse > 0.0 {
            let spec = match &self.arch {
                FlowArch::Ddnf(spec) => spec,
                FlowArch::Planar { .. } => unreachable!("validated out"),
            };
            let back = flow_pass(
                spec,
                &views.blocks,
                &z_k,
                None,
                Direction::Inverse,
                PassOptions { logdet: false, geodesic: false, trajectory: false },
                None,
            )?;
            let residual = residual_norm(&z0, &back.z);
            inverse_consistency_value = residual.value();
            total = total + residual.scale(self.reg.gamma_inverse);
        }

        Ok(SampleParts { total, nll, geodesic: geodesic_value, inverse_consistency: inverse_consistency_value })
    }

    /// Plain (gradient-free) batch loss at a flat parameter vector.
    /// Deterministic: Hutchinson probes, when enabled, come from a stream
    /// derived from `probe_seed`.
    pub fn batch_loss(
        &self,
        flat: &[f64],
        eps_batch: &[Vec<f64>],
        logdet_method: LogdetMethod,
        probe_seed: u64,
    ) -> Result<BatchLoss> {
        if eps_batch.is_empty() {
            return Err(Error::EmptyData("objective batch"));
        }
        let needs_probes = self.needs_probes();
        let mut loss = 0.0;
        let mut nll = 0.0;
        let mut geo = 0.0;
        let mut invc = 0.0;
        for (i, eps) in eps_batch.iter().enumerate() {
            let mut rng = needs_probes.then(|| Rng::new(probe_seed).derive(i as u64));
            let parts = self.sample_loss(flat, eps, logdet_method, rng.as_mut())?;
            loss += parts.total;
            nll += parts.nll;
            geo += parts.geodesic;
            invc += parts.inverse_consistency;
        }
        let n = eps_batch.len() as f64;
        Ok(BatchLoss {
            loss: loss / n,
            elbo_estimate: -(nll / n),
            geodesic: geo / n,
            inverse_consistency: invc / n,
        })
    }

    fn needs_probes(&self) -> bool {
        matches!(&self.arch, FlowArch::Ddnf(spec) if spec.hutchinson_probes > 0)
    }

    /// Batch loss and gradient. Per-sample tapes run in parallel; the
    /// reduction is in sample index order, so results are deterministic in
    /// (parameters, draws, probe_seed).
    pub fn batch_loss_grad(
        &self,
        flat: &[f64],
        eps_batch: &[Vec<f64>],
        logdet_method: LogdetMethod,
        probe_seed: u64,
    ) -> Result<(BatchLoss, Vec<f64>)> {
        if eps_batch.is_empty() {
            return Err(Error::EmptyData("objective batch"));
        }
        let n_params = self.param_count();
        let needs_probes = self.needs_probes();
        // (loss, nll, geodesic, inverse-consistency, gradient) per sample
        type SampleEval = (f64, f64, f64, f64, Vec<f64>);
        let per_sample: Vec<Result<SampleEval>> = eps_batch
            .par_iter()
            .enumerate()
            .map(|(i, eps)| {
                let tape = Tape::with_capacity(4096);
                let vars = tape.vars(flat);
                let mut rng = needs_probes.then(|| Rng::new(probe_seed).derive(i as u64));
                let parts = self.sample_loss(&vars, eps, logdet_method, rng.as_mut())?;
                let adjoints = tape.backward(parts.total)?;
                let grad: Vec<f64> = vars.iter().map(|v| adjoints[v.index()]).collect();
                Ok((
                    parts.total.value(),
                    parts.nll.value(),
                    parts.geodesic,
                    parts.inverse_consistency,
                    grad,
                ))
            })
            .collect();

        let mut loss = 0.0;
        let mut nll = 0.0;
        let mut geo = 0.0;
        let mut invc = 0.0;
        let mut grad = vec![0.0; n_params];
        for sample in per_sample {
            let (l, s_nll, s_geo, s_invc, g) = sample?;
            loss += l;
            nll += s_nll;
            geo += s_geo;
            invc += s_invc;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let n = eps_batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        let batch = BatchLoss {
            loss: loss / n,
            elbo_estimate: -(nll / n),
            geodesic: geo / n,
            inverse_consistency: invc / n,
        };
        Ok((batch, grad))
    }
}

/// Loss of an existing DDNF model on a fixed batch of base draws; the public
/// entry point for the energy objective.
pub fn energy_objective(
    model: &FlowModel,
    base: &BaseDistribution,
    target: &EnergyTarget,
    eps_batch: &[Vec<f64>],
    reg: &RegWeights,
) -> Result<f64> {
    let objective = Objective::new(
        Target::Energy(*target),
        FlowArch::Ddnf(model.spec.clone()),
        base.clone(),
        *reg,
    )?;
    let flat = pack_model(&objective, model, base);
    Ok(objective.batch_loss(&flat, eps_batch, model.spec.logdet_method, 0)?.loss)
}

/// Loss of an existing DDNF model against the beta-binomial posterior.
pub fn posterior_objective(
    model: &FlowModel,
    base: &BaseDistribution,
    bb: &BetaBinomialModel,
    eps_batch: &[Vec<f64>],
    reg: &RegWeights,
) -> Result<f64> {
    let objective = Objective::new(
        Target::Posterior(bb.clone()),
        FlowArch::Ddnf(model.spec.clone()),
        base.clone(),
        *reg,
    )?;
    let flat = pack_model(&objective, model, base);
    Ok(objective.batch_loss(&flat, eps_batch, model.spec.logdet_method, 0)?.loss)
}

fn pack_model(objective: &Objective, model: &FlowModel, base: &BaseDistribution) -> Vec<f64> {
    let mut flat = Vec::with_capacity(objective.param_count());
    for block in &model.blocks {
        flat.extend_from_slice(&block.params.values);
    }
    if base.learnable {
        flat.extend_from_slice(&base.mu);
        flat.extend_from_slice(&base.log_sigma);
    }
    flat
}

// ---- optimizer ---------------------------------------------------------------

enum OptimizerState {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam { beta1, beta2, epsilon, m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + *epsilon);
                }
            }
        }
    }
}

// ---- training loop ------------------------------------------------------------

const EPS_STREAM: u64 = 0x657073;
const PROBE_STREAM: u64 = 0x68757463;

/// Stochastic-gradient training. Deterministic for a fixed config: parameter
/// init, base draws, and Hutchinson probes all derive from `cfg.seed`.
pub fn train(target: Target, arch: FlowArch, base: BaseDistribution, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let objective = Objective::new(target, arch, base, cfg.reg)?;
    let mut params = objective.initial_params(cfg.seed)?;
    let mut optimizer = OptimizerState::new(cfg.optimizer, params.len());
    let root = Rng::new(cfg.seed);
    let dim = objective.dim();
    let start = Instant::now();

    let mut records = Vec::new();
    let mut diverged_at = None;

    for iteration in 1..=cfg.iterations {
        let mut eps_rng = root.derive(EPS_STREAM ^ iteration as u64);
        let eps_batch: Vec<Vec<f64>> =
            (0..cfg.batch_size).map(|_| eps_rng.normal_vec(dim)).collect();
        let probe_seed = root.derive(PROBE_STREAM ^ iteration as u64).next_u64();

        let evaluated =
            objective.batch_loss_grad(&params, &eps_batch, cfg.logdet_method, probe_seed);
        let (batch, grad) = match evaluated {
            Ok(ok) => ok,
            Err(err) if is_divergence(&err) => {
                diverged_at = Some(iteration);
                break;
            }
            Err(err) => return Err(err),
        };
        if !batch.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            diverged_at = Some(iteration);
            break;
        }

        optimizer.step(&mut params, &grad, cfg.learning_rate);

        if iteration % cfg.eval_every == 0 || iteration == cfg.iterations {
            records.push(TrainRecord {
                iteration,
                loss: batch.loss,
                elbo_estimate: batch.elbo_estimate,
                geodesic_value: batch.geodesic,
                inverse_consistency_value: batch.inverse_consistency,
                wallclock: start.elapsed().as_secs_f64(),
            });
        }
    }

    let (flow, base) = objective.unpack(&params)?;
    Ok(TrainOutcome { flow, base, records, diverged_at })
}

fn is_divergence(err: &Error) -> bool {
    matches!(
        err,
        Error::NonFinite { .. }
            | Error::NonFiniteCell { .. }
            | Error::SingularCell { .. }
            | Error::SingularMatrix(_)
            | Error::Diverged { .. }
    )
}
