//! The diffeomorphic flow: Euler cells, stationary blocks, non-stationary
//! chains, forward and inverse maps, and per-cell log-determinants.
//!
//! A flow integrates dz/dt = v(z) over the unit interval, split into `K`
//! blocks of `T` Euler cells each (dt = 1/(K·T)); block k owns its own
//! velocity field, shared by its T cells. The inverse integrates the negated
//! fields with blocks and cells reversed. Each cell multiplies the density by
//! |det(I + dt·J)|, approximated per `LogdetMethod` or computed exactly.
//!
//! Two second-order Taylor variants are implemented: `SecondOrderPaper`
//! subtracts ½dt²·Tr(JᵀJ), the Gram form that falls out of deriving the
//! expansion through det(A)² = det(AAᵀ), and `SecondOrderSeries` subtracts
//! ½dt²·Tr(J²), the exact truncated expansion of log det(I + dt·J). They
//! coincide for symmetric J and disagree otherwise (the rotation generator
//! is the sharpest example; see the tests).

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, sq_norm, Dual, Mat, ParamLayout, Scalar};
use crate::rng::Rng;
use crate::targets::BaseDistribution;
use crate::velocity::{self, VelocityField, VelocitySpec};
use crate::{Error, Result};

/// How each cell's log|det(I + dt·J)| is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogdetMethod {
    /// dt·Tr(J).
    FirstOrder,
    /// dt·Tr(J) - ½dt²·Tr(JᵀJ), the Gram-trace second-order form.
    SecondOrderPaper,
    /// dt·Tr(J) - ½dt²·Tr(J²), the direct series expansion.
    SecondOrderSeries,
    /// log|det(I + dt·J)| by LU decomposition.
    #[default]
    Exact,
}

/// Architecture of the whole flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    /// Number of stationary blocks K.
    pub blocks: usize,
    /// Euler cells per block T.
    pub cells_per_block: usize,
    pub logdet_method: LogdetMethod,
    /// Hutchinson probes M for the Taylor traces; 0 computes traces exactly.
    pub hutchinson_probes: usize,
    pub context_dim: usize,
    /// Architecture shared by every block (each block gets independent
    /// parameters).
    pub velocity: VelocitySpec,
}

impl FlowSpec {
    /// Spec with the default velocity net and exact log-determinants.
    pub fn new(dim: usize, blocks: usize, cells_per_block: usize) -> Self {
        FlowSpec {
            dim,
            blocks,
            cells_per_block,
            logdet_method: LogdetMethod::Exact,
            hutchinson_probes: 0,
            context_dim: 0,
            velocity: VelocitySpec { dim, ..VelocitySpec::default_2d() },
        }
    }

    /// Step size; K·T·dt spans the unit integration interval.
    pub fn dt(&self) -> f64 {
        1.0 / (self.blocks * self.cells_per_block) as f64
    }

    pub fn n_cells(&self) -> usize {
        self.blocks * self.cells_per_block
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.blocks == 0 || self.cells_per_block == 0 {
            return Err(Error::InvalidSpec(
                "flow needs dim >= 1, blocks >= 1, cells_per_block >= 1".into(),
            ));
        }
        if self.velocity.dim != self.dim {
            return Err(Error::InvalidSpec(format!(
                "velocity dim {} != flow dim {}",
                self.velocity.dim, self.dim
            )));
        }
        if self.velocity.context_dim != self.context_dim {
            return Err(Error::InvalidSpec(format!(
                "velocity context_dim {} != flow context_dim {}",
                self.velocity.context_dim, self.context_dim
            )));
        }
        if self.logdet_method == LogdetMethod::Exact && self.hutchinson_probes != 0 {
            return Err(Error::InvalidSpec(
                "exact log-det excludes Hutchinson probes (set hutchinson_probes = 0)".into(),
            ));
        }
        self.velocity.validate()
    }
}

/// K independently parameterized velocity fields under one spec.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub spec: FlowSpec,
    pub blocks: Vec<VelocityField>,
}

/// Output of a forward or inverse pass.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub z_out: Vec<f64>,
    /// Accumulated cell log-determinants of the traversed direction.
    pub sum_logdet: f64,
    /// Visited points (start plus one per cell), when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

// Fixed stream for probe draws in the plain evaluation API, so forward maps
// stay deterministic functions of their inputs.
const EVAL_PROBE_STREAM: u64 = 0x70726f6265;

impl FlowModel {
    /// Deterministic initialization; block k draws from a stream derived from
    /// (seed, k).
    pub fn init(spec: FlowSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(seed);
        let blocks = (0..spec.blocks)
            .map(|k| {
                let block_seed = root.derive(k as u64).next_u64();
                VelocityField::init(spec.velocity.clone(), block_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowModel { spec, blocks })
    }

    /// Assemble a model from existing fields (they must all match the spec's
    /// velocity architecture).
    pub fn from_blocks(spec: FlowSpec, blocks: Vec<VelocityField>) -> Result<Self> {
        spec.validate()?;
        if blocks.len() != spec.blocks {
            return Err(Error::InvalidSpec(format!(
                "expected {} blocks, got {}",
                spec.blocks,
                blocks.len()
            )));
        }
        for field in &blocks {
            if field.spec.dim != spec.dim || field.spec.context_dim != spec.context_dim {
                return Err(Error::InvalidSpec(
                    "block field dimensions do not match the flow spec".into(),
                ));
            }
        }
        Ok(FlowModel { spec, blocks })
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.params.len()).sum()
    }

    pub(crate) fn block_params(&self) -> Vec<&[f64]> {
        self.blocks.iter().map(|b| b.params.values.as_slice()).collect()
    }

    fn check_point(&self, z: &[f64], context: Option<&[f64]>) -> Result<()> {
        velocity::check_input(&self.spec.velocity, z.len(), context.map(|c| c.len()))
    }

    /// Apply all K·T Euler cells in block order 1..K, accumulating the
    /// forward log-determinant with the spec's method.
    pub fn forward(
        &self,
        z0: &[f64],
        context: Option<&[f64]>,
        want_trajectory: bool,
    ) -> Result<FlowResult> {
        self.check_point(z0, context)?;
        let mut probe_rng = Rng::new(EVAL_PROBE_STREAM);
        let out = flow_pass(
            &self.spec,
            &self.block_params(),
            z0,
            context,
            Direction::Forward,
            PassOptions { logdet: true, geodesic: false, trajectory: want_trajectory },
            Some(&mut probe_rng),
        )?;
        Ok(FlowResult {
            z_out: out.z,
            sum_logdet: out.sum_logdet.unwrap_or(0.0),
            trajectory: out.trajectory,
        })
    }

    /// Integrate the negated fields, blocks in order K..1 with cells
    /// reversed; `sum_logdet` accumulates the backward cells' own
    /// log-determinants.
    pub fn inverse(&self, z: &[f64], context: Option<&[f64]>) -> Result<FlowResult> {
        self.check_point(z, context)?;
        let mut probe_rng = Rng::new(EVAL_PROBE_STREAM);
        let out = flow_pass(
            &self.spec,
            &self.block_params(),
            z,
            context,
            Direction::Inverse,
            PassOptions { logdet: true, geodesic: false, trajectory: false },
            Some(&mut probe_rng),
        )?;
        Ok(FlowResult { z_out: out.z, sum_logdet: out.sum_logdet.unwrap_or(0.0), trajectory: None })
    }

    /// Change-of-variables density: log q(z) = log q0(φ⁻¹(z)) plus the
    /// backward pass log-determinant.
    pub fn log_density(
        &self,
        base: &BaseDistribution,
        z: &[f64],
        context: Option<&[f64]>,
    ) -> Result<f64> {
        let back = self.inverse(z, context)?;
        Ok(base.log_density(&back.z_out)? + back.sum_logdet)
    }
}

/// One Euler cell z + dt·v(z).
pub fn euler_step(
    field: &VelocityField,
    z: &[f64],
    dt: f64,
    context: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::InvalidSpec("euler_step requires dt > 0".into()));
    }
    let v = field.eval(z, context)?;
    let out: Vec<f64> = z.iter().zip(&v).map(|(&zi, &vi)| zi + dt * vi).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "euler_step", phase: "forward" });
    }
    Ok(out)
}

/// log|det(I + dt·J)| of one cell at `z`, by the chosen method. `dt` may be
/// negative, which yields the backward cell's own formula.
pub fn cell_logdet(
    field: &VelocityField,
    z: &[f64],
    dt: f64,
    method: LogdetMethod,
    context: Option<&[f64]>,
) -> Result<f64> {
    let jac = field.jacobian(z, context)?;
    cell_logdet_from_jac(&jac, dt, method).ok_or(Error::SingularMatrix("cell_logdet"))
}

/// Probe-averaged Hutchinson estimate of Tr(J v) at `z`, computed through
/// Jacobian-vector products (the Jacobian is never materialized). Unbiased
/// for the exact trace.
pub fn hutchinson_trace(
    field: &VelocityField,
    z: &[f64],
    probes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidSpec("hutchinson_trace needs at least one probe".into()));
    }
    let ws: Vec<Vec<f64>> = (0..probes).map(|_| rng.normal_vec(z.len())).collect();
    hutchinson_trace_with_probes(field, z, &ws)
}

pub(crate) fn hutchinson_trace_with_probes(
    field: &VelocityField,
    z: &[f64],
    probes: &[Vec<f64>],
) -> Result<f64> {
    velocity::check_input(&field.spec, z.len(), None)?;
    let layout = &field.params.layout;
    let params: Vec<Dual<f64>> =
        field.params.values.iter().map(|&p| Dual::constant(p)).collect();
    let mut acc = 0.0;
    for w in probes {
        let z_d: Vec<Dual<f64>> =
            z.iter().zip(w).map(|(&zi, &wi)| Dual::seeded(zi, wi)).collect();
        let out = velocity::eval_with(&field.spec, layout, &params, &z_d, None);
        let jw_dot_w: f64 = out.iter().zip(w).map(|(o, &wi)| o.dx * wi).sum();
        acc += jw_dot_w;
    }
    Ok(acc / probes.len() as f64)
}

// ---- generic pass machinery ------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PassOptions {
    pub logdet: bool,
    /// Accumulate Σ_cells dt·‖v‖² along the trajectory.
    pub geodesic: bool,
    pub trajectory: bool,
}

pub(crate) struct PassOut<R> {
    pub z: Vec<R>,
    pub sum_logdet: Option<R>,
    pub geodesic: Option<R>,
    pub trajectory: Option<Vec<Vec<R>>>,
}

/// Run all K·T cells in the given direction, generic over the scalar type so
/// the same code serves plain evaluation and tape-based training.
pub(crate) fn flow_pass<R: Scalar>(
    spec: &FlowSpec,
    blocks: &[&[R]],
    z0: &[R],
    context: Option<&[R]>,
    direction: Direction,
    opts: PassOptions,
    mut probe_rng: Option<&mut Rng>,
) -> Result<PassOut<R>> {
    debug_assert_eq!(blocks.len(), spec.blocks);
    let dt = spec.dt();
    let dt_signed = match direction {
        Direction::Forward => dt,
        Direction::Inverse => -dt,
    };
    let layout = spec.velocity.layout();

    let block_order: Vec<usize> = match direction {
        Direction::Forward => (0..spec.blocks).collect(),
        Direction::Inverse => (0..spec.blocks).rev().collect(),
    };

    let mut z = z0.to_vec();
    let mut sum_logdet: Option<R> = None;
    let mut geodesic: Option<R> = None;
    let mut trajectory = opts.trajectory.then(|| vec![z.clone()]);

    for &block in &block_order {
        let params = blocks[block];
        for cell in 0..spec.cells_per_block {
            let (v, logdet_term) = if opts.logdet {
                if spec.hutchinson_probes == 0 {
                    let (v, jac) =
                        velocity::eval_jacobian_with(&spec.velocity, &layout, params, &z, context);
                    let term = cell_logdet_from_jac(&jac, dt_signed, spec.logdet_method)
                        .ok_or(Error::SingularCell { block, cell })?;
                    (v, Some(term))
                } else {
                    let v = velocity::eval_with(&spec.velocity, &layout, params, &z, context);
                    let rng = probe_rng
                        .as_deref_mut()
                        .expect("hutchinson probes need a probe rng");
                    let term = taylor_logdet_probes(
                        &spec.velocity,
                        &layout,
                        params,
                        &z,
                        context,
                        dt_signed,
                        spec.logdet_method,
                        spec.hutchinson_probes,
                        rng,
                    );
                    (v, Some(term))
                }
            } else {
                (velocity::eval_with(&spec.velocity, &layout, params, &z, context), None)
            };

            if let Some(term) = logdet_term {
                sum_logdet = Some(match sum_logdet {
                    None => term,
                    Some(acc) => acc + term,
                });
            }
            if opts.geodesic {
                let term = sq_norm(&v).scale(dt);
                geodesic = Some(match geodesic {
                    None => term,
                    Some(acc) => acc + term,
                });
            }

            for i in 0..z.len() {
                z[i] = z[i] + v[i].scale(dt_signed);
            }
            if z.iter().any(|x| !x.value().is_finite()) {
                return Err(Error::NonFiniteCell { block, cell });
            }
            if let Some(t) = trajectory.as_mut() {
                t.push(z.clone());
            }
        }
    }

    Ok(PassOut { z, sum_logdet, geodesic, trajectory })
}

/// Per-cell log-determinant from an explicit Jacobian. Returns `None` when
/// the exact method meets a singular I + dt·J.
pub(crate) fn cell_logdet_from_jac<R: Scalar>(
    jac: &Mat<R>,
    dt: f64,
    method: LogdetMethod,
) -> Option<R> {
    match method {
        LogdetMethod::FirstOrder => Some(jac.trace().scale(dt)),
        LogdetMethod::SecondOrderPaper => {
            Some(jac.trace().scale(dt) - jac.frobenius_sq().scale(0.5 * dt * dt))
        }
        LogdetMethod::SecondOrderSeries => {
            Some(jac.trace().scale(dt) - jac.trace_of_square().scale(0.5 * dt * dt))
        }
        LogdetMethod::Exact => lu_logabsdet_i_plus_dt_j(jac, dt),
    }
}

/// log|det(I + dt·J)| by LU with partial pivoting on primal magnitudes; the
/// per-pivot sign is folded in as a constant so the expression stays
/// differentiable.
fn lu_logabsdet_i_plus_dt_j<R: Scalar>(jac: &Mat<R>, dt: f64) -> Option<R> {
    let d = jac.rows();
    let mut rows: Vec<Vec<R>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let v = jac.at(i, j).scale(dt);
                    if i == j {
                        v.add_const(1.0)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();

    let mut log_abs: Option<R> = None;
    for col in 0..d {
        let mut pivot_row = col;
        let mut best = rows[col][col].value().abs();
        for r in col + 1..d {
            let mag = rows[r][col].value().abs();
            if mag > best {
                best = mag;
                pivot_row = r;
            }
        }
        if best == 0.0 {
            return None;
        }
        rows.swap(col, pivot_row);
        let pivot = rows[col][col];
        let sign = if pivot.value() < 0.0 { -1.0 } else { 1.0 };
        let term = pivot.scale(sign).ln();
        log_abs = Some(match log_abs {
            None => term,
            Some(acc) => acc + term,
        });
        for r in col + 1..d {
            let factor = rows[r][col] / pivot;
            for c in col..d {
                rows[r][c] = rows[r][c] - factor * rows[col][c];
            }
        }
    }
    log_abs
}

/// Taylor log-determinant with Hutchinson-estimated traces:
/// Tr(J) from wᵀJw, Tr(JᵀJ) from ‖Jw‖², Tr(J²) from wᵀJ(Jw); every
/// Jacobian-vector product is a forward-mode sweep over `Dual<R>`.
#[allow(clippy::too_many_arguments)]
fn taylor_logdet_probes<R: Scalar>(
    vspec: &VelocitySpec,
    layout: &ParamLayout,
    params: &[R],
    z: &[R],
    context: Option<&[R]>,
    dt: f64,
    method: LogdetMethod,
    probes: usize,
    rng: &mut Rng,
) -> R {
    debug_assert!(matches!(
        method,
        LogdetMethod::FirstOrder | LogdetMethod::SecondOrderPaper | LogdetMethod::SecondOrderSeries
    ));
    let anchor = z[0];
    let params_d: Vec<Dual<R>> = params.iter().map(|&p| Dual::constant(p)).collect();
    let ctx_d: Option<Vec<Dual<R>>> =
        context.map(|c| c.iter().map(|&x| Dual::constant(x)).collect());

    let mut trace_acc: Option<R> = None;
    let mut second_acc: Option<R> = None;
    for _ in 0..probes {
        let w = rng.normal_vec(z.len());
        let w_lift: Vec<R> = w.iter().map(|&wi| anchor.lift(wi)).collect();
        let z_d: Vec<Dual<R>> = z
            .iter()
            .zip(&w_lift)
            .map(|(&zi, &wi)| Dual::seeded(zi, wi))
            .collect();
        let out = velocity::eval_with(vspec, layout, &params_d, &z_d, ctx_d.as_deref());
        let jw: Vec<R> = out.iter().map(|o| o.dx).collect();

        let t = dot(&w_lift, &jw);
        trace_acc = Some(match trace_acc {
            None => t,
            Some(acc) => acc + t,
        });

        let second = match method {
            LogdetMethod::FirstOrder => None,
            LogdetMethod::SecondOrderPaper => Some(sq_norm(&jw)),
            LogdetMethod::SecondOrderSeries => {
                let z_d2: Vec<Dual<R>> =
                    z.iter().zip(&jw).map(|(&zi, &ui)| Dual::seeded(zi, ui)).collect();
                let out2 = velocity::eval_with(vspec, layout, &params_d, &z_d2, ctx_d.as_deref());
                let jjw: Vec<R> = out2.iter().map(|o| o.dx).collect();
                Some(dot(&w_lift, &jjw))
            }
            LogdetMethod::Exact => unreachable!("validated out"),
        };
        if let Some(s) = second {
            second_acc = Some(match second_acc {
                None => s,
                Some(acc) => acc + s,
            });
        }
    }

    let inv_m = 1.0 / probes as f64;
    let first = trace_acc.expect("probes >= 1").scale(inv_m).scale(dt);
    match second_acc {
        None => first,
        Some(s) => first - s.scale(inv_m).scale(0.5 * dt * dt),
    }
}
