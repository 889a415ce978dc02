//! Diffeomorphic normalizing flows on small latent spaces.
//!
//! A flow is built by Euler-integrating a neural velocity field to unit time:
//! `K` stationary blocks, each unrolled into `T` residual cells
//! `z <- z + dt * v(z)`. Because the map is (approximately) a diffeomorphism,
//! the inverse is obtained by integrating the negated field, and the
//! change-of-variables log-determinant is accumulated per cell, either exactly
//! or through Taylor expansions around the identity.
//!
//! Everything the method approximates ships with an independent ground truth
//! in [`oracles`]: an adaptive Runge-Kutta integrator for the ODE, LU-based
//! log-determinants, matrix exponentials, finite differences for gradients,
//! and random-walk Metropolis for posterior moments.
//!
//! The crate is organised around a small set of layers:
//!
//! * [`autodiff`] — scalar reverse-mode tape, forward-mode duals, and the
//!   generic [`autodiff::Scalar`] trait the numeric kernels are written over.
//! * [`velocity`] — tanh MLP velocity fields with exact Jacobians.
//! * [`flow`] — Euler cells, block composition, forward/inverse maps and
//!   per-cell log-determinants.
//! * [`regularize`] — geodesic (path-length) and inverse-consistency penalties.
//! * [`targets`] — base distributions, toy energies, the beta-binomial
//!   posterior, and the planar-flow baseline.
//! * [`inference`] — variational objectives and the training loop.
//! * [`oracles`] — the ground-truth computations listed above.
//! * [`cli`] — experiment commands behind the `velflow` binary.
//!
//! ```
//! use velflow::flow::{FlowModel, FlowSpec};
//! use velflow::targets::BaseDistribution;
//!
//! // a flow with zeroed output layers is exactly the identity map
//! let mut spec = FlowSpec::new(2, 4, 8);
//! spec.velocity.zero_init_output = true;
//! let model = FlowModel::init(spec, 0)?;
//!
//! let result = model.forward(&[0.3, -1.2], None, false)?;
//! assert_eq!(result.z_out, vec![0.3, -1.2]);
//! assert_eq!(result.sum_logdet, 0.0);
//!
//! // so its pushforward density is the base density itself
//! let base = BaseDistribution::standard(2);
//! let ld = model.log_density(&base, &[0.0, 0.0], None)?;
//! assert!((ld + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
//! # Ok::<(), velflow::Error>(())
//! ```

pub mod autodiff;
pub mod cli;
pub mod flow;
pub mod inference;
pub mod io;
pub mod oracles;
pub mod regularize;
pub mod rng;
pub mod targets;
pub mod velocity;

use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("non-finite value produced by `{op}` node during {phase} pass")]
    NonFinite { op: &'static str, phase: &'static str },

    #[error("non-finite state after cell {cell} of block {block}")]
    NonFiniteCell { block: usize, cell: usize },

    #[error("singular cell: det(I + dt*J) vanished (block {block}, cell {cell})")]
    SingularCell { block: usize, cell: usize },

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("ODE step size underflow at t = {t}: problem too stiff for the tolerance")]
    StepUnderflow { t: f64 },

    #[error("training diverged at iteration {iteration}: loss non-finite")]
    Diverged { iteration: usize },

    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("model file validation failed: {0}")]
    ModelValidation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 config/validation, 3 divergence,
    /// 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Diverged { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
