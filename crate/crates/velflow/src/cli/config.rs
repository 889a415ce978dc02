//! Experiment configurations. Each command's config is a plain struct with
//! toml-loadable fields; the binary overlays explicitly-passed flags on top
//! of `--config` files or the built-in defaults.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::flow::LogdetMethod;
use crate::inference::OptimizerKind;
use crate::targets::RingNorm;
use crate::{Error, Result};

fn default_t_list() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64, 128]
}

/// §ode-accuracy: forward Euler vs the adaptive integrator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeAccuracyConfig {
    pub t_list: Vec<usize>,
    pub trials: usize,
    pub blocks: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub rtol: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for OdeAccuracyConfig {
    fn default() -> Self {
        OdeAccuracyConfig {
            t_list: default_t_list(),
            trials: 50,
            blocks: 1,
            dim: 2,
            hidden: vec![2, 2],
            init_scale: 1.0,
            rtol: 1e-10,
            seed: 0,
            out: PathBuf::from("out/ode-accuracy"),
        }
    }
}

/// inversion: reconstruction error of forward-then-backward integration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub t_list: Vec<usize>,
    pub trials: usize,
    pub samples: usize,
    pub blocks: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            t_list: default_t_list(),
            trials: 50,
            samples: 1000,
            blocks: 1,
            dim: 2,
            hidden: vec![2, 2],
            init_scale: 1.0,
            seed: 0,
            out: PathBuf::from("out/inversion"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    EnergyU1,
    EnergyU2,
    Posterior,
}

impl FromStr for FitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy-u1" => Ok(FitKind::EnergyU1),
            "energy-u2" => Ok(FitKind::EnergyU2),
            "posterior" => Ok(FitKind::Posterior),
            other => Err(Error::InvalidSpec(format!(
                "unknown fit kind `{other}` (expected energy-u1, energy-u2, posterior)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowFamily {
    Ddnf,
    Planar,
}

impl FromStr for FlowFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddnf" => Ok(FlowFamily::Ddnf),
            "planar" => Ok(FlowFamily::Planar),
            other => Err(Error::InvalidSpec(format!(
                "unknown flow family `{other}` (expected ddnf, planar)"
            ))),
        }
    }
}

impl FromStr for LogdetMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_order" => Ok(LogdetMethod::FirstOrder),
            "second_order_paper" => Ok(LogdetMethod::SecondOrderPaper),
            "second_order_series" => Ok(LogdetMethod::SecondOrderSeries),
            "exact" => Ok(LogdetMethod::Exact),
            other => Err(Error::InvalidSpec(format!(
                "unknown logdet method `{other}` (expected first_order, second_order_paper, \
                 second_order_series, exact)"
            ))),
        }
    }
}

/// fit: train a flow against a toy energy or the beta-binomial posterior.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kind: FitKind,
    pub flow: FlowFamily,
    /// K for ddnf; layer count for planar.
    pub blocks: usize,
    pub cells_per_block: usize,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub zero_init_output: bool,
    pub logdet_method: LogdetMethod,
    pub hutchinson_probes: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub gamma_geodesic: f64,
    pub gamma_inverse: f64,
    /// Default: learnable for the posterior kind, fixed N(0, I) for energies.
    pub base_learnable: Option<bool>,
    pub ring_norm: RingNorm,
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub eval_every: usize,
    pub pushforward_samples: usize,
    pub grid_resolution: usize,
    pub grid_range: f64,
    pub out: PathBuf,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kind: FitKind::EnergyU1,
            flow: FlowFamily::Ddnf,
            blocks: 8,
            cells_per_block: 8,
            hidden: vec![2, 2],
            init_scale: 1.0,
            zero_init_output: true,
            logdet_method: LogdetMethod::Exact,
            hutchinson_probes: 0,
            batch_size: 256,
            iterations: 5000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            gamma_geodesic: 0.0,
            gamma_inverse: 0.0,
            base_learnable: None,
            ring_norm: RingNorm::Squared,
            data: None,
            seed: 0,
            eval_every: 10,
            pushforward_samples: 10_000,
            grid_resolution: 200,
            grid_range: 4.0,
            out: PathBuf::from("out/fit"),
        }
    }
}

/// mcmc: the random-walk Metropolis oracle as a command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcCommandConfig {
    /// Beta-binomial data file; mutually exclusive with `smoke_normal`.
    pub data: Option<PathBuf>,
    /// Built-in standard-normal smoke target.
    pub smoke_normal: bool,
    pub steps: usize,
    pub burn_in: usize,
    pub scale: f64,
    pub adapt: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for McmcCommandConfig {
    fn default() -> Self {
        McmcCommandConfig {
            data: None,
            smoke_normal: false,
            steps: 200_000,
            burn_in: 20_000,
            scale: 0.5,
            adapt: true,
            seed: 0,
            out: PathBuf::from("out/mcmc"),
        }
    }
}

/// export-grid: deformation, displacement, and density tables of a saved
/// model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportGridConfig {
    pub model: PathBuf,
    /// Grid is `resolution x resolution` over `[-range, range]²`.
    pub range: f64,
    pub deform_resolution: usize,
    pub heat_resolution: usize,
    pub out: PathBuf,
}

impl Default for ExportGridConfig {
    fn default() -> Self {
        ExportGridConfig {
            model: PathBuf::from("model.toml"),
            range: 4.0,
            deform_resolution: 20,
            heat_resolution: 200,
            out: PathBuf::from("out/grid"),
        }
    }
}

/// Load a TOML config file into any of the command config types.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
