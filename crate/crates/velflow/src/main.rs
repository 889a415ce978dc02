//! `velflow` — experiment CLI for diffeomorphic normalizing flows.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use velflow::cli::{
    self, load_config, ExportGridConfig, FitConfig, FitKind, FlowFamily, InversionConfig,
    McmcCommandConfig, OdeAccuracyConfig,
};
use velflow::flow::LogdetMethod;
use velflow::inference::OptimizerKind;
use velflow::targets::RingNorm;
use velflow::{Error, Result};

/// Overlay every `Some` flag onto the config field of the same name.
macro_rules! merge {
    ($cfg:ident, $args:ident, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field { $cfg.$field = v; })+
    };
}

#[derive(Parser)]
#[command(name = "velflow", version, about = "Diffeomorphic normalizing flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward Euler accuracy against an adaptive Runge-Kutta reference.
    OdeAccuracy(OdeAccuracyArgs),
    /// Forward-then-backward reconstruction error over a cell-count sweep.
    Inversion(InversionArgs),
    /// Train a flow on a toy energy or the beta-binomial posterior.
    Fit(Box<FitArgs>),
    /// Random-walk Metropolis ground truth for the posterior experiment.
    Mcmc(McmcArgs),
    /// Deformation, displacement, and density tables of a saved model.
    ExportGrid(ExportGridArgs),
}

#[derive(Args)]
struct OdeAccuracyArgs {
    /// Full config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated cell counts, e.g. 1,2,4,8,16,32,64,128
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    /// Comma-separated hidden-layer widths of the velocity net.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OdeAccuracyArgs {
    fn resolve(self) -> Result<OdeAccuracyConfig> {
        let mut cfg: OdeAccuracyConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => OdeAccuracyConfig::default(),
        };
        merge!(cfg, self, t_list, trials, blocks, hidden, init_scale, rtol, seed, out);
        Ok(cfg)
    }
}

#[derive(Args)]
struct InversionArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl InversionArgs {
    fn resolve(self) -> Result<InversionConfig> {
        let mut cfg: InversionConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => InversionConfig::default(),
        };
        merge!(cfg, self, t_list, trials, samples, blocks, hidden, init_scale, seed, out);
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// energy-u1 | energy-u2 | posterior
    #[arg(long)]
    kind: Option<String>,
    /// ddnf | planar
    #[arg(long)]
    flow: Option<String>,
    /// Stationary blocks K (ddnf) or layer count (planar).
    #[arg(long)]
    blocks: Option<usize>,
    /// Euler cells per block T.
    #[arg(long)]
    cells_per_block: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    zero_init_output: Option<bool>,
    /// first_order | second_order_paper | second_order_series | exact
    #[arg(long)]
    logdet_method: Option<String>,
    #[arg(long)]
    hutchinson_probes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    gamma_geodesic: Option<f64>,
    #[arg(long)]
    gamma_inverse: Option<f64>,
    #[arg(long)]
    base_learnable: Option<bool>,
    /// squared | plain ring-term norm of the toy energies.
    #[arg(long)]
    ring_norm: Option<String>,
    /// Beta-binomial data CSV (header `n,y`); required for --kind posterior.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    pushforward_samples: Option<usize>,
    #[arg(long)]
    grid_resolution: Option<usize>,
    #[arg(long)]
    grid_range: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl FitArgs {
    fn resolve(self) -> Result<FitConfig> {
        let mut cfg: FitConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => FitConfig::default(),
        };
        if let Some(kind) = &self.kind {
            cfg.kind = FitKind::from_str(kind)?;
        }
        if let Some(flow) = &self.flow {
            cfg.flow = FlowFamily::from_str(flow)?;
        }
        if let Some(method) = &self.logdet_method {
            cfg.logdet_method = LogdetMethod::from_str(method)?;
        }
        if let Some(opt) = &self.optimizer {
            cfg.optimizer = match opt.as_str() {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::default(),
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "unknown optimizer `{other}` (expected sgd, adam)"
                    )))
                }
            };
        }
        if let Some(ring) = &self.ring_norm {
            cfg.ring_norm = match ring.as_str() {
                "squared" => RingNorm::Squared,
                "plain" => RingNorm::Plain,
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "unknown ring norm `{other}` (expected squared, plain)"
                    )))
                }
            };
        }
        if self.base_learnable.is_some() {
            cfg.base_learnable = self.base_learnable;
        }
        if self.data.is_some() {
            cfg.data = self.data;
        }
        merge!(
            cfg,
            self,
            blocks,
            cells_per_block,
            hidden,
            init_scale,
            zero_init_output,
            hutchinson_probes,
            batch_size,
            iterations,
            learning_rate,
            gamma_geodesic,
            gamma_inverse,
            seed,
            eval_every,
            pushforward_samples,
            grid_resolution,
            grid_range,
            out
        );
        Ok(cfg)
    }
}

#[derive(Args)]
struct McmcArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample the built-in 1-d standard normal instead of a posterior.
    #[arg(long)]
    smoke_normal: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    adapt: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl McmcArgs {
    fn resolve(self) -> Result<McmcCommandConfig> {
        let mut cfg: McmcCommandConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => McmcCommandConfig::default(),
        };
        if self.data.is_some() {
            cfg.data = self.data;
        }
        if self.smoke_normal {
            cfg.smoke_normal = true;
        }
        merge!(cfg, self, steps, burn_in, scale, adapt, seed, out);
        Ok(cfg)
    }
}

#[derive(Args)]
struct ExportGridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    range: Option<f64>,
    #[arg(long)]
    deform_resolution: Option<usize>,
    #[arg(long)]
    heat_resolution: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExportGridArgs {
    fn resolve(self) -> Result<ExportGridConfig> {
        let mut cfg: ExportGridConfig = match &self.config {
            Some(path) => load_config(path)?,
            None => ExportGridConfig::default(),
        };
        merge!(cfg, self, model, range, deform_resolution, heat_resolution, out);
        Ok(cfg)
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::OdeAccuracy(args) => cli::run_ode_accuracy(&args.resolve()?),
        Command::Inversion(args) => cli::run_inversion(&args.resolve()?),
        Command::Fit(args) => cli::run_fit(&args.resolve()?),
        Command::Mcmc(args) => cli::run_mcmc(&args.resolve()?),
        Command::ExportGrid(args) => cli::run_export_grid(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
