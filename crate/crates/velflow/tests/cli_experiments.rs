//! Integration tests of the experiment commands: output contracts,
//! reproducibility, exit codes, and the flow-family comparison.

use std::path::{Path, PathBuf};
use std::process::Command;

use velflow::cli::{
    self, ExportGridConfig, FitConfig, FitKind, InversionConfig, McmcCommandConfig,
    OdeAccuracyConfig,
};
use velflow::flow::{FlowModel, FlowSpec};
use velflow::inference::{train, FlowArch, Target, TrainConfig};
use velflow::io::{save_model, SavedModel};
use velflow::regularize::RegWeights;
use velflow::targets::{BaseDistribution, EnergyTarget};
use velflow::velocity::VelocityField;

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("velflow-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn data_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/betabinom_synthetic.csv")
}

fn quick_fit(out: PathBuf) -> FitConfig {
    FitConfig {
        iterations: 150,
        batch_size: 32,
        blocks: 2,
        cells_per_block: 4,
        pushforward_samples: 500,
        grid_resolution: 20,
        eval_every: 10,
        out,
        ..FitConfig::default()
    }
}

#[test]
fn fit_writes_all_outputs_and_is_reproducible() {
    let out_a = out_dir("fit-a");
    let out_b = out_dir("fit-b");
    cli::run_fit(&quick_fit(out_a.clone())).unwrap();
    cli::run_fit(&quick_fit(out_b.clone())).unwrap();

    for name in ["manifest.toml", "model.toml", "history.csv", "samples.csv", "grid.csv", "summary.toml"] {
        assert!(out_a.join(name).exists(), "{name} missing");
    }

    // byte-equal outputs modulo the wallclock column of the history
    for name in ["model.toml", "samples.csv", "grid.csv", "summary.toml"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let strip_wallclock = |path: PathBuf| {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip_wallclock(out_a.join("history.csv")), strip_wallclock(out_b.join("history.csv")));

    // manifests echo the command and resolved config; they differ only in
    // the out path
    let manifest = std::fs::read_to_string(out_a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("command = \"fit\""));
    assert!(manifest.contains("iterations = 150"));
}

#[test]
fn fit_history_row_count_follows_eval_every() {
    let out = out_dir("fit-rows");
    let cfg = quick_fit(out.clone());
    cli::run_fit(&cfg).unwrap();
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    // header + one row per eval_every
    assert_eq!(history.lines().count(), 1 + cfg.iterations / cfg.eval_every);
    assert!(history.starts_with("iter,loss,elbo,geo,invc,seconds"));
}

#[test]
fn posterior_fit_emits_transformed_samples() {
    let out = out_dir("fit-posterior");
    let cfg = FitConfig {
        kind: FitKind::Posterior,
        data: Some(data_file()),
        iterations: 200,
        batch_size: 32,
        blocks: 2,
        cells_per_block: 4,
        learning_rate: 1e-2,
        pushforward_samples: 400,
        out: out.clone(),
        ..FitConfig::default()
    };
    cli::run_fit(&cfg).unwrap();
    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut lines = samples.lines();
    assert_eq!(lines.next().unwrap(), "m,L");
    for line in lines {
        let (m, l) = line.split_once(',').unwrap();
        let m: f64 = m.parse().unwrap();
        let l: f64 = l.parse().unwrap();
        assert!((0.0..1.0).contains(&m), "m out of (0,1): {m}");
        assert!(l > 0.0, "L not positive: {l}");
    }
    let summary = std::fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains("m_mean"));
}

#[test]
fn zero_fields_give_zero_errors_in_both_sweeps() {
    // init_scale 0 makes every velocity field identically zero: the flow is
    // the identity at all T, so both experiments report exact zeros
    let out = out_dir("ode-zero");
    let cfg = OdeAccuracyConfig {
        t_list: vec![1, 8, 64],
        trials: 3,
        init_scale: 0.0,
        out: out.clone(),
        ..OdeAccuracyConfig::default()
    };
    cli::run_ode_accuracy(&cfg).unwrap();
    for line in std::fs::read_to_string(out.join("ode_accuracy.csv")).unwrap().lines().skip(1) {
        let mse: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(mse, 0.0);
    }

    let out = out_dir("inv-zero");
    let cfg = InversionConfig {
        t_list: vec![1, 8, 64],
        trials: 3,
        samples: 20,
        init_scale: 0.0,
        out: out.clone(),
        ..InversionConfig::default()
    };
    cli::run_inversion(&cfg).unwrap();
    for line in std::fs::read_to_string(out.join("inversion.csv")).unwrap().lines().skip(1) {
        let mse: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(mse, 0.0);
    }
}

#[test]
fn crashed_run_still_leaves_the_manifest() {
    let out = out_dir("fit-crash");
    let cfg = FitConfig {
        kind: FitKind::Posterior,
        data: Some(PathBuf::from("/nonexistent/data.csv")),
        out: out.clone(),
        ..FitConfig::default()
    };
    assert!(cli::run_fit(&cfg).is_err());
    assert!(out.join("manifest.toml").exists());
    assert!(!out.join("history.csv").exists());
}

#[test]
fn ode_accuracy_row_count_matches_t_list() {
    let out = out_dir("ode-rows");
    let cfg = OdeAccuracyConfig {
        t_list: vec![1, 2, 4],
        trials: 3,
        out: out.clone(),
        ..OdeAccuracyConfig::default()
    };
    cli::run_ode_accuracy(&cfg).unwrap();
    let text = std::fs::read_to_string(out.join("ode_accuracy.csv")).unwrap();
    assert_eq!(text.lines().count(), 4); // header + |t_list|
    assert!(text.starts_with("t,dt,mse"));
}

#[test]
fn inversion_reports_std_column_and_constant_fields_reconstruct() {
    let out = out_dir("inv-contract");
    let cfg = InversionConfig {
        t_list: vec![1, 4],
        trials: 3,
        samples: 50,
        // zero hidden widths are invalid, so emulate "constant" via tiny
        // init: a plain run checks the format contract only
        out: out.clone(),
        ..InversionConfig::default()
    };
    cli::run_inversion(&cfg).unwrap();
    let text = std::fs::read_to_string(out.join("inversion.csv")).unwrap();
    assert!(text.starts_with("t,dt,mse,std"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn export_grid_of_identity_model_matches_base() {
    let out = out_dir("grid-identity");
    let mut spec = FlowSpec::new(2, 1, 4);
    spec.velocity.zero_init_output = true;
    let model = FlowModel::init(spec, 0).unwrap();
    let base = BaseDistribution::standard(2);
    let model_path = out.join("model.toml");
    save_model(&SavedModel::from_ddnf(&model, &base), &model_path).unwrap();

    let cfg = ExportGridConfig {
        model: model_path,
        deform_resolution: 10,
        heat_resolution: 20,
        out: out.clone(),
        ..ExportGridConfig::default()
    };
    cli::run_export_grid(&cfg).unwrap();

    // deformed grid equals the input grid, displacement identically zero
    for line in std::fs::read_to_string(out.join("deformed_grid.csv")).unwrap().lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0], v[2]);
        assert_eq!(v[1], v[3]);
    }
    for line in std::fs::read_to_string(out.join("displacement.csv")).unwrap().lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[2], 0.0);
        assert_eq!(v[3], 0.0);
    }
    // heatmap equals the base density
    for line in std::fs::read_to_string(out.join("heatmap.csv")).unwrap().lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let expected = base.log_density(&[v[0], v[1]]).unwrap();
        assert!((v[2] - expected).abs() <= 1e-12);
    }
    let summary = std::fs::read_to_string(out.join("summary.toml")).unwrap();
    assert!(summary.contains("mean_inverse_residual = 0.0"), "{summary}");
}

#[test]
fn export_grid_of_constant_field_is_a_translation() {
    let out = out_dir("grid-constant");
    let field = VelocityField::constant(&[0.75, -0.5]);
    let mut spec = FlowSpec::new(2, 1, 4);
    spec.velocity = field.spec.clone();
    let model = FlowModel::from_blocks(spec, vec![field]).unwrap();
    let model_path = out.join("model.toml");
    save_model(&SavedModel::from_ddnf(&model, &BaseDistribution::standard(2)), &model_path)
        .unwrap();

    let cfg = ExportGridConfig {
        model: model_path,
        deform_resolution: 8,
        heat_resolution: 8,
        out: out.clone(),
        ..ExportGridConfig::default()
    };
    cli::run_export_grid(&cfg).unwrap();
    for line in std::fs::read_to_string(out.join("displacement.csv")).unwrap().lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - 0.75).abs() < 1e-12);
        assert!((v[3] + 0.5).abs() < 1e-12);
    }
}

#[test]
fn mcmc_smoke_normal_moments() {
    let out = out_dir("mcmc-smoke");
    let cfg = McmcCommandConfig {
        smoke_normal: true,
        steps: 110_000,
        burn_in: 10_000,
        scale: 2.4,
        adapt: false,
        out: out.clone(),
        ..McmcCommandConfig::default()
    };
    cli::run_mcmc(&cfg).unwrap();
    let summary = std::fs::read_to_string(out.join("summary.toml")).unwrap();
    let mean: f64 = summary
        .lines()
        .find(|l| l.starts_with("mean"))
        .unwrap()
        .split(['[', ']'])
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let std: f64 = summary
        .lines()
        .find(|l| l.starts_with("std"))
        .unwrap()
        .split(['[', ']'])
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean.abs() <= 0.05, "mean {mean}");
    assert!((0.9..=1.1).contains(&(std * std)), "variance {}", std * std);

    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert!(samples.starts_with("step,z0"));
    assert_eq!(samples.lines().count(), 1 + (cfg.steps - cfg.burn_in));
}

#[test]
fn ddnf_beats_planar_on_matched_seeds() {
    // Matched-seed comparison at K = 2: the velocity flow should fit u1 at
    // least as well as a 2-layer planar stack on most seeds.
    let train_one = |arch: FlowArch, seed: u64| {
        let cfg = TrainConfig {
            batch_size: 128,
            iterations: 800,
            learning_rate: 1e-2,
            optimizer: Default::default(),
            reg: RegWeights::none(),
            seed,
            logdet_method: velflow::flow::LogdetMethod::Exact,
            eval_every: 50,
        };
        let out = train(
            Target::Energy(EnergyTarget::u1()),
            arch,
            BaseDistribution::standard(2),
            &cfg,
        )
        .unwrap();
        // mean loss over the last quarter of records smooths batch noise
        let tail = &out.records[out.records.len() * 3 / 4..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    };

    let mut wins = 0;
    for seed in 0..5u64 {
        let mut spec = FlowSpec::new(2, 2, 8);
        spec.velocity.zero_init_output = true;
        let ddnf = train_one(FlowArch::Ddnf(spec), seed);
        let planar = train_one(FlowArch::Planar { dim: 2, layers: 2 }, seed);
        if ddnf <= planar {
            wins += 1;
        }
        println!("seed {seed}: ddnf {ddnf:.3} vs planar {planar:.3}");
    }
    assert!(wins >= 4, "ddnf won only {wins}/5 matched seeds");
}

// ---- binary-level checks ---------------------------------------------------

fn velflow_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_velflow"))
}

#[test]
fn binary_reports_config_errors_with_exit_code_2() {
    let out = velflow_bin().args(["fit", "--kind", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown fit kind"), "{stderr}");

    // posterior without a data file is also a config error
    let out = velflow_bin().args(["fit", "--kind", "posterior"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_reports_missing_files_with_exit_code_4() {
    let dir = out_dir("bin-io");
    let out = velflow_bin()
        .args([
            "export-grid",
            "--model",
            "/nonexistent/model.toml",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn binary_rejects_truncated_model_files() {
    let dir = out_dir("bin-truncated");
    let mut spec = FlowSpec::new(2, 1, 2);
    spec.velocity.zero_init_output = true;
    let model = FlowModel::init(spec, 0).unwrap();
    let path = dir.join("model.toml");
    save_model(&SavedModel::from_ddnf(&model, &BaseDistribution::standard(2)), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 3]).unwrap();

    let out = velflow_bin()
        .args(["export-grid", "--model", path.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "parse errors are config errors");
}

#[test]
fn binary_runs_from_config_file_with_flag_overrides() {
    let dir = out_dir("bin-config");
    let config_path = dir.join("ode.toml");
    std::fs::write(
        &config_path,
        format!("t_list = [1, 2]\ntrials = 2\nout = '{}'\n", dir.join("ignored").display()),
    )
    .unwrap();
    // the --out flag overrides the config file's out field
    let real_out = dir.join("real");
    let out = velflow_bin()
        .args([
            "ode-accuracy",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            real_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(real_out.join("ode_accuracy.csv").exists());
    assert!(!dir.join("ignored").exists());
    let csv = std::fs::read_to_string(real_out.join("ode_accuracy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
