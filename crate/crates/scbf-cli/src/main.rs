//! Command-line pipeline: sample transition datasets, train the diffusion
//! correction, evaluate filter variants, reproduce the benchmark tables, and
//! run estimator diagnostics.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scbf_core::error::Error as CoreError;
use scbf_core::estimator::{dataset_to_string, load_dataset};
use scbf_core::experiments::{
    build_example, build_experiment_dataset, emit_fit_figure_data, reproduce_table,
    run_variant_with, ExperimentConfig, ExperimentTable, Variant,
};
use scbf_core::learner::{load_params, loss_and_grad, params_to_string, train, TrainConfig};
use scbf_core::{estimator, format, lln_l1_curve, RngStream};

use config::ConfigFileError;
use manifest::{resolve_out_path, RunManifest};

#[derive(Parser)]
#[command(
    name = "scbf",
    version,
    about = "Safety filtering for stochastic systems with learned diffusion corrections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configuration's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, ConfigFileError> {
        let mut cfg = config::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one-step transitions and write the training dataset.
    Sample {
        #[command(flatten)]
        config: ConfigArg,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diffusion-correction network on a dataset.
    Train {
        /// Input dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Output weight file (loss history goes to <out>.loss.csv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 5e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo safety evaluation of the filter variants.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        /// Which variant to run: all, scbf, ddscbf or cbf.
        #[arg(long, default_value = "all")]
        variant: String,
        /// Trained weights (required for ddscbf and all).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Output CSV.
        #[arg(long, default_value = "evaluation.csv")]
        out: PathBuf,
    },
    /// Estimator diagnostics: sample-count convergence and step-size bias.
    Diagnose {
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV.
        #[arg(long, default_value = "diagnostics.csv")]
        out: PathBuf,
    },
    /// Full study: dataset, training, all variants, tables and figure data.
    Reproduce {
        #[command(flatten)]
        config: ConfigArg,
        /// Prefix for output files.
        #[arg(long, default_value = "scbf-results")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sample { config, out } => cmd_sample(&config, &out),
        Command::Train {
            dataset,
            out,
            epochs,
            learning_rate,
            seed,
        } => cmd_train(&dataset, &out, epochs, learning_rate, seed),
        Command::Evaluate {
            config,
            variant,
            weights,
            out,
        } => cmd_evaluate(&config, &variant, weights.as_deref(), &out),
        Command::Diagnose { config, out } => cmd_diagnose(&config, &out),
        Command::Reproduce { config, out } => cmd_reproduce(&config, &out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Command-level error with its process exit code: 2 for configuration and
/// usage problems, 1 for runtime failures.
#[derive(Debug)]
enum CmdError {
    Config(String),
    Runtime(String),
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) | CmdError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigFileError> for CmdError {
    fn from(e: ConfigFileError) -> Self {
        CmdError::Config(e.0)
    }
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::ConfigError { .. } => CmdError::Config(e.to_string()),
            other => CmdError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

fn cmd_sample(config: &ConfigArg, out: &Path) -> Result<(), CmdError> {
    let cfg = config.load()?;
    let out = resolve_out_path(out);
    let manifest_path = RunManifest::path_for(&out);
    let mut manifest = RunManifest::new("sample", config::describe(&cfg), cfg.seed);
    manifest.input(&config.config);

    let dataset = build_experiment_dataset(&cfg)?;
    let mut text = dataset_to_string(&dataset);
    // Reference the manifest from the header line.
    if let Some(eol) = text.find('\n') {
        text.insert_str(eol, &format!(" manifest={}", manifest_path.display()));
    }
    std::fs::write(&out, &text)?;
    manifest.output(&out);
    manifest.write(&manifest_path)?;
    println!(
        "dataset: {} points, {} transitions each, {} excluded; wrote {}",
        dataset.len(),
        dataset.meta.transitions_per_point,
        dataset.meta.excluded_transitions,
        out.display()
    );
    Ok(())
}

fn cmd_train(
    dataset_path: &Path,
    out: &Path,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(), CmdError> {
    let out = resolve_out_path(out);
    let manifest_path = RunManifest::path_for(&out);
    let mut manifest = RunManifest::new("train", format!("epochs={epochs} lr={learning_rate}"), seed);
    manifest.input(dataset_path);

    let dataset = load_dataset(dataset_path)?;
    let train_cfg = TrainConfig {
        epochs,
        learning_rate,
        seed,
        ..TrainConfig::default()
    };
    let (params, history) = train(&dataset, &train_cfg)?;

    let mut text = params_to_string(&params);
    if let Some(eol) = text.find('\n') {
        text.insert_str(eol + 1, &format!("manifest {}\n", manifest_path.display()));
    }
    std::fs::write(&out, &text)?;
    manifest.output(&out);

    let loss_path = out.with_extension("loss.csv");
    let mut loss_csv = format!("# manifest={}\nepoch,mse\n", manifest_path.display());
    for (epoch, mse) in history.iter().enumerate() {
        loss_csv.push_str(&format!("{},{}\n", epoch, format::float(*mse)));
    }
    std::fs::write(&loss_path, &loss_csv)?;
    manifest.output(&loss_path);
    manifest.write(&manifest_path)?;

    let (final_mse, _) = loss_and_grad(&params, &dataset.samples);
    println!(
        "trained {} epochs; final mse {:.6e}; wrote {}",
        history.len(),
        final_mse,
        out.display()
    );
    Ok(())
}

fn parse_variants(s: &str) -> Result<Vec<Variant>, CmdError> {
    match s {
        "all" => Ok(Variant::ALL.to_vec()),
        other => Variant::parse(other)
            .map(|v| vec![v])
            .map_err(|e| CmdError::Config(e.to_string())),
    }
}

fn cmd_evaluate(
    config: &ConfigArg,
    variant: &str,
    weights: Option<&Path>,
    out: &Path,
) -> Result<(), CmdError> {
    let cfg = config.load()?;
    let variants = parse_variants(variant)?;
    let needs_weights = variants.contains(&Variant::Ddscbf);
    let params = match (needs_weights, weights) {
        (true, None) => {
            return Err(CmdError::Config(
                "weights: the ddscbf variant needs a trained weight file (--weights)".into(),
            ));
        }
        (_, Some(path)) => Some(load_params(path)?),
        (false, None) => None,
    };

    let out = resolve_out_path(out);
    let manifest_path = RunManifest::path_for(&out);
    let mut manifest = RunManifest::new("evaluate", config::describe(&cfg), cfg.seed);
    manifest.input(&config.config);
    if let Some(w) = weights {
        manifest.input(w);
    }

    let mut reports = Vec::new();
    for v in variants {
        reports.push(run_variant_with(&cfg, v, params.as_ref())?);
    }
    let table = ExperimentTable { reports };
    print!("{}", table.render_text());

    let csv = format!("# manifest={}\n{}", manifest_path.display(), table.to_csv());
    std::fs::write(&out, &csv)?;
    manifest.output(&out);
    manifest.write(&manifest_path)?;
    Ok(())
}

fn cmd_diagnose(config: &ConfigArg, out: &Path) -> Result<(), CmdError> {
    let cfg = config.load()?;
    let out = resolve_out_path(out);
    let manifest_path = RunManifest::path_for(&out);
    let mut manifest = RunManifest::new("diagnose", config::describe(&cfg), cfg.seed);
    manifest.input(&config.config);

    let sys = build_example(&cfg);
    let probe = match cfg.example {
        scbf_core::ExampleId::Pendulum => vec![0.1, -1.0],
        scbf_core::ExampleId::Cubic2d => vec![0.0, 0.8],
    };
    let u = vec![0.0; sys.model.control_dim()];

    let mut csv = format!(
        "# manifest={}\nkind,dt,n,value\n",
        manifest_path.display()
    );

    // Convergence in the transition count, in the noise-dominated regime.
    let lln_dt = cfg.dt / 10.0;
    let mut rng = RngStream::new(cfg.seed, scbf_core::rng::streams::DIAGNOSTICS);
    let curve = lln_l1_curve(
        &sys.model,
        &sys.barrier,
        &probe,
        &u,
        lln_dt,
        &[100, 1_000, 10_000],
        100,
        &mut rng,
    )?;
    for (n, err) in &curve {
        csv.push_str(&format!(
            "lln_l1,{},{},{}\n",
            format::float(lln_dt),
            n,
            format::float(*err)
        ));
    }

    // Step-size bias of the raw difference quotient at a large sample count.
    let exact = scbf_core::generator_true(&sys.model, &sys.barrier, &probe, &u)?;
    for (i, dt) in [cfg.dt, cfg.dt / 2.0, cfg.dt / 10.0].into_iter().enumerate() {
        let mut rng = RngStream::new(
            cfg.seed,
            scbf_core::rng::streams::DIAGNOSTICS + 1 + i as u64,
        );
        let est = estimator::estimate_generator_at(
            &sys.model,
            &sys.barrier,
            &probe,
            &u,
            100_000,
            dt,
            &mut rng,
        )?;
        csv.push_str(&format!(
            "dt_bias,{},{},{}\n",
            format::float(dt),
            100_000,
            format::float((est.value - exact).abs())
        ));
    }

    std::fs::write(&out, &csv)?;
    manifest.output(&out);
    manifest.write(&manifest_path)?;
    println!("diagnostics written to {}", out.display());
    Ok(())
}

fn cmd_reproduce(config: &ConfigArg, out_prefix: &Path) -> Result<(), CmdError> {
    let cfg = config.load()?;
    let prefix = resolve_out_path(out_prefix);
    let table_path = prefix.with_file_name(format!(
        "{}-table.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    let manifest_path = RunManifest::path_for(&table_path);
    let mut manifest = RunManifest::new("reproduce", config::describe(&cfg), cfg.seed);
    manifest.input(&config.config);

    let table = reproduce_table(&cfg)?;
    print!("{}", table.render_text());
    let csv = format!("# manifest={}\n{}", manifest_path.display(), table.to_csv());
    std::fs::write(&table_path, &csv)?;
    manifest.output(&table_path);

    // Correction-fit figure data per noise setting.
    let noise_settings: Vec<f64> = match cfg.example {
        scbf_core::ExampleId::Pendulum => vec![cfg.cubic_noise],
        scbf_core::ExampleId::Cubic2d => vec![0.1, 0.15],
    };
    for noise in noise_settings {
        let mut cell = cfg.clone();
        cell.cubic_noise = noise;
        let dataset = build_experiment_dataset(&cell)?;
        let train_cfg = TrainConfig {
            epochs: cell.epochs,
            seed: cell.seed,
            ..TrainConfig::default()
        };
        let (params, _) = train(&dataset, &train_cfg)?;
        let sys = build_example(&cell);
        let fig = emit_fit_figure_data(cell.example, &sys, &params, &dataset)?;
        let label = match cfg.example {
            scbf_core::ExampleId::Pendulum => "fit".to_string(),
            scbf_core::ExampleId::Cubic2d => format!("fit-b{noise}"),
        };
        let fig_path = prefix.with_file_name(format!(
            "{}-{label}.csv",
            prefix.file_name().unwrap_or_default().to_string_lossy()
        ));
        let csv = format!("# manifest={}\n{}", manifest_path.display(), fig.to_csv());
        std::fs::write(&fig_path, &csv)?;
        manifest.output(&fig_path);
    }

    manifest.write(&manifest_path)?;
    println!("table written to {}", table_path.display());
    Ok(())
}
