//! `rflab` — drive the experiment runners from the command line.
//!
//! Every subcommand assembles an [`ExperimentConfig`] (from flags or a
//! TOML file), hands it to [`rflab::experiment::run`], and exits with the
//! contract codes: `0` on success, `2` on configuration errors, `3` on
//! numerical failures. `constants` prints its JSON to stdout; all other
//! subcommands write CSV/JSON artifacts plus a manifest into `--out-dir`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rflab::constants::DEFAULT_QUAD_ORDER;
use rflab::error::Result;
use rflab::experiment::{
    run, run_constants, CollapseParams, ConstantsParams, ExperimentConfig, ExperimentKind,
    GenerateParams, PhaseParams, ProviderTag, SchemeTag, SpectrumParams, DDIM_DEFAULT_STEPS,
};

#[derive(Parser)]
#[command(
    name = "rflab",
    version,
    about = "Random-features diffusion experiments: constants, spectra, training, sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the scalar Gaussian-equivalence constants as one JSON object.
    Constants(ConstantsArgs),
    /// Solve the analytic spectral density and summary.
    Spectrum(SpectrumArgs),
    /// Run one training experiment from a config file.
    Train(ConfigArgs),
    /// Sweep sample ratios and fit overfitting onsets against `tau_mem`.
    Collapse(CollapseArgs),
    /// Sample the backward process and report memorization (and KL).
    Generate(GenerateArgs),
    /// Evaluate the generalization gap on a (psi_n, psi_p) grid.
    Phase(PhaseArgs),
    /// Run any experiment from a config file or an emitted manifest.
    Run(ConfigArgs),
}

#[derive(Args)]
struct ConstantsArgs {
    /// Activation name (tanh, erf, ...).
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Per-coordinate data variance.
    #[arg(long = "sigma-x2", default_value_t = 1.0)]
    sigma_x2: f64,
    /// Diffusion time.
    #[arg(long)]
    t: f64,
    /// Gauss-Hermite quadrature order.
    #[arg(long, default_value_t = DEFAULT_QUAD_ORDER)]
    order: usize,
    /// Also persist constants.json and a manifest into this directory.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Root seed recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Feature ratio p/d.
    #[arg(long = "psi-p")]
    psi_p: f64,
    /// Sample ratio n/d.
    #[arg(long = "psi-n")]
    psi_n: f64,
    /// Diffusion time.
    #[arg(long)]
    t: f64,
    /// Data spectrum: inline atom list `l1:w1,l2:w2,...` or `@file`.
    #[arg(long, default_value = "1:1")]
    measure: String,
    /// Activation name.
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Number of lambda grid points.
    #[arg(long, default_value_t = 300)]
    grid: usize,
    /// Final epsilon of the continuation to the real axis.
    #[arg(long = "eps-final", default_value_t = 1e-4)]
    eps_final: f64,
    /// Also diagonalize one finite-size Gram at this dimension.
    #[arg(long = "empirical-d")]
    empirical_d: Option<usize>,
    /// Artifact directory.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Root seed (used by the finite-size comparison).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file, or a manifest.json emitted by a previous run.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `output_dir` from the file.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CollapseArgs {
    /// TOML config file (kind = "collapse"); flags below are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ambient dimension.
    #[arg(long, default_value_t = 100, conflicts_with = "config")]
    d: usize,
    /// Feature ratio, fixed across the sweep.
    #[arg(long = "psi-p", default_value_t = 64.0, conflicts_with = "config")]
    psi_p: f64,
    /// Diffusion time.
    #[arg(long, default_value_t = 0.1, conflicts_with = "config")]
    t: f64,
    /// Swept sample ratios.
    #[arg(
        long = "psi-n",
        value_delimiter = ',',
        default_value = "4,8,16,32",
        conflicts_with = "config"
    )]
    psi_n: Vec<f64>,
    /// Overfitting-onset threshold on the generalization gap.
    #[arg(long, default_value_t = 0.01, conflicts_with = "config")]
    delta: f64,
    /// Artifact directory.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Score provider: gmm, empirical, or rf.
    #[arg(long)]
    provider: String,
    /// Sampling scheme: em or ddim.
    #[arg(long)]
    scheme: String,
    /// Ambient dimension.
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// Training-set size.
    #[arg(long = "n-train", default_value_t = 16)]
    n_train: usize,
    /// Number of generated samples.
    #[arg(long = "n-samples", default_value_t = 500)]
    n_samples: usize,
    /// Memorization distance-ratio threshold.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    k: f64,
    /// Integration steps (EM) or ladder sub-steps (DDIM; default 200).
    #[arg(long)]
    steps: Option<usize>,
    /// Bootstrap resamples of the confidence interval.
    #[arg(long = "n-bootstrap", default_value_t = 1000)]
    n_bootstrap: usize,
    /// Skip the KL estimate even when the provider allows it.
    #[arg(long = "no-kl", default_value_t = false)]
    no_kl: bool,
    /// Feature ratio of the rf provider's model.
    #[arg(long = "psi-p", default_value_t = 16.0)]
    psi_p: f64,
    /// Training horizon of the rf read-out snapshots.
    #[arg(long = "train-tau", default_value_t = 1e4)]
    train_tau: f64,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Artifact directory.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PhaseArgs {
    /// TOML config file (kind = "phase"); flags below are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ambient dimension of every cell.
    #[arg(long, default_value_t = 32, conflicts_with = "config")]
    d: usize,
    /// Diffusion time.
    #[arg(long, default_value_t = 0.1, conflicts_with = "config")]
    t: f64,
    /// Grid values of psi_n.
    #[arg(
        long = "psi-n",
        value_delimiter = ',',
        default_value = "2,4,8,16,32,64",
        conflicts_with = "config"
    )]
    psi_n: Vec<f64>,
    /// Grid values of psi_p.
    #[arg(
        long = "psi-p",
        value_delimiter = ',',
        default_value = "2,4,8,16,32,64",
        conflicts_with = "config"
    )]
    psi_p: Vec<f64>,
    /// Rescaled-time checkpoints.
    #[arg(
        long = "tau",
        value_delimiter = ',',
        default_value = "1e3,1e4",
        conflicts_with = "config"
    )]
    tau: Vec<f64>,
    /// Artifact directory.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Constants(args) => constants_command(args),
        Command::Spectrum(args) => {
            let params = SpectrumParams {
                psi_p: args.psi_p,
                psi_n: args.psi_n,
                t: args.t,
                measure: resolve_measure(&args.measure)?,
                activation: args.activation,
                grid: args.grid,
                eps_final: args.eps_final,
                empirical_d: args.empirical_d,
            };
            run_and_report(ExperimentConfig {
                kind: ExperimentKind::Spectrum(params),
                seed: args.seed,
                output_dir: args.out_dir,
            })
        }
        Command::Train(args) | Command::Run(args) => {
            let config = ExperimentConfig::from_file_with_dir(&args.config, args.out_dir)?;
            run_and_report(config)
        }
        Command::Collapse(args) => {
            let config = match args.config {
                Some(path) => ExperimentConfig::from_file_with_dir(&path, Some(args.out_dir))?,
                None => ExperimentConfig {
                    kind: ExperimentKind::Collapse(CollapseParams {
                        d: args.d,
                        psi_p: args.psi_p,
                        t: args.t,
                        psi_n_values: args.psi_n,
                        delta: args.delta,
                        rel_window: 0.1,
                        n_tau: 400,
                        activation: "tanh".to_owned(),
                        measure: "1:1".to_owned(),
                    }),
                    seed: args.seed,
                    output_dir: args.out_dir,
                },
            };
            run_and_report(config)
        }
        Command::Generate(args) => {
            let scheme: SchemeTag = args.scheme.parse()?;
            let params = GenerateParams {
                provider: args.provider.parse::<ProviderTag>()?,
                scheme,
                d: args.d,
                n_train: args.n_train,
                n_samples: args.n_samples,
                k: args.k,
                steps: args.steps.unwrap_or(match scheme {
                    SchemeTag::Em => 1000,
                    SchemeTag::Ddim => DDIM_DEFAULT_STEPS,
                }),
                n_bootstrap: args.n_bootstrap,
                kl: !args.no_kl,
                psi_p: args.psi_p,
                train_tau: args.train_tau,
                rf_snapshots: 24,
            };
            run_and_report(ExperimentConfig {
                kind: ExperimentKind::Generate(params),
                seed: args.seed,
                output_dir: args.out_dir,
            })
        }
        Command::Phase(args) => {
            let config = match args.config {
                Some(path) => ExperimentConfig::from_file_with_dir(&path, Some(args.out_dir))?,
                None => ExperimentConfig {
                    kind: ExperimentKind::Phase(PhaseParams {
                        d: args.d,
                        t: args.t,
                        psi_n_values: args.psi_n,
                        psi_p_values: args.psi_p,
                        tau_checkpoints: args.tau,
                        activation: "tanh".to_owned(),
                        measure: "1:1".to_owned(),
                    }),
                    seed: args.seed,
                    output_dir: args.out_dir,
                },
            };
            run_and_report(config)
        }
    }
}

fn constants_command(args: ConstantsArgs) -> Result<()> {
    let params = ConstantsParams {
        activation: args.activation,
        sigma_x2: args.sigma_x2,
        t: args.t,
        order: args.order,
    };
    match args.out_dir {
        Some(out_dir) => {
            let outcome = run(&ExperimentConfig {
                kind: ExperimentKind::Constants(params),
                seed: args.seed,
                output_dir: out_dir,
            })?;
            if let Some(payload) = outcome.stdout_payload {
                println!("{payload}");
            }
            report_artifacts(&outcome.output_dir, outcome.artifacts.len());
            Ok(())
        }
        None => {
            let constants = run_constants(&params)?;
            let payload = serde_json::to_string_pretty(&constants)
                .map_err(|err| rflab::error::Error::numerical(format!("json: {err}")))?;
            println!("{payload}");
            Ok(())
        }
    }
}

/// `--measure @file` loads the atom list from a file; anything else is the
/// inline form.
fn resolve_measure(text: &str) -> Result<String> {
    match text.strip_prefix('@') {
        Some(path) => Ok(std::fs::read_to_string(path)?.trim().to_owned()),
        None => Ok(text.to_owned()),
    }
}

fn run_and_report(config: ExperimentConfig) -> Result<()> {
    let outcome = run(&config)?;
    if let Some(payload) = outcome.stdout_payload {
        println!("{payload}");
    }
    report_artifacts(&outcome.output_dir, outcome.artifacts.len());
    Ok(())
}

fn report_artifacts(dir: &std::path::Path, count: usize) {
    eprintln!("wrote {count} artifacts to {}", dir.display());
}
