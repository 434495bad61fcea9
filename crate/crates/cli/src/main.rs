//! Command-line front end for the seed-bank simulation and inference library.
//!
//! Subcommands mirror the pipeline: `simulate` writes a complete dataset CSV,
//! `observe` projects it to the observable stages, `estimate-complete` and
//! `estimate-incomplete` produce estimate reports, `identifiability` prints
//! the estimable functionals for a horizon, and `experiment` runs the
//! overdispersion robustness study from a config file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use seedbank::{
    estimate_complete, fit_phi_full, fit_phi_reduced, identifiable_set, io as sbio, observe,
    run_table_experiment, simulate, write_experiment_csv, DeviationTarget, ExperimentConfig,
    FitOptions, FullFitResult, InitStrategy,
};

#[derive(Parser)]
#[command(
    name = "seedbank",
    about = "Simulation and inference for annual-plant dynamics with a hidden seed bank",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Reduced,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate complete trajectories and write them as CSV.
    Simulate {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// TOML config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's population count K.
        #[arg(long)]
        populations: Option<usize>,
        /// Override the config's last cycle index n.
        #[arg(long)]
        cycles: Option<usize>,
        /// Variance/mean ratio for the config's deviation target.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Project a complete dataset CSV onto the observable stages.
    Observe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate all parameters from a complete dataset CSV.
    EstimateComplete {
        #[arg(long)]
        input: PathBuf,
        /// Report CSV (parameter,estimate,std_error).
        #[arg(long)]
        out: PathBuf,
        /// Optional key-value diagnostics file.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Estimate the identifiable transform from an observed dataset CSV.
    EstimateIncomplete {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Config supplying the known (a, g) for the reduced fit.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "reduced")]
        mode: Mode,
    },
    /// Print the identifiable functionals for a horizon.
    Identifiability {
        /// Last observed cycle index.
        #[arg(long)]
        n: usize,
    },
    /// Run the robustness experiment described by a config file.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(path) => {
            let mut text = String::new();
            File::open(path)
                .with_context(|| format!("cannot open config {}", path.display()))?
                .read_to_string(&mut text)?;
            ExperimentConfig::from_toml_str(&text)
                .with_context(|| format!("cannot parse config {}", path.display()))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            out,
            config,
            seed,
            populations,
            cycles,
            ratio,
        } => {
            let cfg = load_config(&config)?;
            if ratio.is_some() && cfg.deviation == DeviationTarget::None {
                bail!("--ratio needs a config with deviation = \"offspring\" or \"immigration\"");
            }
            let params = cfg.demographic_params(ratio)?;
            let data = simulate(
                &params,
                cycles.unwrap_or(cfg.cycles),
                populations.unwrap_or(cfg.populations),
                seed.unwrap_or(cfg.master_seed),
            )?;
            sbio::write_complete_csv(&data, create(&out)?)?;
        }
        Command::Observe { input, out } => {
            let data = sbio::read_complete_csv(open(&input)?)?;
            sbio::write_observed_csv(&observe(&data), create(&out)?)?;
        }
        Command::EstimateComplete {
            input,
            out,
            diagnostics,
        } => {
            let data = sbio::read_complete_csv(open(&input)?)?;
            let estimates = estimate_complete(&data)?;
            sbio::write_report_csv(&estimates.report_rows(), create(&out)?)?;
            if let Some(path) = diagnostics {
                let mut pairs = vec![
                    ("populations".to_string(), estimates.populations.to_string()),
                    ("cycles".to_string(), (data.last_cycle() + 1).to_string()),
                    (
                        "offspring_variance".to_string(),
                        format!("{:.6}", estimates.reproduction.offspring_variance),
                    ),
                    (
                        "immigration_variance".to_string(),
                        format!("{:.6}", estimates.reproduction.immigration_variance),
                    ),
                ];
                for warning in &estimates.warnings {
                    pairs.push(("warning".to_string(), warning.clone()));
                }
                sbio::write_key_values(&pairs, create(&path)?)?;
            }
        }
        Command::EstimateIncomplete {
            input,
            out,
            diagnostics,
            config,
            mode,
        } => {
            let data = sbio::read_observed_csv(open(&input)?)?;
            let cfg = load_config(&config)?;
            let options = FitOptions::default();
            let identifiability = identifiable_set(data.last_cycle());
            let (rows, mut pairs) = match mode {
                Mode::Reduced => {
                    let truth = cfg.phi();
                    let report = fit_phi_reduced(&data, truth.a, truth.g, None, &options)?;
                    (report.report_rows(), report.diagnostics())
                }
                Mode::Full => match fit_phi_full(&data, InitStrategy::GridProfile, &options)? {
                    FullFitResult::Full(report) => (report.report_rows(), report.diagnostics()),
                    FullFitResult::Partial(partial) => {
                        let mut pairs = vec![
                            ("loglik".to_string(), format!("{:.6}", partial.loglik)),
                            ("converged".to_string(), partial.converged.to_string()),
                        ];
                        for warning in &partial.warnings {
                            pairs.push(("warning".to_string(), warning.clone()));
                        }
                        (partial.report_rows(), pairs)
                    }
                },
            };
            sbio::write_report_csv(&rows, create(&out)?)?;
            if let Some(path) = diagnostics {
                pairs.push((
                    "identifiable_set".to_string(),
                    identifiability
                        .functionals
                        .iter()
                        .map(|f| f.symbol.clone())
                        .collect::<Vec<_>>()
                        .join(","),
                ));
                pairs.push((
                    "fully_identifiable".to_string(),
                    identifiability.fully_identifiable.to_string(),
                ));
                sbio::write_key_values(&pairs, create(&path)?)?;
            }
        }
        Command::Identifiability { n } => {
            print!("{}", identifiable_set(n).render());
        }
        Command::Experiment { out, config } => {
            let cfg = load_config(&config)?;
            let rows = run_table_experiment(&cfg)?;
            write_experiment_csv(&rows, create(&out)?)?;
            for row in &rows {
                if row.flagged {
                    eprintln!(
                        "warning: ratio {} had {} failed replicates (more than 10%)",
                        row.ratio, row.failures
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
