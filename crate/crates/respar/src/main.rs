use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use respar::config::{InitName, Mode, PenaltyName, TrainConfig};
use respar::dataset_io::save_points;
use respar::metrics::{load_metrics, Summary};
use respar::params_io::save_params;
use respar::run_experiment;
use respar_core::dataset::gen_circles;
use respar_core::gradcheck::fd_gradcheck;
use respar_core::Activation;

const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "respar",
    version,
    about = "Layer-parallel training of deep residual networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a three-ring point set as CSV.
    Dataset {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network and write per-epoch metrics.
    Train(TrainArgs),
    /// Summarise a metrics file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        serial_ref: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// TOML config; flags given on the command line override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long)]
    init_epochs: Option<usize>,
    #[arg(long, value_enum)]
    penalty: Option<PenaltyArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Worker threads; overrides RESPAR_WORKERS and the config file.
    #[arg(long)]
    workers: Option<usize>,
    /// Write 0 instead of the measured epoch time.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final parameters as CSV.
    #[arg(long)]
    params_out: Option<PathBuf>,
    /// Metrics of a serial run with the same epoch count, for the speedup column.
    #[arg(long)]
    serial_ref: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Serial,
    Penalty,
    Alm,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InitArg {
    Multilevel,
    Warmstart,
    Random,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PenaltyArg {
    SquaredL2,
    L1,
    Linf,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Serial => Mode::Serial,
                ModeArg::Penalty => Mode::Penalty,
                ModeArg::Alm => Mode::Alm,
            };
        }
        if let Some(i) = self.init {
            cfg.init = Some(match i {
                InitArg::Multilevel => InitName::Multilevel,
                InitArg::Warmstart => InitName::Warmstart,
                InitArg::Random => InitName::Random,
            });
        }
        if let Some(p) = self.penalty {
            cfg.penalty = match p {
                PenaltyArg::SquaredL2 => PenaltyName::SquaredL2,
                PenaltyArg::L1 => PenaltyName::L1,
                PenaltyArg::Linf => PenaltyName::Linf,
            };
        }
        cfg.stages = self.stages.unwrap_or(cfg.stages);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.init_epochs = self.init_epochs.unwrap_or(cfg.init_epochs);
        cfg.batch_size = self.batch_size.or(cfg.batch_size);
        cfg.out = self.out.clone().or(cfg.out);
        if self.no_timing {
            cfg.timing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dispatches a command; the training summary goes to `log`.
fn run(cli: Cli, log: impl std::io::Write) -> Result<ExitCode> {
    match cli.command {
        Command::Dataset { n, seed, out } => {
            anyhow::ensure!(n >= 1, "--n must be at least 1");
            let data = gen_circles(n, seed);
            save_points(&out, &data)?;
            let [a, b, c] = data.class_counts();
            println!(
                "wrote {n} points to {} (class counts {a}/{b}/{c})",
                out.display()
            );
        }
        Command::Gradcheck { eps, seed } => {
            let report = fd_gradcheck(seed, eps, Activation::Tanh)?;
            for e in &report.entries {
                println!(
                    "{:<42} tensors={:<3} max rel err {:.3e}",
                    e.name, e.tensors, e.max_rel_err
                );
            }
            let worst = report.max_rel_err();
            if !report.passes(GRADCHECK_TOL) {
                println!("FAIL: max rel err {worst:.3e} > {GRADCHECK_TOL:e}");
                return Ok(ExitCode::FAILURE);
            }
            println!("ok: max rel err {worst:.3e} <= {GRADCHECK_TOL:e}");
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let (out, _) = run_experiment(&cfg, args.serial_ref.as_deref(), args.workers, log)
                .context("training failed")?;
            if let Some(path) = &args.params_out {
                save_params(path, &out.net)?;
            }
        }
        Command::Report { input, serial_ref } => {
            let mut summary = Summary::from_rows(&load_metrics(&input)?)?;
            if let Some(path) = serial_ref {
                summary = summary.with_reference(&Summary::from_rows(&load_metrics(&path)?)?)?;
            }
            println!("{}", Summary::table_header());
            println!("{summary}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse(), std::io::stdout()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
