use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tucreg_cli::config::split_overrides;
use tucreg_cli::experiments::{gen_instance, run_with_jobs, trip_report};
use tucreg_cli::{CliError, ExperimentConfig, ExperimentKind, ModelKind, Report};

/// Low-Tucker-rank regression experiments. Any config key can be set with
/// `--section.key=value`, for example `--grid.n=[500,1000]`.
#[derive(Parser)]
#[command(name = "tucreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV file (a directory for gen-instance); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "TUCREG_JOBS")]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-iteration traces for each (seed, algorithm, n, r).
    Convergence,
    /// Success rates over an (n, r) grid.
    Phase,
    /// Convergence runs over input ranks with minimal-n summaries.
    RankSweep,
    /// RGN, RGD, PGD and factored GD on identical instances.
    Compare,
    /// Low-degree threshold table and Hermite moment checks.
    Ldp,
    /// Writes one generated instance to the --out directory.
    GenInstance,
    /// Sampled restricted isometry bounds.
    TripEstimate {
        /// Directory written by gen-instance; the configured model is used otherwise.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
}

fn write_report(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let io_err = |e: io::Error| {
        CliError::Io(match out {
            Some(p) => format!("{}: {e}", p.display()),
            None => format!("stdout: {e}"),
        })
    };
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_err)?);
            report.write_csv(&mut w).map_err(io_err)?;
            w.flush().map_err(io_err)
        }
        None => report.write_csv(io::stdout().lock()).map_err(io_err),
    }
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), overrides)?;
    if let Some(m) = cli.model {
        cfg.model.kind = m;
    }
    if let Some(s) = cli.seed {
        cfg.seeds.base = s;
    }
    if let Some(o) = cli.out {
        cfg.output.path = Some(o);
    }
    if let Some(j) = cli.jobs {
        cfg.output.jobs = Some(j);
    }
    let kind = match &cli.command {
        Command::Convergence => Some(ExperimentKind::Convergence),
        Command::Phase => Some(ExperimentKind::Phase),
        Command::RankSweep => Some(ExperimentKind::RankSweep),
        Command::Compare => Some(ExperimentKind::Compare),
        Command::Ldp => Some(ExperimentKind::Ldp),
        _ => None,
    };
    let out = cfg.output.path.clone();
    match (kind, cli.command) {
        (Some(k), _) => {
            cfg.experiment.kind = k;
            let report = run_with_jobs(&cfg, cfg.output.jobs)?;
            write_report(&report, out.as_deref())
        }
        (None, Command::GenInstance) => {
            let dir = out.ok_or_else(|| CliError::Config("output.path: gen-instance needs --out DIR".into()))?;
            let seed = gen_instance(&cfg, &dir)?;
            eprintln!("wrote instance with seed {seed} to {}", dir.display());
            Ok(())
        }
        (None, Command::TripEstimate { instance }) => {
            let report = trip_report(&cfg, instance.as_deref())?;
            write_report(&report, out.as_deref())
        }
        (None, _) => unreachable!("every experiment subcommand has a kind"),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
