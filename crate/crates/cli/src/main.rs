use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use metabound::baselines::InitOrigin;
use metabound::diagnostics::diagnose_history;
use metabound::harness::{
    self, cell_at, comparison_rows, fit_gap_rows, fits_json, parse_config, read_csv, run_cell, run_comparisons,
    run_sweep, write_csv, write_sweep, ConfigError, ExperimentConfig, FitRow, GapRow, HarnessError, RunLogRow,
    PARALLEL_ENV,
};
use metabound::tasks::sample_task;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "metabound",
    version,
    about = "Meta-RL generalization experiments on tabular MDPs"
)]
struct Cli {
    /// Directory for written artifacts; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a config file.
    Validate { config: PathBuf },

    /// Run a single sweep cell and print its record as JSON.
    Run {
        config: PathBuf,
        /// Cell coordinates as `sigma,n_train,seed_index`.
        #[arg(long)]
        cell: String,
    },

    /// Run the full sweep and write gaps, comparison and fit artifacts.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
    },

    /// Re-fit the bound scaling from an existing gap CSV.
    FitBound {
        gaps: PathBuf,
        /// Complexity for every sigma; read from the sibling fits.csv when absent.
        #[arg(long)]
        complexity: Option<f64>,
    },

    /// Run only the meta-vs-scratch comparison for every cell.
    Compare {
        config: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
    },

    /// Classify convergence of a run-log CSV.
    Diagnose {
        runlog: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        grad_tol: f64,
        #[arg(long, default_value_t = 10)]
        window: usize,
    },

    /// Print sampled tasks of the config's family, one JSON object per line.
    DumpTasks {
        config: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        first: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<metabound::Error> for Failure {
    fn from(e: metabound::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    Ok(cfg)
}

fn output_dir(cli_dir: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    cli_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

fn parallelism(flag: Option<usize>) -> Result<usize, Failure> {
    if let Ok(raw) = std::env::var(PARALLEL_ENV) {
        return match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::Usage(format!(
                "{PARALLEL_ENV} must be a positive integer, got {raw:?}"
            ))),
        };
    }
    match flag {
        Some(0) => Err(Failure::Usage("--parallel must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn parse_cell(spec: &str) -> Result<(f64, usize, usize), Failure> {
    let bad = || Failure::Usage(format!("--cell expects sigma,n_train,seed_index, got {spec:?}"));
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [s, n, k] = parts[..] else {
        return Err(bad());
    };
    Ok((
        s.parse().map_err(|_| bad())?,
        n.parse().map_err(|_| bad())?,
        k.parse().map_err(|_| bad())?,
    ))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn progress(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Validate { config } => {
            load_config(&config)?;
            println!("ok");
        }
        Command::Run { config, cell } => {
            let cfg = load_config(&config)?;
            let (sigma, n_train, seed_index) = parse_cell(&cell)?;
            let cell = cell_at(&cfg, sigma, n_train, seed_index)?;
            let outcome = run_cell(&cell, &cfg)?;
            let dir = output_dir(&cli.output_dir, &cfg);
            fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
            let log = dir.join(format!("runlog_sigma{sigma}_n{n_train}_seed{seed_index}.csv"));
            write_csv(&log, &outcome.run_log())?;
            progress(quiet, format!("wrote {}", log.display()));
            println!("{}", to_json(&outcome.record));
        }
        Command::Sweep { config, parallel } => {
            let cfg = load_config(&config)?;
            let threads = parallelism(parallel)?;
            progress(
                quiet,
                format!(
                    "running {} cells on {threads} threads",
                    harness::sweep_cells(&cfg)?.len()
                ),
            );
            let out = run_sweep(&cfg, threads)?;
            for path in write_sweep(&out, &output_dir(&cli.output_dir, &cfg))? {
                progress(quiet, format!("wrote {}", path.display()));
            }
        }
        Command::FitBound { gaps, complexity } => {
            let rows: Vec<GapRow> = read_csv(&gaps)?;
            let fits = match complexity {
                Some(c) => fit_gap_rows(&rows, |_| Some(c)),
                None => {
                    let sibling = gaps.with_file_name("fits.csv");
                    let known: BTreeMap<u64, f64> = read_csv::<FitRow>(&sibling)?
                        .into_iter()
                        .map(|r| (r.sigma.to_bits(), r.complexity))
                        .collect();
                    fit_gap_rows(&rows, |s| known.get(&s.to_bits()).copied().filter(|c| c.is_finite()))
                }
            };
            print!("{}", fits_json(&fits));
        }
        Command::Compare { config, parallel } => {
            let cfg = load_config(&config)?;
            let threads = parallelism(parallel)?;
            let results = run_comparisons(&cfg, threads)?;
            let rows: Vec<_> = results
                .iter()
                .flat_map(|(c, r)| comparison_rows(c.sigma, c.n_train, c.seed_index, r))
                .collect();
            let dir = output_dir(&cli.output_dir, &cfg);
            fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
            let path = dir.join("comparison.csv");
            write_csv(&path, &rows)?;
            progress(quiet, format!("wrote {}", path.display()));
            let summary: Vec<_> = results
                .iter()
                .map(|(c, r)| {
                    json!({
                        "sigma": c.sigma,
                        "n_train": c.n_train,
                        "seed_index": c.seed_index,
                        "meta_win_fraction": r.meta_win_fraction,
                        "median_steps_meta": r.median_steps(InitOrigin::MetaInit),
                        "median_steps_scratch": r.median_steps(InitOrigin::ScratchInit),
                    })
                })
                .collect();
            println!("{}", to_json(&summary));
        }
        Command::Diagnose {
            runlog,
            grad_tol,
            window,
        } => {
            let rows: Vec<RunLogRow> = read_csv(&runlog)?;
            let losses: Vec<f64> = rows.iter().map(|r| r.meta_loss).collect();
            let grads: Vec<f64> = rows.iter().map(|r| r.grad_norm).collect();
            let report = diagnose_history(&losses, &grads, grad_tol, window)?;
            println!("{}", to_json(&report));
        }
        Command::DumpTasks {
            config,
            sigma,
            first,
            count,
        } => {
            let cfg = load_config(&config)?;
            let spec = cfg.family.with_sigma(sigma.unwrap_or(cfg.family.complexity_sigma));
            spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            for index in first..first + count {
                let mdp = sample_task(&spec, index);
                println!("{}", serde_json::to_string(&mdp).expect("serializable"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
