use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dfolio::commands::{cmd_backtest, cmd_compare, cmd_ingest, cmd_synth};
use dfolio::config::RunConfig;
use dfolio::features::IndicatorConfig;
use dfolio::market_data::SyntheticSpec;
use dfolio::{Error, Result};

/// Decision-focused portfolio optimization backtester.
#[derive(Debug, Parser)]
#[command(name = "dfolio", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align per-ticker CSVs and write panel.csv and features.csv.
    Ingest {
        /// Directory of <TICKER>.csv files.
        data_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run configuration whose `indicators` section sets the feature windows.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the configured rolling-window backtest and write reports.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configuration's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated strategy ids to keep.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Per-strategy, per-metric deltas between two metrics.json files.
    Compare { left: PathBuf, right: PathBuf },
    /// Write a planted-signal synthetic market as ticker CSVs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON synthetic spec; overrides the size flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        assets: usize,
        #[arg(long, default_value_t = 756)]
        days: usize,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DFOLIO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(vec![format!("DFOLIO_THREADS must be a positive integer, got '{raw}'")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{} does not parse: {e}", path.display())]))
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Ingest { data_dir, out, config } => {
            let indicators = match config {
                Some(p) => RunConfig::load(&p)?.indicators,
                None => IndicatorConfig::default(),
            };
            println!("{}", cmd_ingest(&data_dir, &out, &indicators)?);
            Ok(true)
        }
        Command::Backtest {
            config,
            seed,
            out,
            strategies,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(ids) = strategies {
                cfg.restrict_strategies(&ids)?;
            }
            let summary = cmd_backtest(&cfg)?;
            print!("{summary}");
            Ok(summary.all_ok())
        }
        Command::Compare { left, right } => {
            print!("{}", cmd_compare(&left, &right)?);
            Ok(true)
        }
        Command::Synth {
            out,
            config,
            seed,
            assets,
            days,
        } => {
            let mut spec = match config {
                Some(p) => read_json::<SyntheticSpec>(&p)?,
                None => SyntheticSpec::new(assets, days, 0, vec![0.002, -0.001, 0.0005], 0.01),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            for (kind, path) in cmd_synth(&spec, &out)? {
                println!("{kind}: {}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
