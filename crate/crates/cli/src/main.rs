use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mppn_core::checkpoint::Checkpoint;
use mppn_core::data::{load_csv, write_csv, LoadOptions, Split, SplitScheme};
use mppn_core::harness::{self, AnalyzeOptions};
use mppn_core::predictability::Binning;
use mppn_core::synth::{generate, SynthSpec};
use mppn_core::{Error, ModelKind, RunConfig, SeriesDataset};

#[derive(Parser, Debug)]
#[command(name = "mppn", version, about = "Periodic-pattern forecasting toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Input CSV with a date column followed by numeric channels.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Run configuration, `key=value` text or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file (checkpoint, CSV) for commands that write one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// The CSV has no header row and no date column.
    #[arg(long, global = true)]
    no_date_column: bool,

    /// Forward-fill missing cells instead of rejecting them.
    #[arg(long, global = true)]
    lenient: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Predictability and period report for a dataset.
    Analyze {
        /// Alphabet sizes, comma separated; `sweep` means 5,10,20,50.
        #[arg(long, default_value = "10")]
        q: String,
        #[arg(long, default_value = "equal-frequency")]
        binning: Binning,
        /// Number of periods to report.
        #[arg(long, default_value_t = 2)]
        top_k: usize,
        /// Explicit periods, bypassing spectrum selection.
        #[arg(long, value_delimiter = ',')]
        periods: Vec<usize>,
        #[arg(long, default_value = "standard")]
        split: SplitScheme,
    },
    /// Train a model and write its best-validation checkpoint to `--out`.
    Train {
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        lookback: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        split: Option<SplitScheme>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Explicit periods, bypassing spectrum selection.
        #[arg(long, value_delimiter = ',')]
        periods: Option<Vec<usize>>,
        /// Extra `key=value` config overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Metrics of a checkpoint on one or all splits, one JSON line each.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Forecast CSV for one origin (default: end of the data).
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of the first forecast row; needs `lookback` rows before it.
        #[arg(long)]
        origin: Option<usize>,
    },
    /// Generate a synthetic dataset CSV.
    Synth {
        /// JSON spec with `length`, `trend_slope`, `noise_sd` and `channels`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 24.0)]
        period: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        trend: f64,
    },
    /// Channel gate matrix of an MPPN checkpoint as CSV.
    Gates {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return err.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return 3;
        }
    }
    4
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Analyze {
            q,
            binning,
            top_k,
            periods,
            split,
        } => {
            let dataset = load(g, None)?;
            let q = parse_q(&q)?;
            let opts = AnalyzeOptions {
                q,
                binning,
                k: top_k,
                period_override: periods,
                split,
            };
            let report = harness::analyze(&dataset, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Train {
            model,
            lookback,
            horizon,
            split,
            max_epochs,
            periods,
            set,
        } => {
            let mut cfg = base_config(g)?;
            if let Some(v) = model {
                cfg.model = v;
            }
            if let Some(v) = lookback {
                cfg.lookback = v;
            }
            if let Some(v) = horizon {
                cfg.horizon = v;
            }
            if let Some(v) = split {
                cfg.split = v;
            }
            if let Some(v) = max_epochs {
                cfg.max_epochs = v;
            }
            if let Some(v) = periods {
                cfg.periods = v;
            }
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            let dataset = load(g, Some(&cfg))?;
            let outcome = harness::train(&cfg, &dataset)?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
            outcome
                .checkpoint()
                .save(&out)
                .with_context(|| format!("writing checkpoint {}", out.display()))?;
            let report = json!({
                "checkpoint": out,
                "model": outcome.config.model,
                "periods": outcome.config.periods,
                "best_epoch": outcome.best_epoch,
                "best_val_mse": outcome.best_val_mse,
                "log": outcome.log,
            });
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Eval {
            checkpoint,
            split,
            batch_size,
        } => {
            if batch_size == 0 {
                return Err(Error::Argument("batch_size must be positive".into()).into());
            }
            let restored = harness::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let dataset = load(g, Some(&restored.config))?;
            let splits = match split.as_str() {
                "all" => vec![Split::Train, Split::Val, Split::Test],
                s => vec![s.parse::<Split>()?],
            };
            for s in splits {
                let m = harness::evaluate(&restored, &dataset, s, batch_size)?;
                let line = json!({"split": s, "mse": m.mse, "mae": m.mae, "windows": m.windows});
                println!("{}", serde_json::to_string(&line)?);
            }
        }
        Command::Forecast { checkpoint, origin } => {
            let restored = harness::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let dataset = load(g, Some(&restored.config))?;
            let y = harness::forecast(&restored, &dataset, origin)?;
            let names = dataset.names().to_vec();
            let mut text = format!("step,{}\n", names.join(","));
            for (h, row) in y.data().chunks(names.len()).enumerate() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                text.push_str(&format!("{},{}\n", h + 1, cells.join(",")));
            }
            emit(g.out.as_deref(), text.as_bytes())?;
        }
        Command::Synth {
            spec,
            length,
            channels,
            period,
            amplitude,
            noise,
            trend,
        } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        Error::Argument(format!("cannot read spec {}: {e}", path.display()))
                    })?;
                    serde_json::from_str::<SynthSpec>(&text)
                        .map_err(|e| Error::Argument(format!("invalid synth spec: {e}")))?
                }
                None => SynthSpec {
                    trend_slope: trend,
                    ..SynthSpec::single_tone(length, channels, amplitude, period, noise)
                },
            };
            let dataset = generate(&spec, g.seed.unwrap_or(0))?;
            let mut buf = Vec::new();
            write_csv(&dataset, &mut buf)?;
            emit(g.out.as_deref(), &buf)?;
        }
        Command::Gates { checkpoint } => {
            let restored = harness::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let names = match &g.data {
                Some(_) => Some(load(g, Some(&restored.config))?.names().to_vec()),
                None => None,
            };
            let gates = harness::gates(&restored, names.as_deref())?;
            emit(g.out.as_deref(), gates.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

/// Writes to `--out` when given, otherwise to standard output.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn parse_q(s: &str) -> Result<Vec<usize>> {
    if s == "sweep" {
        return Ok(vec![5, 10, 20, 50]);
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::Argument(format!("bad Q `{p}`: {e}")).into())
        })
        .collect()
}

fn base_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &g.data {
        cfg.data = Some(data.display().to_string());
    }
    if g.no_date_column {
        cfg.date_column = false;
    }
    if g.lenient {
        cfg.strict = false;
    }
    Ok(cfg)
}

/// Loads `--data`, falling back to the data path of `cfg`.
fn load(g: &Global, cfg: Option<&RunConfig>) -> Result<SeriesDataset> {
    let path = g
        .data
        .clone()
        .or_else(|| cfg.and_then(|c| c.data.as_ref().map(PathBuf::from)))
        .ok_or_else(|| Error::Config("no dataset given; pass --data".into()))?;
    let opts = LoadOptions {
        strict: !g.lenient && cfg.is_none_or(|c| c.strict),
        date_column: !g.no_date_column && cfg.is_none_or(|c| c.date_column),
    };
    let loaded = load_csv(&path, opts)?;
    if loaded.filled > 0 {
        log::warn!(
            "filled {} missing cells in {}",
            loaded.filled,
            path.display()
        );
    }
    Ok(loaded.dataset)
}
