use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hapsim::harness::experiments::{
    dbm_to_watts, heatmap, run, sweep_power, sweep_rb, write_heatmap, write_meta,
    write_power_sweep, write_rb_sweep, write_run,
};
use hapsim::harness::ScenarioConfig;

#[derive(Parser)]
#[command(
    name = "hapsim",
    version,
    about = "Massive-MIMO HAPS downlink simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo trials at the configured operating point.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean sum rate against transmit power for each blocks-per-user setting.
    SweepPower {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated powers in dBm.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "30,32,34,36,38,40,42,44,46,48,50"
        )]
        powers_dbm: Vec<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-user rates for several blocks-per-user settings.
    SweepRb {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated blocks-per-user values; defaults to the config's sweep list.
        #[arg(long, value_parser = parse_blocks)]
        r: Option<BlockList>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise correlation of the largest co-cluster group.
    Heatmap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Debug)]
struct BlockList(Vec<usize>);

fn parse_blocks(text: &str) -> Result<BlockList, String> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()
        .map(BlockList)
}

type BoxError = Box<dyn std::error::Error>;

fn load(path: Option<&Path>) -> Result<ScenarioConfig, BoxError> {
    Ok(match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    })
}

fn prepare(out: &Path) -> Result<(), BoxError> {
    std::fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    Ok(())
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn execute(cli: Cli) -> Result<(), BoxError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            trials,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.validate()?;
            prepare(&out)?;
            let records = run(&cfg, cfg.seed, cfg.trials)?;
            write_run(&out, &records)?;
            write_meta(&out, &cfg, "run", &[])?;
        }
        Command::SweepPower {
            config,
            powers_dbm,
            trials,
            seed,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.validate()?;
            prepare(&out)?;
            let powers: Vec<f64> = powers_dbm.iter().map(|&d| dbm_to_watts(d)).collect();
            let rows = sweep_power(&cfg, &powers, cfg.trials)?;
            write_power_sweep(&out, &rows)?;
            write_meta(
                &out,
                &cfg,
                "sweep-power",
                &[("powers_dbm", list(&powers_dbm))],
            )?;
        }
        Command::SweepRb { config, r, out } => {
            let cfg = load(config.as_deref())?;
            let r_values = r.map_or_else(|| cfg.sweep_r.clone(), |b| b.0);
            for &v in &r_values {
                cfg.subsections(v)
                    .map_err(|e| format!("invalid value in --r: {e}"))?;
            }
            prepare(&out)?;
            let rows = sweep_rb(&cfg, &r_values)?;
            write_rb_sweep(&out, &rows)?;
            write_meta(&out, &cfg, "sweep-rb", &[("r", list(&r_values))])?;
        }
        Command::Heatmap { config, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            prepare(&out)?;
            let map = heatmap(&cfg, cfg.seed)?;
            write_heatmap(&out, map.as_ref())?;
            write_meta(&out, &cfg, "heatmap", &[])?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
