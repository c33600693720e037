use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nfv_energy::harness::{self, ExperimentConfig, Knob};
use nfv_energy::metrics::write_csv_file;
use nfv_energy::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nfv-energy", version, about = "Energy-aware NF chain scheduling experiments")]
struct Cli {
    /// Experiment config (TOML). Repeat for `compare`.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force single-threaded round-robin execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured scheduler.
    Train,
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Sweep one knob with the others held at their defaults.
    Bench {
        /// cores, frequency, llc, dma or batch.
        #[arg(long)]
        knob: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Train every config and tabulate them against the static baseline.
    Compare,
}

fn load_configs(cli: &Cli) -> Result<Vec<ExperimentConfig>> {
    if cli.config.is_empty() {
        return Err(Error::Config("--config is required".into()));
    }
    cli.config
        .iter()
        .map(|p| {
            let mut cfg = ExperimentConfig::load(p)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if cli.deterministic {
                cfg.training.deterministic = true;
            }
            if let Some(out) = &cli.out {
                cfg.output_dir = Some(out.clone());
            }
            Ok(cfg)
        })
        .collect()
}

fn single(cli: &Cli) -> Result<ExperimentConfig> {
    let mut configs = load_configs(cli)?;
    if configs.len() != 1 {
        return Err(Error::Config("expected exactly one --config".into()));
    }
    Ok(configs.remove(0))
}

fn to_toml<T: serde::Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let cfg = single(cli)?;
            let outcome = harness::train(&cfg)?;
            print!("{}", to_toml(&outcome.metrics.final_eval)?);
            if let Some(path) = outcome.checkpoint {
                eprintln!("checkpoint written to {}", path.display());
            }
        }
        Command::Eval { checkpoint, episodes } => {
            let cfg = single(cli)?;
            let summary = harness::evaluate(checkpoint, &cfg, *episodes)?;
            let text = to_toml(&summary)?;
            print!("{text}");
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("eval.toml"), text)?;
            }
        }
        Command::Bench { knob, values } => {
            let cfg = single(cli)?;
            let knob: Knob = knob.parse()?;
            let rows = harness::bench_sweep(&cfg, knob, values)?;
            println!("value,T_gbps,E_joules,miss_rate");
            for r in &rows {
                println!("{},{},{},{}", r.value, r.t_gbps, r.e_joules, r.miss_rate);
            }
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                write_csv_file(dir.join("bench.csv"), &rows)?;
            }
        }
        Command::Compare => {
            let mut configs = load_configs(cli)?;
            let out = cli.out.clone();
            // Per-config outputs would collide in one directory.
            configs.iter_mut().for_each(|c| c.output_dir = None);
            let report = harness::compare(&configs)?;
            print!("{}", report.to_table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_csv_file(dir.join("compare.csv"), &report.rows)?;
                std::fs::write(dir.join("compare.txt"), report.to_table())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
