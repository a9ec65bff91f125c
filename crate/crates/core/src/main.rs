use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tkgode::cli::{cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, exit_code, EXIT_CHECK_FAILED, EXIT_OK};
use tkgode::config::{RunConfig, SyntheticSpec};
use tkgode::data::PatternSpec;
use tkgode::eval::{FilterSetting, Subset};
use tkgode::gradcheck::GRADCHECK_THRESHOLD;
use tkgode::Error;

#[derive(Parser)]
#[command(name = "tkgode", version, about = "Temporal knowledge graph forecasting with a graph neural ODE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.txt, loss.csv and the resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rank test queries with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// raw, tu (time-unaware) or ta (time-aware); defaults to the config.
        #[arg(long)]
        setting: Option<String>,
        /// full, inductive, horizon_N, or horizon for the sweep over 1..7;
        /// defaults to the config.
        #[arg(long)]
        subset: Option<String>,
        /// Forecast this many steps past the last observed snapshot.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Write a synthetic dataset as train/valid/test TSV files.
    Synth {
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        entities: usize,
        #[arg(long)]
        relations: usize,
        #[arg(long)]
        timestamps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Period of the periodic pattern.
        #[arg(long)]
        period: Option<usize>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config, RunConfig::default())?;
            let out = cmd_train(&cfg)?;
            println!("checkpoint {}", out.checkpoint.display());
            println!("losses {}", out.loss_csv.display());
        }
        Command::Eval {
            checkpoint,
            config,
            setting,
            subset,
            horizon,
        } => {
            let cfg = RunConfig::load(&config, RunConfig::default())?;
            let setting: FilterSetting = match setting {
                Some(s) => s.parse()?,
                None => cfg.eval_setting,
            };
            let subsets = match (horizon, subset) {
                (Some(0), _) => return Err(Error::Config("--horizon must be >= 1".into())),
                (Some(dt), None) => vec![Subset::Horizon(dt)],
                (Some(_), Some(_)) => return Err(Error::Config("--horizon and --subset are exclusive".into())),
                (None, Some(s)) => Subset::parse_list(&s)?,
                (None, None) => vec![cfg.eval_subset],
            };
            println!("{}", tkgode::eval::MetricsReport::CSV_HEADER);
            for r in cmd_eval(&cfg, &checkpoint, setting, &subsets)? {
                println!("{}", r.csv_row());
            }
        }
        Command::Synth {
            pattern,
            entities,
            relations,
            timestamps,
            seed,
            out,
            period,
        } => {
            let mut pattern = PatternSpec::with_defaults(&pattern, entities)?;
            if let Some(p) = period {
                match &mut pattern {
                    PatternSpec::Periodic { period } => *period = p,
                    _ => return Err(Error::Config("--period only applies to the periodic pattern".into())),
                }
            }
            let spec = SyntheticSpec {
                pattern,
                entities,
                relations,
                timestamps,
                seed,
            };
            cmd_synth(&spec, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck {
            config,
            corrupt_gradient,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p, RunConfig::gradcheck_default())?,
                None => RunConfig::gradcheck_default(),
            };
            let report = cmd_gradcheck(&cfg, corrupt_gradient)?;
            for g in &report.groups {
                println!("{:<16} {:.3e}", g.name, g.max_rel_error);
            }
            let max = report.max_rel_error();
            let ok = report.passed(GRADCHECK_THRESHOLD);
            println!("max {max:.3e} threshold {GRADCHECK_THRESHOLD:e} {}", if ok { "ok" } else { "FAILED" });
            if !ok {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
