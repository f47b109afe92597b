use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mipdqn::bench::{self, BenchConfig, BenchError, RunReport};
use mipdqn::env::EnvState;
use mipdqn::mip::BackendKind;

#[derive(Parser)]
#[command(name = "mipdqn", version, about = "Constraint-aware Q-learning for microgrid dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and sigma2 value; writes checkpoints and learning curves.
    Train(Common),
    /// Dispatch the test window through the MIP and score it against the oracle.
    Evaluate(Common),
    /// Evaluate plus the unconstrained policy baseline.
    Compare(Common),
    /// Train and evaluate on the three-ESS system.
    LargeCase(Common),
    /// Write the max-Q model of one state as an LP file with a name map.
    ExportMip {
        #[command(flatten)]
        common: Common,
        /// JSON state; the start of the first test day when absent.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Write a synthetic profile CSV.
    SynthData(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sigma2 values.
    #[arg(long, value_delimiter = ',')]
    sigma2: Option<Vec<f64>>,
    /// Number of days (test window, or generated days for synth-data).
    #[arg(long)]
    days: Option<usize>,
    /// `highs` or `reference`; MIPDQN_SOLVER takes precedence.
    #[arg(long)]
    backend: Option<BackendKind>,
}

impl Common {
    fn config(&self, synth: bool) -> Result<BenchConfig, BenchError> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::load(p)?,
            None => BenchConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
            if synth {
                cfg.synth_seed = s;
            }
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = &self.sigma2 {
            cfg.sigma2_sweep = s.clone();
        }
        if let Some(d) = self.days {
            if synth {
                cfg.synth_days = d;
            } else {
                cfg.eval_days = d;
                cfg.compare_days = d;
            }
        }
        if self.backend.is_some() {
            cfg.dispatch.backend = self.backend;
        }
        Ok(cfg)
    }
}

fn print_report(report: &RunReport) {
    for s in &report.summary {
        let err = match (s.mean_error_pct, s.error_std_pct) {
            (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2} %"),
            _ => "n/a".to_string(),
        };
        println!(
            "{:<22} days {:>3}  cost {:>10.2} $  error {:>18}  unbalance {:>10.3} kW  residual {:.1e}  time {:.2} s",
            s.algorithm, s.days, s.mean_cost_usd, err, s.mean_unbalance_kw, s.max_residual_kw, s.total_time_s
        );
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Train(c) => {
            let summary = bench::cmd_train(&c.config(false)?)?;
            for r in &summary.runs {
                println!("trained {r}");
            }
            println!("model: {}", summary.primary_model.display());
        }
        Command::Evaluate(c) => print_report(&bench::cmd_evaluate(&c.config(false)?)?),
        Command::Compare(c) => print_report(&bench::cmd_compare(&c.config(false)?)?),
        Command::LargeCase(c) => print_report(&bench::cmd_large_case(&c.config(false)?)?),
        Command::ExportMip { common, state } => {
            let state = match state {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
                    let s: EnvState =
                        serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
                    Some(s)
                }
                None => None,
            };
            let path = bench::cmd_export_mip(&common.config(false)?, state)?;
            println!("{}", path.display());
        }
        Command::SynthData(c) => println!("{}", bench::cmd_synth_data(&c.config(true)?)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
