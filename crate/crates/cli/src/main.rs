use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use heatplan::baselines::RuleController;
use heatplan::harness::{self, ExperimentConfig, MetricsRow};
use heatplan::physnet::Forecaster;

#[derive(Parser)]
#[command(
    name = "heatplan",
    version,
    about = "Heat-pump demand-response planning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single simulation budget instead of the configured lists.
    #[arg(long)]
    budget: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(self.seed, self.out.clone(), self.budget);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Forecast accuracy of both model types across training sizes and horizons.
    ForecastEval(Common),
    /// Planner-in-the-loop control versus rule baselines.
    ControlEval(Common),
    /// Vanilla versus prior-guided tree search across budgets.
    AlphazeroEval(Common),
    /// Generate scenario traces and a rule-controlled closed-loop log.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 7)]
        days: usize,
        /// bangbang, discrete or continuous
        #[arg(long, default_value = "continuous")]
        controller: String,
    },
    /// Dump the search tree of the first decision after warmup.
    InspectTree {
        #[command(flatten)]
        common: Common,
        /// Forecaster checkpoint to use instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
}

fn emit(cfg: &ExperimentConfig, name: &str, rows: Vec<MetricsRow>) -> Result<()> {
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let rows = harness::with_summaries(rows);
    let (csv, manifest) = harness::emit_results(cfg, name, &rows)?;
    println!("wrote {} and {}", csv.display(), manifest.display());
    if failed > 0 {
        eprintln!("{failed} condition(s) failed; see the status column");
    }
    Ok(())
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::ForecastEval(c) => {
            let cfg = c.load()?;
            emit(&cfg, "forecast_eval", harness::run_forecast_eval(&cfg)?)
        }
        Command::ControlEval(c) => {
            let cfg = c.load()?;
            emit(&cfg, "control_eval", harness::run_control_eval(&cfg)?)
        }
        Command::AlphazeroEval(c) => {
            let cfg = c.load()?;
            emit(
                &cfg,
                "alphazero_eval",
                harness::run_alphazero_compare(&cfg)?,
            )
        }
        Command::GenerateData {
            common,
            days,
            controller,
        } => {
            let cfg = common.load()?;
            let Some(ctrl) = RuleController::from_name(&controller) else {
                bail!(
                    "unknown controller {controller:?} (expected bangbang, discrete or continuous)"
                );
            };
            let (traces, log) = harness::generate_data(&cfg, first_seed(&cfg), days, ctrl)?;
            ensure_dir(&cfg.output_dir)?;
            let tp = cfg.output_dir.join("traces.csv");
            let lp = cfg.output_dir.join("log.csv");
            traces.write_csv(&tp)?;
            harness::write_log_csv(&lp, &log)?;
            println!("wrote {} and {}", tp.display(), lp.display());
            Ok(())
        }
        Command::InspectTree { common, model } => {
            let cfg = common.load()?;
            let budget = *cfg.search.budgets.first().context("no budget configured")?;
            let loaded = match &model {
                Some(p) => {
                    Some(Forecaster::load(p).with_context(|| format!("loading {}", p.display()))?)
                }
                None => None,
            };
            let report = harness::inspect_tree(&cfg, first_seed(&cfg), budget, loaded)?;
            ensure_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("tree.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
            println!(
                "wrote {} ({} nodes, chose action {})",
                path.display(),
                report.tree.nodes.len(),
                report.chosen_action
            );
            Ok(())
        }
        Command::DefaultConfig => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::default())?
            );
            Ok(())
        }
    }
}
