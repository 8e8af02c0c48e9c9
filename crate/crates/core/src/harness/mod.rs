//! Experiment runner: configuration, closed-loop protocol, metrics and
//! result files.

mod closed_loop;
mod data;
mod forecast;
mod stats;

pub use closed_loop::{
    run_alphazero_compare, run_control_eval, run_planner_days, run_rule_days, train_forecaster,
    warmup, DayMetrics, PlannerSpec, PriorPlan, Warmup,
};
pub use data::{generate_data, inspect_tree, read_log_csv, write_log_csv, LogRow};
pub use forecast::{evaluate_rollouts, run_forecast_eval};
pub use stats::{median, quantile, summarize, Summary};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::RuleController;
use crate::env::{BackupBand, EnvParams};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::physnet::{ForecasterConfig, ForecasterMode};
use crate::planner::PriorConfig;
use crate::reward::ComfortWeights;
use crate::scenario::ScenarioSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterSettings {
    pub model: ForecasterConfig,
    /// Optimizer updates for a model trained from scratch.
    pub train_updates: usize,
    /// Optimizer updates of each nightly warm-started retraining.
    pub retrain_updates: usize,
    /// Most recent days kept for nightly retraining; `None` keeps all.
    pub max_train_days: Option<usize>,
}

impl Default for ForecasterSettings {
    fn default() -> Self {
        Self {
            model: ForecasterConfig {
                adam: AdamConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                ..Default::default()
            },
            train_updates: 4000,
            retrain_updates: 400,
            max_train_days: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub budgets: Vec<usize>,
    pub modes: Vec<ForecasterMode>,
    pub horizon_h: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub baselines: Vec<RuleController>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budgets: vec![250, 500, 1000],
            modes: vec![ForecasterMode::PhysNet, ForecasterMode::BlackBox],
            horizon_h: 6.0,
            alpha: 1.0,
            gamma: 0.97,
            baselines: vec![RuleController::BangBang],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolSettings {
    pub warmup_days: usize,
    pub test_days: usize,
    pub retrain_daily: bool,
    pub warmup_controller: RuleController,
    pub initial_temp: f64,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self {
            warmup_days: 10,
            test_days: 11,
            retrain_daily: true,
            warmup_controller: RuleController::Discrete,
            initial_temp: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastEvalSettings {
    pub train_days: Vec<usize>,
    pub horizons_h: Vec<f64>,
    pub modes: Vec<ForecasterMode>,
    pub test_days: usize,
    /// Steps between consecutive test windows.
    pub eval_stride: usize,
    pub data_controller: RuleController,
    /// Optimizer updates per model; replaces `forecaster.train_updates`
    /// in this study.
    pub train_updates: usize,
}

impl Default for ForecastEvalSettings {
    fn default() -> Self {
        Self {
            train_days: vec![2, 5, 24],
            horizons_h: vec![3.0, 6.0, 12.0],
            modes: vec![ForecasterMode::PhysNet, ForecasterMode::BlackBox],
            test_days: 6,
            eval_stride: 1,
            data_controller: RuleController::Continuous,
            train_updates: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// Trained prior network.
    Network,
    /// `P = 1` on every edge.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaZeroSettings {
    pub budgets: Vec<usize>,
    pub forecaster_mode: ForecasterMode,
    pub alpha: f64,
    pub prior: PriorKind,
    /// Vanilla budget used to generate prior training targets.
    pub sample_budget: usize,
    pub training: PriorConfig,
}

impl Default for AlphaZeroSettings {
    fn default() -> Self {
        Self {
            budgets: vec![25, 50, 100, 250, 500, 1000],
            forecaster_mode: ForecasterMode::PhysNet,
            alpha: 3.5,
            prior: PriorKind::Network,
            sample_budget: 1000,
            training: PriorConfig {
                epochs: 60,
                ..Default::default()
            },
        }
    }
}

/// Complete experiment configuration; every section has defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub scenario: ScenarioSpec,
    pub env: EnvParams,
    pub weights: ComfortWeights,
    pub band: BackupBand,
    pub forecaster: ForecasterSettings,
    pub search: SearchSettings,
    pub protocol: ProtocolSettings,
    pub forecast_eval: ForecastEvalSettings,
    pub alphazero: AlphaZeroSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("results"),
            scenario: ScenarioSpec::default(),
            env: EnvParams::default(),
            weights: ComfortWeights::default(),
            band: BackupBand::default(),
            forecaster: ForecasterSettings::default(),
            search: SearchSettings::default(),
            protocol: ProtocolSettings::default(),
            forecast_eval: ForecastEvalSettings::default(),
            alphazero: AlphaZeroSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds list is empty"));
        }
        let budgets = self.search.budgets.iter().chain(&self.alphazero.budgets);
        if budgets
            .copied()
            .chain([self.alphazero.sample_budget])
            .any(|b| b == 0)
        {
            return Err(Error::config("simulation budgets must be >= 1"));
        }
        if (self.scenario.step_h - self.forecaster.model.step_h).abs() > 1e-12 {
            return Err(Error::config("scenario and forecaster step lengths differ"));
        }
        if self.protocol.test_days == 0 {
            return Err(Error::config("test_days must be >= 1"));
        }
        if self.protocol.warmup_days == 0 {
            return Err(Error::config("warmup_days must be >= 1"));
        }
        if self.forecast_eval.eval_stride == 0 {
            return Err(Error::config("eval_stride must be >= 1"));
        }
        if !(self.search.alpha > 0.0) || !(self.alphazero.alpha > 0.0) {
            return Err(Error::config("alpha must be > 0"));
        }
        if self.forecast_eval.train_days.iter().any(|&d| d == 0) {
            return Err(Error::config("train_days entries must be >= 1"));
        }
        self.forecaster.model.validate()?;
        self.env.validate()?;
        self.weights.validate()?;
        self.band.validate()?;
        for h in self
            .forecast_eval
            .horizons_h
            .iter()
            .chain([&self.search.horizon_h])
        {
            self.horizon_steps(*h)?;
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (24.0 / self.scenario.step_h).round() as usize
    }

    /// Horizon in whole steps.
    pub fn horizon_steps(&self, hours: f64) -> Result<usize> {
        let steps = hours / self.scenario.step_h;
        if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "horizon {hours} h is not a positive multiple of the step"
            )));
        }
        Ok(steps.round() as usize)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        budget: Option<usize>,
    ) {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        if let Some(b) = budget {
            self.search.budgets = vec![b];
            self.alphazero.budgets = vec![b];
        }
    }
}

/// One result line in long format. Absent metrics are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub condition: String,
    /// `seed` for per-seed rows, else `median`, `q1` or `q3`.
    pub stat: String,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub train_days: Option<usize>,
    pub horizon_h: Option<f64>,
    pub mae_temp: Option<f64>,
    pub mae_energy: Option<f64>,
    pub daily_reward: Option<f64>,
    pub cost_per_kwh: Option<f64>,
    pub mean_abs_temp_dev: Option<f64>,
    /// `ok` or the diagnostic of a failed condition.
    pub status: String,
}

impl MetricsRow {
    pub fn new(experiment: &str, condition: &str) -> Self {
        Self {
            experiment: experiment.into(),
            condition: condition.into(),
            stat: "seed".into(),
            seed: None,
            budget: None,
            train_days: None,
            horizon_h: None,
            mae_temp: None,
            mae_energy: None,
            daily_reward: None,
            cost_per_kwh: None,
            mean_abs_temp_dev: None,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Key of the condition a row belongs to, ignoring the seed.
    fn cell(&self) -> (String, Option<usize>, Option<usize>, Option<u64>) {
        (
            self.condition.clone(),
            self.budget,
            self.train_days,
            self.horizon_h.map(f64::to_bits),
        )
    }
}

/// Appends `median`, `q1`, `q3` rows for every condition cell, over the
/// successful per-seed rows.
pub fn with_summaries(rows: Vec<MetricsRow>) -> Vec<MetricsRow> {
    let mut cells: Vec<(String, Option<usize>, Option<usize>, Option<u64>)> = Vec::new();
    for r in &rows {
        if !cells.contains(&r.cell()) {
            cells.push(r.cell());
        }
    }
    let mut out = rows.clone();
    for cell in cells {
        let members: Vec<&MetricsRow> = rows
            .iter()
            .filter(|r| r.cell() == cell && r.is_ok())
            .collect();
        if members.is_empty() {
            continue;
        }
        let pick = |f: fn(&MetricsRow) -> Option<f64>| -> Option<Summary> {
            let v: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
            summarize(&v)
        };
        let metrics = [
            pick(|r| r.mae_temp),
            pick(|r| r.mae_energy),
            pick(|r| r.daily_reward),
            pick(|r| r.cost_per_kwh),
            pick(|r| r.mean_abs_temp_dev),
        ];
        for (stat, get) in [
            ("median", (|s: &Summary| s.median) as fn(&Summary) -> f64),
            ("q1", |s: &Summary| s.q1),
            ("q3", |s: &Summary| s.q3),
        ] {
            let base = members[0];
            let mut row = MetricsRow::new(&base.experiment, &base.condition);
            row.stat = stat.into();
            row.budget = base.budget;
            row.train_days = base.train_days;
            row.horizon_h = base.horizon_h;
            row.mae_temp = metrics[0].as_ref().map(get);
            row.mae_energy = metrics[1].as_ref().map(get);
            row.daily_reward = metrics[2].as_ref().map(get);
            row.cost_per_kwh = metrics[3].as_ref().map(get);
            row.mean_abs_temp_dev = metrics[4].as_ref().map(get);
            out.push(row);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub files: Vec<String>,
    pub rows: usize,
}

/// Writes `<experiment>.csv` and `<experiment>.manifest.json` into the
/// configured output directory and returns their paths.
pub fn emit_results(
    config: &ExperimentConfig,
    experiment: &str,
    rows: &[MetricsRow],
) -> Result<(PathBuf, PathBuf)> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let csv_name = format!("{experiment}.csv");
    let csv_path = dir.join(&csv_name);
    write_rows(&csv_path, rows)?;
    let manifest = Manifest {
        experiment: experiment.into(),
        config_name: config.name.clone(),
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        files: vec![csv_name],
        rows: rows.len(),
    };
    let manifest_path = dir.join(format!("{experiment}.manifest.json"));
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok((csv_path, manifest_path))
}

/// CSV with a header row even when `rows` is empty.
pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record([
        "experiment",
        "condition",
        "stat",
        "seed",
        "budget",
        "train_days",
        "horizon_h",
        "mae_temp",
        "mae_energy",
        "daily_reward",
        "cost_per_kwh",
        "mean_abs_temp_dev",
        "status",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Independent stream seed from a base seed and a stream tag (SplitMix64).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
