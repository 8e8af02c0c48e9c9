//! Data generation, closed-loop log CSV files and tree inspection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::RuleController;
use crate::domain::{Action, ObservableState};
use crate::env::{run_episode, Building, EpisodeSettings, GroundTruthState, StepRecord};
use crate::error::{Error, Result};
use crate::physnet::{BuildingSample, Forecaster};
use crate::planner::{search, HeatPumpSim, PriorSource, SearchConfig, SearchMode, TreeDump};
use crate::scenario::ScenarioTraces;

use super::closed_loop::{train_forecaster, warmup};
use super::{sub_seed, ExperimentConfig};

/// Flat CSV form of a [`StepRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: usize,
    pub tau: f64,
    pub t_r: f64,
    pub u_phys_prev: f64,
    pub t_a: f64,
    pub lambda: f64,
    pub t_set: f64,
    pub requested: f64,
    pub applied: f64,
    pub u_phys: f64,
    pub t_r_next: f64,
    pub raw_reward: f64,
}

impl From<&StepRecord> for LogRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            t: r.t,
            tau: r.obs.tau,
            t_r: r.obs.t_r,
            u_phys_prev: r.obs.u_phys_prev,
            t_a: r.obs.t_a,
            lambda: r.obs.lambda,
            t_set: r.obs.t_set,
            requested: r.requested.value(),
            applied: r.applied.value(),
            u_phys: r.u_phys,
            t_r_next: r.t_r_next,
            raw_reward: r.raw_reward,
        }
    }
}

impl TryFrom<&LogRow> for StepRecord {
    type Error = Error;

    fn try_from(r: &LogRow) -> Result<Self> {
        Ok(StepRecord {
            t: r.t,
            obs: ObservableState {
                tau: r.tau,
                t_r: r.t_r,
                u_phys_prev: r.u_phys_prev,
                t_a: r.t_a,
                lambda: r.lambda,
                t_set: r.t_set,
            },
            requested: Action::new(r.requested)?,
            applied: Action::new(r.applied)?,
            u_phys: r.u_phys,
            t_r_next: r.t_r_next,
            raw_reward: r.raw_reward,
        })
    }
}

pub fn write_log_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(LogRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_log_csv`]; rows must be consecutive steps.
pub fn read_log_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<StepRecord> = Vec::new();
    for row in rdr.deserialize() {
        let row: LogRow = row?;
        if let Some(prev) = out.last() {
            if row.t != prev.t + 1 {
                return Err(Error::Trace(format!(
                    "log step {} does not follow {}",
                    row.t, prev.t
                )));
            }
        }
        out.push(StepRecord::try_from(&row)?);
    }
    Ok(out)
}

/// Generates a scenario for `days` and runs `controller` over it.
pub fn generate_data(
    config: &ExperimentConfig,
    seed: u64,
    days: usize,
    controller: RuleController,
) -> Result<(ScenarioTraces, Vec<StepRecord>)> {
    config.validate()?;
    if days == 0 {
        return Err(Error::config("days must be >= 1"));
    }
    let traces = config.scenario.generate(days, seed)?;
    let building = Building::new(config.env, config.scenario.step_h)?;
    let traj = run_episode(
        &building,
        GroundTruthState::uniform(config.protocol.initial_temp, 0),
        0.0,
        |obs: &ObservableState, _: &[ObservableState]| Ok(controller.decide(obs)),
        &traces,
        &EpisodeSettings {
            weights: config.weights,
            band: config.band,
        },
        traces.len(),
    );
    match traj.error {
        Some(e) => Err(e),
        None => Ok((traces, traj.records)),
    }
}

/// Per-node view used in tree dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeView {
    pub tau: f64,
    pub t_r: f64,
    pub t_m: Option<f64>,
    pub u_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeReport {
    pub seed: u64,
    pub step: usize,
    pub budget: usize,
    pub chosen_action: usize,
    pub visits: Vec<f64>,
    pub tree: TreeDump<NodeView>,
}

/// Runs one vanilla search at test step `offset` after the warmup and dumps
/// its tree. Without `model`, the first configured forecaster mode is
/// trained on the warmup log.
pub fn inspect_tree(
    config: &ExperimentConfig,
    seed: u64,
    budget: usize,
    model: Option<Forecaster>,
) -> Result<TreeReport> {
    config.validate()?;
    let horizon = config.horizon_steps(config.search.horizon_h)?;
    let w = warmup(config, seed)?;
    let model = match model {
        Some(m) => m,
        None => {
            let mode = *config
                .search
                .modes
                .first()
                .ok_or_else(|| Error::config("no forecaster mode configured"))?;
            train_forecaster(config, mode, &w.log, horizon, sub_seed(seed, 1), None)?
        }
    };
    let t = w.state.step_index;
    let obs = w.building.observe(&w.state, w.u_prev, &w.traces, t);
    let mut hist: Vec<BuildingSample> = w.log[w.log.len().saturating_sub(model.window())..]
        .iter()
        .map(|r| BuildingSample {
            t_r: r.obs.t_r,
            u_phys: r.obs.u_phys_prev,
        })
        .collect();
    hist.push(BuildingSample {
        t_r: obs.t_r,
        u_phys: obs.u_phys_prev,
    });
    let forecast = w.traces.forecast(t, horizon);
    let sim = HeatPumpSim::new(&model, &forecast, &w.sim_settings(config, horizon));
    let root = sim.root(&hist, obs.tau)?;
    let cfg = SearchConfig {
        n_simulations: budget,
        max_depth: None,
        alpha: config.search.alpha,
        gamma: config.search.gamma,
    };
    let out = search(&sim, root, &cfg, SearchMode::Vanilla, PriorSource::Ones)?;
    let tree = out.tree.dump(|s| NodeView {
        tau: s.tau,
        t_r: s.t_r,
        t_m: s.t_m(),
        u_prev: s.u_prev,
    });
    Ok(TreeReport {
        seed,
        step: t,
        budget,
        chosen_action: out.action,
        visits: out.visits,
        tree,
    })
}
