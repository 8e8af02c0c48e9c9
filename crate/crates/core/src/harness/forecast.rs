//! Forecast accuracy study: training-set size by horizon by model type.

use crate::domain::ObservableState;
use crate::env::{run_episode, Building, EpisodeSettings, GroundTruthState, StepRecord};
use crate::error::{Error, Result};
use crate::parallel;
use crate::physnet::{BuildingSample, Forecaster, ForecasterMode};
use crate::scenario::ScenarioTraces;

use super::closed_loop::train_forecaster;
use super::{sub_seed, ExperimentConfig, MetricsRow};

struct ForecastData {
    seed: u64,
    traces: ScenarioTraces,
    records: Vec<StepRecord>,
    train_end: usize,
}

fn generate(config: &ExperimentConfig, seed: u64, train_days: usize) -> Result<ForecastData> {
    let fe = &config.forecast_eval;
    let spd = config.steps_per_day();
    let traces = config
        .scenario
        .generate(train_days + fe.test_days + 1, seed)?;
    let building = Building::new(config.env, config.scenario.step_h)?;
    let ctrl = fe.data_controller;
    let traj = run_episode(
        &building,
        GroundTruthState::uniform(config.protocol.initial_temp, 0),
        0.0,
        |obs: &ObservableState, _: &[ObservableState]| Ok(ctrl.decide(obs)),
        &traces,
        &EpisodeSettings {
            weights: config.weights,
            band: config.band,
        },
        (train_days + fe.test_days) * spd,
    );
    if let Some(e) = traj.error {
        return Err(e);
    }
    Ok(ForecastData {
        seed,
        traces,
        records: traj.records,
        train_end: train_days * spd,
    })
}

/// Mean absolute room-temperature and power errors of full rollouts started
/// at every `stride`-th step of the held-out period, driven by the issued
/// (noisy) outdoor forecast.
pub fn evaluate_rollouts(
    model: &Forecaster,
    traces: &ScenarioTraces,
    records: &[StepRecord],
    from: usize,
    horizon: usize,
    stride: usize,
) -> Result<(f64, f64)> {
    let window = model.window();
    let start = from.max(window - 1);
    if records.len() < start + horizon {
        return Err(Error::input("test log shorter than one forecast window"));
    }
    let (mut et, mut ee, mut n) = (0.0, 0.0, 0usize);
    for t in (start..=records.len() - horizon).step_by(stride) {
        let history: Vec<BuildingSample> = records[t + 1 - window..=t]
            .iter()
            .map(|r| BuildingSample {
                t_r: r.obs.t_r,
                u_phys: r.obs.u_phys_prev,
            })
            .collect();
        let forecast = traces.forecast(records[t].t, horizon);
        let actions: Vec<f64> = records[t..t + horizon]
            .iter()
            .map(|r| r.applied.value())
            .collect();
        let out = model.rollout(&history, &forecast, &actions)?;
        for (k, r) in records[t..t + horizon].iter().enumerate() {
            et += (out.t_r[k] - r.t_r_next).abs();
            ee += (out.u_phys[k] - r.u_phys).abs();
            n += 1;
        }
    }
    Ok((et / n as f64, ee / n as f64))
}

/// Trains both model types on every (seed, training size, horizon) and
/// reports rollout errors on the following test days. Per-seed rows only.
pub fn run_forecast_eval(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let fe = &config.forecast_eval;
    let mut study = config.clone();
    study.forecaster.train_updates = fe.train_updates;
    let config = &study;
    let groups: Vec<(u64, usize)> = config
        .seeds
        .iter()
        .flat_map(|&s| fe.train_days.iter().map(move |&d| (s, d)))
        .collect();
    let data = parallel::map(&groups, |&(s, d)| generate(config, s, d));

    let mut jobs: Vec<(usize, f64, ForecasterMode)> = Vec::new();
    for g in 0..groups.len() {
        for &h in &fe.horizons_h {
            for &m in &fe.modes {
                jobs.push((g, h, m));
            }
        }
    }
    let results = parallel::map(&jobs, |&(g, h_hours, mode)| -> Result<(f64, f64)> {
        let d = data[g]
            .as_ref()
            .map_err(|e| Error::Trace(format!("data generation failed: {e}")))?;
        let h = config.horizon_steps(h_hours)?;
        let model = train_forecaster(
            config,
            mode,
            &d.records[..d.train_end],
            h,
            sub_seed(d.seed, 1),
            None,
        )?;
        evaluate_rollouts(
            &model,
            &d.traces,
            &d.records,
            d.train_end,
            h,
            fe.eval_stride,
        )
    });

    Ok(jobs
        .iter()
        .zip(results)
        .map(|(&(g, h, mode), r)| {
            let (seed, train_days) = groups[g];
            let mut row = MetricsRow::new("forecast", mode.name());
            row.seed = Some(seed);
            row.train_days = Some(train_days);
            row.horizon_h = Some(h);
            match r {
                Ok((t, e)) => {
                    row.mae_temp = Some(t);
                    row.mae_energy = Some(e);
                }
                Err(e) => {
                    eprintln!("forecast condition {} seed {seed} failed: {e}", mode.name());
                    row.status = format!("error: {e}");
                }
            }
            row
        })
        .collect())
}
