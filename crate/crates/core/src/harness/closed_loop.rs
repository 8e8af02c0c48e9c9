//! Warmup, nightly retraining and the planner-in-the-loop test days.

use crate::baselines::RuleController;
use crate::domain::{Action, ObservableState};
use crate::env::{run_episode, Building, EpisodeSettings, GroundTruthState, StepRecord};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::parallel;
use crate::physnet::{windows_from_log, BuildingSample, Forecaster, ForecasterMode};
use crate::planner::{
    collect_prior_samples, search, train_prior, HeatPumpSim, PriorEpisode, PriorSample,
    PriorSource, SearchConfig, SearchMode, SimSettings,
};
use crate::reward::{energy_kwh, reward_bounds, RewardNormalizer};
use crate::scenario::ScenarioTraces;

use super::{sub_seed, ExperimentConfig, MetricsRow, PriorKind};

/// State of one seed after the rule-controlled warmup period.
#[derive(Debug, Clone)]
pub struct Warmup {
    pub seed: u64,
    pub traces: ScenarioTraces,
    pub building: Building,
    pub log: Vec<StepRecord>,
    pub state: GroundTruthState,
    pub u_prev: f64,
    pub normalizer: RewardNormalizer,
}

impl Warmup {
    pub fn sim_settings(&self, config: &ExperimentConfig, horizon: usize) -> SimSettings {
        SimSettings {
            normalizer: self.normalizer,
            weights: config.weights,
            band: config.band,
            step_h: config.scenario.step_h,
            horizon,
        }
    }
}

fn episode_settings(config: &ExperimentConfig) -> EpisodeSettings {
    EpisodeSettings {
        weights: config.weights,
        band: config.band,
    }
}

/// Generates the seed's scenario and runs the warmup controller. Reward
/// normalization bounds come from the warmup log.
pub fn warmup(config: &ExperimentConfig, seed: u64) -> Result<Warmup> {
    let spd = config.steps_per_day();
    let p = &config.protocol;
    // one spare day so the last forecasts are not truncated
    let traces = config
        .scenario
        .generate(p.warmup_days + p.test_days + 1, seed)?;
    let building = Building::new(config.env, config.scenario.step_h)?;
    let ctrl = p.warmup_controller;
    let traj = run_episode(
        &building,
        GroundTruthState::uniform(p.initial_temp, 0),
        0.0,
        |obs: &ObservableState, _: &[ObservableState]| Ok(ctrl.decide(obs)),
        &traces,
        &episode_settings(config),
        p.warmup_days * spd,
    );
    if let Some(e) = traj.error {
        return Err(e);
    }
    let max_power = traj.records.iter().map(|r| r.u_phys).fold(0.0, f64::max);
    let max_price = traces.lambda[..p.warmup_days * spd]
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max);
    let normalizer = reward_bounds(
        max_power,
        max_price,
        config.scenario.step_h,
        &config.weights,
    );
    normalizer.validate()?;
    let u_prev = traj.records.last().map_or(0.0, |r| r.u_phys);
    Ok(Warmup {
        seed,
        traces,
        building,
        log: traj.records,
        state: traj.final_state,
        u_prev,
        normalizer,
    })
}

fn epochs_for(updates: usize, n_windows: usize, batch: usize) -> usize {
    let per_epoch = n_windows.div_ceil(batch).max(1);
    updates.div_ceil(per_epoch).max(1)
}

/// Trains a forecaster on the most recent days of `log` (all of it unless
/// capped), from scratch or warm-started from `init`.
pub fn train_forecaster(
    config: &ExperimentConfig,
    mode: ForecasterMode,
    log: &[StepRecord],
    horizon: usize,
    seed: u64,
    init: Option<&Forecaster>,
) -> Result<Forecaster> {
    let fs = &config.forecaster;
    let log = match fs.max_train_days {
        Some(d) => &log[log.len().saturating_sub(d * config.steps_per_day())..],
        None => log,
    };
    let dataset = windows_from_log(log, fs.model.window, horizon)?;
    let batch = fs.model.batch_size;
    match init {
        None => {
            let epochs = epochs_for(fs.train_updates, dataset.len(), batch);
            let cfg = crate::physnet::ForecasterConfig { epochs, ..fs.model };
            Ok(Forecaster::train(mode, cfg, &dataset, seed)?.0)
        }
        Some(m) => {
            let mut model = m.clone();
            model.fine_tune(
                &dataset,
                epochs_for(fs.retrain_updates, dataset.len(), batch),
                seed,
            )?;
            Ok(model)
        }
    }
}

/// Per-day closed-loop outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayMetrics {
    /// Sum of normalized step rewards, in `[0, steps]`.
    pub reward: f64,
    pub cost: f64,
    pub energy_kwh: f64,
    pub abs_dev_sum: f64,
    pub steps: usize,
    /// Applied actions that contradict the backup band.
    pub band_violations: usize,
}

impl DayMetrics {
    pub fn from_records(
        records: &[StepRecord],
        config: &ExperimentConfig,
        norm: &RewardNormalizer,
    ) -> Self {
        let step_h = config.scenario.step_h;
        let mut m = DayMetrics {
            reward: 0.0,
            cost: 0.0,
            energy_kwh: 0.0,
            abs_dev_sum: 0.0,
            steps: 0,
            band_violations: 0,
        };
        for r in records {
            m.reward += norm.normalize(r.raw_reward);
            let e = energy_kwh(r.u_phys, step_h);
            m.energy_kwh += e;
            m.cost += e * r.obs.lambda;
            m.abs_dev_sum += (r.t_r_next - r.obs.t_set).abs();
            m.steps += 1;
            let band = &config.band;
            if (band.forces_on(r.obs.t_r, r.obs.t_set) && r.applied != Action::FULL)
                || (band.forces_off(r.obs.t_r, r.obs.t_set) && r.applied != Action::OFF)
            {
                m.band_violations += 1;
            }
        }
        m
    }

    /// Fills reward, cost and deviation columns of `row` from several days.
    pub fn fill_row(days: &[DayMetrics], row: &mut MetricsRow) {
        if days.is_empty() {
            return;
        }
        row.daily_reward = Some(days.iter().map(|d| d.reward).sum::<f64>() / days.len() as f64);
        let energy: f64 = days.iter().map(|d| d.energy_kwh).sum();
        let cost: f64 = days.iter().map(|d| d.cost).sum();
        row.cost_per_kwh = (energy > 0.0).then(|| cost / energy);
        let steps: usize = days.iter().map(|d| d.steps).sum();
        row.mean_abs_temp_dev =
            Some(days.iter().map(|d| d.abs_dev_sum).sum::<f64>() / steps.max(1) as f64);
    }
}

/// Where AlphaZero priors come from during a closed-loop run.
#[derive(Debug, Clone)]
pub enum PriorPlan {
    None,
    Ones,
    /// Prior network plus its accumulated training samples; retrained every
    /// night when retraining is enabled.
    Network {
        net: Network,
        samples: Vec<PriorSample>,
    },
}

#[derive(Debug, Clone)]
pub struct PlannerSpec {
    pub mode: SearchMode,
    pub search: SearchConfig,
    pub horizon: usize,
    pub prior: PriorPlan,
}

fn history_tail(log: &[StepRecord], n: usize) -> Vec<BuildingSample> {
    log[log.len().saturating_sub(n)..]
        .iter()
        .map(|r| BuildingSample {
            t_r: r.obs.t_r,
            u_phys: r.obs.u_phys_prev,
        })
        .collect()
}

/// Prior-training episode replaying one day in simulation. `log_through`
/// ends with the record of the day's first step.
fn prior_episode(
    config: &ExperimentConfig,
    w: &Warmup,
    log_through: &[StepRecord],
    horizon: usize,
) -> PriorEpisode {
    let spd = config.steps_per_day();
    let start = log_through[log_through.len() - 1].t;
    PriorEpisode {
        history: history_tail(log_through, config.forecaster.model.window),
        exo: w.traces.forecast(start, spd + horizon),
        steps: spd,
    }
}

/// Vanilla search used to produce prior training targets.
fn sample_search(config: &ExperimentConfig) -> SearchConfig {
    SearchConfig {
        n_simulations: config.alphazero.sample_budget,
        max_depth: None,
        alpha: config.search.alpha,
        gamma: config.search.gamma,
    }
}

/// Vanilla-search samples over the warmup days that have a full history.
pub fn warmup_prior_samples(
    config: &ExperimentConfig,
    w: &Warmup,
    model: &Forecaster,
    horizon: usize,
) -> Result<Vec<PriorSample>> {
    let spd = config.steps_per_day();
    let window = config.forecaster.model.window;
    let episodes: Vec<PriorEpisode> = (0..config.protocol.warmup_days)
        .map(|d| d * spd)
        .filter(|&start| start + 1 >= window)
        .map(|start| prior_episode(config, w, &w.log[..=start], horizon))
        .collect();
    collect_prior_samples(
        model,
        &episodes,
        &w.sim_settings(config, horizon),
        &sample_search(config),
    )
}

/// Runs the test days with the planner in the loop, retraining the
/// forecaster (and a network prior) after every day but the last.
pub fn run_planner_days(
    config: &ExperimentConfig,
    w: &Warmup,
    initial: &Forecaster,
    spec: &PlannerSpec,
) -> Result<Vec<DayMetrics>> {
    let spd = config.steps_per_day();
    let window = config.forecaster.model.window;
    let settings = w.sim_settings(config, spec.horizon);
    let mut model = initial.clone();
    let mut prior = spec.prior.clone();
    let mut log = w.log.clone();
    let mut state = w.state;
    let mut u_prev = w.u_prev;
    let mut days = Vec::with_capacity(config.protocol.test_days);
    for day in 0..config.protocol.test_days {
        let start = state.step_index;
        let base = history_tail(&log, window);
        let traj = {
            let model = &model;
            let source = match &prior {
                PriorPlan::Network { net, .. } => PriorSource::Network(net),
                _ => PriorSource::Ones,
            };
            let controller = |obs: &ObservableState, seen: &[ObservableState]| {
                let t = start + seen.len();
                let mut hist = base.clone();
                hist.extend(seen.iter().chain([obs]).map(|o| BuildingSample {
                    t_r: o.t_r,
                    u_phys: o.u_phys_prev,
                }));
                let forecast = w.traces.forecast(t, spec.horizon);
                let sim = HeatPumpSim::new(model, &forecast, &settings);
                let root = sim.root(&hist, obs.tau).map_err(|e| e.to_string())?;
                let out = search(&sim, root, &spec.search, spec.mode, source)
                    .map_err(|e| e.to_string())?;
                Ok(Action::from_index(out.action))
            };
            run_episode(
                &w.building,
                state,
                u_prev,
                controller,
                &w.traces,
                &episode_settings(config),
                spd,
            )
        };
        if let Some(e) = traj.error {
            return Err(e);
        }
        days.push(DayMetrics::from_records(
            &traj.records,
            config,
            &w.normalizer,
        ));
        let before = log.len();
        log.extend_from_slice(&traj.records);
        state = traj.final_state;
        u_prev = traj.records.last().map_or(u_prev, |r| r.u_phys);
        if config.protocol.retrain_daily && day + 1 < config.protocol.test_days {
            let night = sub_seed(w.seed, 100 + day as u64);
            model = train_forecaster(config, model.mode, &log, spec.horizon, night, Some(&model))?;
            if let PriorPlan::Network { net, samples } = &mut prior {
                let ep = prior_episode(config, w, &log[..=before], spec.horizon);
                samples.extend(collect_prior_samples(
                    &model,
                    &[ep],
                    &settings,
                    &sample_search(config),
                )?);
                *net = train_prior(samples, &config.alphazero.training, night)?.0;
            }
        }
    }
    Ok(days)
}

/// Runs the test days with a rule controller.
pub fn run_rule_days(
    config: &ExperimentConfig,
    w: &Warmup,
    ctrl: RuleController,
) -> Result<Vec<DayMetrics>> {
    let spd = config.steps_per_day();
    let traj = run_episode(
        &w.building,
        w.state,
        w.u_prev,
        |obs: &ObservableState, _: &[ObservableState]| Ok(ctrl.decide(obs)),
        &w.traces,
        &episode_settings(config),
        config.protocol.test_days * spd,
    );
    if let Some(e) = traj.error {
        return Err(e);
    }
    Ok(traj
        .records
        .chunks(spd)
        .map(|c| DayMetrics::from_records(c, config, &w.normalizer))
        .collect())
}

fn failed_row(mut row: MetricsRow, e: &Error) -> MetricsRow {
    eprintln!(
        "condition {} seed {:?} budget {:?} failed: {e}",
        row.condition, row.seed, row.budget
    );
    row.status = format!("error: {e}");
    row
}

fn condition_row(
    experiment: &str,
    condition: &str,
    seed: u64,
    budget: usize,
    days: &Result<Vec<DayMetrics>>,
) -> MetricsRow {
    let mut row = MetricsRow::new(experiment, condition);
    row.seed = Some(seed);
    row.budget = Some(budget);
    match days {
        Ok(d) => {
            DayMetrics::fill_row(d, &mut row);
            row
        }
        Err(e) => failed_row(row, e),
    }
}

fn collect_warmups(config: &ExperimentConfig) -> Vec<(u64, Result<Warmup>)> {
    let ws = parallel::map(&config.seeds, |&s| warmup(config, s));
    config.seeds.iter().copied().zip(ws).collect()
}

/// Planner-in-the-loop evaluation for every forecaster mode and budget, plus
/// the rule baselines. Returns per-seed rows; summaries are added by
/// [`super::with_summaries`].
pub fn run_control_eval(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let horizon = config.horizon_steps(config.search.horizon_h)?;
    let warmups = collect_warmups(config);
    let ok: Vec<&Warmup> = warmups
        .iter()
        .filter_map(|(_, w)| w.as_ref().ok())
        .collect();

    let model_jobs: Vec<(&Warmup, ForecasterMode)> = ok
        .iter()
        .flat_map(|w| config.search.modes.iter().map(move |&m| (*w, m)))
        .collect();
    let models = parallel::map(&model_jobs, |(w, m)| {
        train_forecaster(config, *m, &w.log, horizon, sub_seed(w.seed, 1), None)
    });

    let mut jobs = Vec::new();
    for (i, (w, m)) in model_jobs.iter().enumerate() {
        for &b in &config.search.budgets {
            jobs.push((i, *w, *m, b));
        }
    }
    let results = parallel::map(&jobs, |&(i, w, _, b)| {
        let model = models[i]
            .as_ref()
            .map_err(|e| Error::Search(format!("initial training failed: {e}")))?;
        let spec = PlannerSpec {
            mode: SearchMode::Vanilla,
            search: SearchConfig {
                n_simulations: b,
                max_depth: None,
                alpha: config.search.alpha,
                gamma: config.search.gamma,
            },
            horizon,
            prior: PriorPlan::None,
        };
        run_planner_days(config, w, model, &spec)
    });
    let baselines: Vec<(&Warmup, RuleController)> = ok
        .iter()
        .flat_map(|w| config.search.baselines.iter().map(move |&c| (*w, c)))
        .collect();
    let base_results = parallel::map(&baselines, |(w, c)| run_rule_days(config, w, *c));

    let mut rows = Vec::new();
    for (seed, w) in &warmups {
        if let Err(e) = w {
            for &b in &config.search.budgets {
                let mut row = MetricsRow::new("control", "warmup");
                row.seed = Some(*seed);
                row.budget = Some(b);
                rows.push(failed_row(row, e));
            }
        }
    }
    for ((_, w, m, b), r) in jobs.iter().zip(&results) {
        rows.push(condition_row(
            "control",
            &format!("{}-mcts", m.name()),
            w.seed,
            *b,
            r,
        ));
    }
    for ((w, c), r) in baselines.iter().zip(&base_results) {
        for &b in &config.search.budgets {
            rows.push(condition_row("control", c.name(), w.seed, b, r));
        }
    }
    Ok(rows)
}

/// Initial models (and priors) of the AlphaZero comparison for one seed.
struct AzSetup {
    model: Forecaster,
    prior: PriorPlan,
}

fn az_setup(config: &ExperimentConfig, w: &Warmup, horizon: usize) -> Result<AzSetup> {
    let az = &config.alphazero;
    let model = train_forecaster(
        config,
        az.forecaster_mode,
        &w.log,
        horizon,
        sub_seed(w.seed, 1),
        None,
    )?;
    let prior = match az.prior {
        PriorKind::Ones => PriorPlan::Ones,
        PriorKind::Network => {
            let samples = warmup_prior_samples(config, w, &model, horizon)?;
            if samples.is_empty() {
                return Err(Error::config("warmup too short to collect prior samples"));
            }
            let net = train_prior(&samples, &az.training, sub_seed(w.seed, 2))?.0;
            PriorPlan::Network { net, samples }
        }
    };
    Ok(AzSetup { model, prior })
}

/// Vanilla versus AlphaZero search across the configured budgets.
pub fn run_alphazero_compare(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let horizon = config.horizon_steps(config.search.horizon_h)?;
    let warmups = collect_warmups(config);
    let ok: Vec<&Warmup> = warmups
        .iter()
        .filter_map(|(_, w)| w.as_ref().ok())
        .collect();
    let setups = parallel::map(&ok, |w| az_setup(config, w, horizon));

    let mut jobs = Vec::new();
    for i in 0..ok.len() {
        for &b in &config.alphazero.budgets {
            for mode in [SearchMode::Vanilla, SearchMode::AlphaZero] {
                jobs.push((i, b, mode));
            }
        }
    }
    let results = parallel::map(&jobs, |&(i, b, mode)| {
        let setup = setups[i]
            .as_ref()
            .map_err(|e| Error::Search(format!("setup failed: {e}")))?;
        let (alpha, prior) = match mode {
            SearchMode::Vanilla => (config.search.alpha, PriorPlan::None),
            SearchMode::AlphaZero => (config.alphazero.alpha, setup.prior.clone()),
        };
        let spec = PlannerSpec {
            mode,
            search: SearchConfig {
                n_simulations: b,
                max_depth: None,
                alpha,
                gamma: config.search.gamma,
            },
            horizon,
            prior,
        };
        run_planner_days(config, ok[i], &setup.model, &spec)
    });

    let mut rows = Vec::new();
    for (seed, w) in &warmups {
        if let Err(e) = w {
            let mut row = MetricsRow::new("alphazero", "warmup");
            row.seed = Some(*seed);
            rows.push(failed_row(row, e));
        }
    }
    for ((i, b, mode), r) in jobs.iter().zip(&results) {
        let name = match mode {
            SearchMode::Vanilla => "vanilla",
            SearchMode::AlphaZero => "alphazero",
        };
        rows.push(condition_row("alphazero", name, ok[*i].seed, *b, r));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_cover_the_update_budget() {
        assert_eq!(epochs_for(100, 64, 32), 50);
        assert_eq!(epochs_for(100, 1000, 32), 4);
        assert_eq!(epochs_for(0, 10, 32), 1);
    }
}
