//! The heat-pump planning problem: forecaster transitions over an exogenous
//! forecast, normalized rewards and backup-band pruning.

use serde::Serialize;

use super::prior::prior_features;
use super::Fomdp;
use crate::domain::{Action, N_ACTIONS};
use crate::env::BackupBand;
use crate::error::{Error, Result};
use crate::physnet::{latent_to_temp, norm_power, norm_temp, BuildingSample, Forecaster};
use crate::reward::{reward, ComfortWeights, RewardNormalizer};
use crate::scenario::ForecastStep;

/// Simulated state `(tau, T_r, T_m)` plus the forecaster window it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub tau: f64,
    pub t_r: f64,
    /// Power drawn over the step that led here.
    pub u_prev: f64,
    /// Latent, filled in when the node is expanded.
    pub z: Option<f64>,
    /// Normalized `(T_r, u)` window, oldest first.
    #[serde(skip)]
    pub window: Vec<f64>,
}

impl SimState {
    pub fn t_m(&self) -> Option<f64> {
        self.z.map(latent_to_temp)
    }

    pub fn current(&self) -> BuildingSample {
        BuildingSample {
            t_r: self.t_r,
            u_phys: self.u_prev,
        }
    }
}

/// Reward and pruning settings shared by every simulated environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub normalizer: RewardNormalizer,
    pub weights: ComfortWeights,
    pub band: BackupBand,
    pub step_h: f64,
    /// Planning horizon in steps.
    pub horizon: usize,
}

/// Forecaster-driven simulated environment for one decision step.
#[derive(Debug, Clone)]
pub struct HeatPumpSim<'a> {
    pub model: &'a Forecaster,
    /// Exogenous inputs for steps `0..horizon` below the root.
    pub forecast: Vec<ForecastStep>,
    pub normalizer: RewardNormalizer,
    pub weights: ComfortWeights,
    pub band: BackupBand,
    pub step_h: f64,
}

impl<'a> HeatPumpSim<'a> {
    /// Uses at most `settings.horizon` steps of `forecast`.
    pub fn new(model: &'a Forecaster, forecast: &[ForecastStep], settings: &SimSettings) -> Self {
        Self {
            model,
            forecast: forecast[..forecast.len().min(settings.horizon)].to_vec(),
            normalizer: settings.normalizer,
            weights: settings.weights,
            band: settings.band,
            step_h: settings.step_h,
        }
    }

    /// Root state encoded from the real history window.
    pub fn root(&self, history: &[BuildingSample], tau: f64) -> Result<SimState> {
        let window = self.model.normalize_window(history)?;
        let z = self.model.encode_normalized(&window)?;
        let last = history[history.len() - 1];
        Ok(SimState {
            tau,
            t_r: last.t_r,
            u_prev: last.u_phys,
            z: Some(z),
            window,
        })
    }

    /// Allowed actions for a room temperature against a setpoint.
    pub fn allowed_for(t_r: f64, t_set: f64, band: &BackupBand) -> Vec<usize> {
        if band.forces_on(t_r, t_set) {
            vec![N_ACTIONS - 1]
        } else if band.forces_off(t_r, t_set) {
            vec![0]
        } else {
            (0..N_ACTIONS).collect()
        }
    }

    fn step_input(&self, depth: usize) -> Result<&ForecastStep> {
        self.forecast
            .get(depth)
            .ok_or_else(|| Error::Search(format!("no forecast for depth {depth}")))
    }
}

impl Fomdp for HeatPumpSim<'_> {
    type State = SimState;

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn horizon(&self) -> usize {
        self.forecast.len()
    }

    fn allowed_actions(&self, s: &SimState, depth: usize) -> Vec<usize> {
        match self.forecast.get(depth) {
            Some(f) => Self::allowed_for(s.t_r, f.t_set, &self.band),
            None => (0..N_ACTIONS).collect(),
        }
    }

    fn prepare(&self, s: &mut SimState, _depth: usize) -> Result<()> {
        if s.z.is_none() {
            s.z = Some(
                self.model
                    .encode_normalized(&s.window)
                    .map_err(|e| Error::Search(format!("encoding failed: {e}")))?,
            );
        }
        Ok(())
    }

    fn transition(&self, s: &SimState, depth: usize, action: usize) -> Result<(SimState, f64)> {
        let z =
            s.z.ok_or_else(|| Error::Search("transition from an unencoded state".into()))?;
        let exo = self.step_input(depth)?;
        let u = Action::from_index(action).value();
        let next = self
            .model
            .predict_step(z, &s.current(), exo, u)
            .map_err(|e| Error::Search(format!("forecaster failed at depth {depth}: {e}")))?;
        if !next.t_r.is_finite() || !next.u_phys.is_finite() {
            return Err(Error::Search(format!(
                "non-finite prediction at depth {depth}"
            )));
        }
        let rho = reward(
            next.u_phys,
            exo.lambda,
            self.step_h,
            exo.t_set,
            next.t_r,
            &self.weights,
        );
        let mut window = Vec::with_capacity(s.window.len());
        window.extend_from_slice(&s.window[2..]);
        window.push(norm_temp(next.t_r));
        window.push(norm_power(next.u_phys));
        let tau = (s.tau + self.step_h).rem_euclid(24.0);
        Ok((
            SimState {
                tau,
                t_r: next.t_r,
                u_prev: next.u_phys,
                z: None,
                window,
            },
            self.normalizer.normalize(rho),
        ))
    }

    fn prior_features(&self, s: &SimState, depth: usize) -> Result<Vec<f64>> {
        let t_m = s
            .t_m()
            .ok_or_else(|| Error::Search("prior features need an encoded state".into()))?;
        let exo = self.step_input(depth)?;
        Ok(prior_features(s.tau, s.t_r, t_m, exo.t_a, exo.lambda, exo.t_set).to_vec())
    }
}
