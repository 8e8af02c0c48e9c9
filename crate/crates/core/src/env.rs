//! Ground-truth building simulator.
//!
//! A three-node RC network (room air, building mass, envelope) driven by an
//! air-to-water heat pump with an outdoor-temperature-dependent COP. The
//! planner's forecaster assumes a simpler two-node structure, so this model
//! deliberately differs from what the forecaster can represent exactly.
//!
//! Only [`ObservableState`] leaves this module during an episode; mass and
//! envelope temperatures stay hidden.

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ObservableState};
use crate::error::{Error, Result};
use crate::reward::{self, ComfortWeights};
use crate::scenario::{EnvInputs, ScenarioTraces};

/// Integration substeps per control step.
pub const SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    /// Room air and light furniture capacitance, J/°C.
    pub c_r: f64,
    /// Heavy building mass capacitance, J/°C.
    pub c_m: f64,
    /// Envelope capacitance, J/°C.
    pub c_e: f64,
    /// Room to mass resistance, °C/W.
    pub r_rm: f64,
    /// Room to ambient (ventilation, windows), °C/W.
    pub r_ra: f64,
    /// Room to envelope, °C/W.
    pub r_re: f64,
    /// Envelope to ambient, °C/W.
    pub r_ea: f64,
    /// Effective solar aperture, m².
    pub gamma_solar: f64,
    /// Maximum electrical power of the heat pump, W.
    pub p_el_max: f64,
    pub cop_a: f64,
    pub cop_b: f64,
    pub cop_min: f64,
    pub cop_max: f64,
    /// Constant internal gain added to the scenario's internal-gain series, W.
    pub q_int_base: f64,
}

impl Default for EnvParams {
    /// Time constants: room ~4 h, mass 60 h, envelope 20 h.
    fn default() -> Self {
        let h = 3600.0;
        let (g_rm, g_ra, g_re, g_ea) = (800.0, 100.0, 400.0, 200.0);
        Self {
            c_r: (g_rm + g_ra + g_re) * 4.0 * h,
            c_m: g_rm * 60.0 * h,
            c_e: (g_re + g_ea) * 20.0 * h,
            r_rm: 1.0 / g_rm,
            r_ra: 1.0 / g_ra,
            r_re: 1.0 / g_re,
            r_ea: 1.0 / g_ea,
            gamma_solar: 5.0,
            p_el_max: 4000.0,
            cop_a: 3.0,
            cop_b: 0.05,
            cop_min: 1.5,
            cop_max: 5.0,
            q_int_base: 0.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_r", self.c_r),
            ("c_m", self.c_m),
            ("c_e", self.c_e),
            ("r_rm", self.r_rm),
            ("r_ra", self.r_ra),
            ("r_re", self.r_re),
            ("r_ea", self.r_ea),
            ("p_el_max", self.p_el_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.gamma_solar < 0.0 {
            return Err(Error::config("gamma_solar must be >= 0"));
        }
        if !(self.cop_min >= 1.0 && self.cop_max >= self.cop_min) {
            return Err(Error::config(
                "COP clip range must satisfy 1 <= cop_min <= cop_max",
            ));
        }
        Ok(())
    }

    pub fn cop(&self, t_a: f64) -> f64 {
        (self.cop_a + self.cop_b * t_a).clamp(self.cop_min, self.cop_max)
    }

    /// Mass coupling coefficient of a two-node approximation over `step_h`
    /// hours: `dt / (C_m R_rm)`.
    pub fn mass_coupling(&self, step_h: f64) -> f64 {
        step_h * 3600.0 / (self.c_m * self.r_rm)
    }
}

/// Full hidden thermal state of the building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthState {
    pub t_r: f64,
    pub t_m: f64,
    pub t_e: f64,
    pub step_index: usize,
}

impl GroundTruthState {
    /// All nodes at temperature `t`.
    pub fn uniform(t: f64, step_index: usize) -> Self {
        Self {
            t_r: t,
            t_m: t,
            t_e: t,
            step_index,
        }
    }

    fn is_finite(&self) -> bool {
        self.t_r.is_finite() && self.t_m.is_finite() && self.t_e.is_finite()
    }
}

/// Temperature flexibility band around the setpoint enforced by the backup
/// controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackupBand {
    pub delta_minus: f64,
    pub delta_plus: f64,
}

impl Default for BackupBand {
    fn default() -> Self {
        Self {
            delta_minus: 1.0,
            delta_plus: 1.0,
        }
    }
}

impl BackupBand {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_minus > 0.0 && self.delta_plus > 0.0) {
            return Err(Error::config("backup band widths must be > 0"));
        }
        Ok(())
    }

    pub fn forces_on(&self, t_r: f64, t_set: f64) -> bool {
        t_r < t_set - self.delta_minus
    }

    pub fn forces_off(&self, t_r: f64, t_set: f64) -> bool {
        t_r > t_set + self.delta_plus
    }
}

/// Full on below the band, full off above it, otherwise `u` unchanged.
pub fn backup_override(obs: &ObservableState, u: Action, band: &BackupBand) -> Action {
    if band.forces_on(obs.t_r, obs.t_set) {
        Action::FULL
    } else if band.forces_off(obs.t_r, obs.t_set) {
        Action::OFF
    } else {
        u
    }
}

/// Result of advancing the simulator by one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: GroundTruthState,
    /// Electrical power drawn during the step, W.
    pub u_phys: f64,
    /// Observation at the start of the next step.
    pub obs: ObservableState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub params: EnvParams,
    /// Control step, hours.
    pub step_h: f64,
}

impl Building {
    pub fn new(params: EnvParams, step_h: f64) -> Result<Self> {
        params.validate()?;
        if !(step_h > 0.0) {
            return Err(Error::config(format!("step must be > 0, got {step_h}")));
        }
        Ok(Self { params, step_h })
    }

    /// Time derivatives (°C/s) of (room, mass, envelope).
    pub fn derivatives(&self, x: [f64; 3], q_hp: f64, exo: &EnvInputs) -> [f64; 3] {
        let p = &self.params;
        let [t_r, t_m, t_e] = x;
        let gains = q_hp + p.gamma_solar * exo.solar + exo.internal + p.q_int_base;
        let d_r = ((t_m - t_r) / p.r_rm + (t_e - t_r) / p.r_re + (exo.t_a - t_r) / p.r_ra + gains)
            / p.c_r;
        let d_m = (t_r - t_m) / (p.r_rm * p.c_m);
        let d_e = ((t_r - t_e) / p.r_re + (exo.t_a - t_e) / p.r_ea) / p.c_e;
        [d_r, d_m, d_e]
    }

    /// Integrates the thermal state over one control step with constant
    /// inputs using fixed-step RK4.
    pub fn integrate(&self, x: [f64; 3], q_hp: f64, exo: &EnvInputs) -> [f64; 3] {
        let dt = self.step_h * 3600.0 / SUBSTEPS as f64;
        let axpy =
            |a: [f64; 3], k: [f64; 3], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2]];
        let mut x = x;
        for _ in 0..SUBSTEPS {
            let k1 = self.derivatives(x, q_hp, exo);
            let k2 = self.derivatives(axpy(x, k1, dt / 2.0), q_hp, exo);
            let k3 = self.derivatives(axpy(x, k2, dt / 2.0), q_hp, exo);
            let k4 = self.derivatives(axpy(x, k3, dt), q_hp, exo);
            for i in 0..3 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }

    /// Observation of `s` at trace step `t` (clamped to the last trace entry).
    pub fn observe(
        &self,
        s: &GroundTruthState,
        u_phys_prev: f64,
        traces: &ScenarioTraces,
        t: usize,
    ) -> ObservableState {
        let i = t.min(traces.len() - 1);
        ObservableState {
            tau: traces.grid.tau(t),
            t_r: s.t_r,
            u_phys_prev,
            t_a: traces.t_a_true[i],
            lambda: traces.lambda[i],
            t_set: traces.t_set[i],
        }
    }

    /// Applies `u` for one control step starting at `s.step_index`.
    pub fn step(
        &self,
        s: &GroundTruthState,
        u: Action,
        traces: &ScenarioTraces,
    ) -> Result<StepOutcome> {
        let t = s.step_index;
        if t >= traces.len() {
            return Err(Error::Trace(format!(
                "step {t} beyond trace of length {}",
                traces.len()
            )));
        }
        let exo = traces.env_inputs(t);
        let u_phys = u.value() * self.params.p_el_max;
        let q_hp = self.params.cop(exo.t_a) * u_phys;
        let [t_r, t_m, t_e] = self.integrate([s.t_r, s.t_m, s.t_e], q_hp, &exo);
        let next = GroundTruthState {
            t_r,
            t_m,
            t_e,
            step_index: t + 1,
        };
        if !next.is_finite() {
            return Err(Error::Numerical(format!(
                "simulator diverged at step {t}; parameters violate stability"
            )));
        }
        Ok(StepOutcome {
            state: next,
            u_phys,
            obs: self.observe(&next, u_phys, traces, t + 1),
        })
    }
}

/// One logged control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Trace index of the step.
    pub t: usize,
    /// Observation the controller saw.
    pub obs: ObservableState,
    pub requested: Action,
    pub applied: Action,
    pub u_phys: f64,
    pub t_r_next: f64,
    pub raw_reward: f64,
}

#[derive(Debug)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_state: GroundTruthState,
    /// Observation after the last step.
    pub final_obs: ObservableState,
    /// Set when the controller or simulator failed; `records` holds the
    /// steps completed before the failure.
    pub error: Option<Error>,
}

/// Closed-loop settings shared by every episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub weights: ComfortWeights,
    pub band: BackupBand,
}

/// Runs `n_steps` control steps from `s0`. The controller sees the current
/// observation and the observations of this episode so far; its request is
/// passed through [`backup_override`] before it reaches the building.
pub fn run_episode<F>(
    building: &Building,
    s0: GroundTruthState,
    u_phys_prev: f64,
    mut controller: F,
    traces: &ScenarioTraces,
    settings: &EpisodeSettings,
    n_steps: usize,
) -> Trajectory
where
    F: FnMut(&ObservableState, &[ObservableState]) -> std::result::Result<Action, String>,
{
    let mut state = s0;
    let mut obs = building.observe(&state, u_phys_prev, traces, state.step_index);
    let mut records = Vec::with_capacity(n_steps);
    let mut seen = Vec::with_capacity(n_steps);
    let mut error = None;
    if s0.step_index + n_steps > traces.len() {
        error = Some(Error::Trace(format!(
            "episode of {n_steps} steps from {} exceeds trace length {}",
            s0.step_index,
            traces.len()
        )));
    }
    let steps = if error.is_some() { 0 } else { n_steps };
    for _ in 0..steps {
        let t = state.step_index;
        let requested = match controller(&obs, &seen) {
            Ok(u) => u,
            Err(reason) => {
                error = Some(Error::Controller { step: t, reason });
                break;
            }
        };
        let applied = backup_override(&obs, requested, &settings.band);
        let out = match building.step(&state, applied, traces) {
            Ok(o) => o,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        let raw_reward = reward::reward(
            out.u_phys,
            traces.lambda[t],
            building.step_h,
            traces.t_set[t],
            out.state.t_r,
            &settings.weights,
        );
        records.push(StepRecord {
            t,
            obs,
            requested,
            applied,
            u_phys: out.u_phys,
            t_r_next: out.state.t_r,
            raw_reward,
        });
        seen.push(obs);
        state = out.state;
        obs = out.obs;
    }
    Trajectory {
        records,
        final_state: state,
        final_obs: obs,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines;
    use crate::domain::TimeGrid;

    fn flat_traces(n: usize, t_a: f64, t_set: f64) -> ScenarioTraces {
        ScenarioTraces {
            grid: TimeGrid::new(0.0, 0.5, n).unwrap(),
            lambda: vec![0.2; n],
            t_a_true: vec![t_a; n],
            t_a_forecast: vec![t_a; n],
            t_set: vec![t_set; n],
            solar: vec![0.0; n],
            internal: vec![0.0; n],
        }
    }

    /// Independent reference: explicit Euler with 1000 substeps written
    /// directly from the network equations.
    fn euler_oracle(p: &EnvParams, x: [f64; 3], u: f64, t_a: f64, step_h: f64) -> [f64; 3] {
        let n = 1000;
        let dt = step_h * 3600.0 / n as f64;
        let q = (p.cop_a + p.cop_b * t_a).clamp(p.cop_min, p.cop_max) * u * p.p_el_max;
        let [mut r, mut m, mut e] = x;
        for _ in 0..n {
            let dr = ((m - r) / p.r_rm + (e - r) / p.r_re + (t_a - r) / p.r_ra + q) / p.c_r;
            let dm = (r - m) / (p.r_rm * p.c_m);
            let de = ((r - e) / p.r_re + (t_a - e) / p.r_ea) / p.c_e;
            r += dt * dr;
            m += dt * dm;
            e += dt * de;
        }
        [r, m, e]
    }

    fn building() -> Building {
        Building::new(EnvParams::default(), 0.5).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let b = building();
        let tr = flat_traces(4, 12.0, 21.0);
        let s = GroundTruthState::uniform(12.0, 0);
        let out = b.step(&s, Action::OFF, &tr).unwrap();
        assert_eq!(
            (out.state.t_r, out.state.t_m, out.state.t_e),
            (12.0, 12.0, 12.0)
        );
        assert_eq!(out.u_phys, 0.0);
    }

    #[test]
    fn full_heating_warms_room_like_oracle() {
        let b = building();
        let tr = flat_traces(4, 0.0, 21.0);
        let s = GroundTruthState {
            t_r: 20.0,
            t_m: 19.0,
            t_e: 10.0,
            step_index: 0,
        };
        let out = b.step(&s, Action::FULL, &tr).unwrap();
        assert!(out.state.t_r > s.t_r);
        let oracle = euler_oracle(&b.params, [20.0, 19.0, 10.0], 1.0, 0.0, 0.5);
        assert!(
            (out.state.t_r - oracle[0]).abs() < 1e-4,
            "{} vs {}",
            out.state.t_r,
            oracle[0]
        );
        assert!((out.state.t_m - oracle[1]).abs() < 1e-4);
        assert!((out.state.t_e - oracle[2]).abs() < 1e-4);
        assert_eq!(out.u_phys, 4000.0);
        assert_eq!(out.obs.u_phys_prev, 4000.0);
    }

    #[test]
    fn no_heating_cools_without_overshoot() {
        let b = building();
        let tr = flat_traces(200, -5.0, 21.0);
        let mut s = GroundTruthState::uniform(20.0, 0);
        let oracle = euler_oracle(&b.params, [20.0; 3], 0.0, -5.0, 0.5);
        let out = b.step(&s, Action::OFF, &tr).unwrap();
        assert!(out.state.t_r < 20.0);
        assert!((out.state.t_r - oracle[0]).abs() < 1e-4);
        for _ in 0..199 {
            let next = b.step(&s, Action::OFF, &tr).unwrap().state;
            assert!(next.t_r <= s.t_r + 1e-12);
            assert!(next.t_r > -5.0);
            s = next;
        }
    }

    #[test]
    fn free_response_contracts_toward_ambient() {
        let b = building();
        let p = b.params;
        let tr = flat_traces(500, 2.0, 21.0);
        let mut s = GroundTruthState {
            t_r: 25.0,
            t_m: 10.0,
            t_e: -3.0,
            step_index: 0,
        };
        let energy = |s: &GroundTruthState| {
            p.c_r * (s.t_r - 2.0).powi(2)
                + p.c_m * (s.t_m - 2.0).powi(2)
                + p.c_e * (s.t_e - 2.0).powi(2)
        };
        let maxdev = |s: &GroundTruthState| {
            (s.t_r - 2.0)
                .abs()
                .max((s.t_m - 2.0).abs())
                .max((s.t_e - 2.0).abs())
        };
        for _ in 0..499 {
            let next = b.step(&s, Action::OFF, &tr).unwrap().state;
            assert!(energy(&next) <= energy(&s));
            assert!(maxdev(&next) <= maxdev(&s) + 1e-12);
            s = next;
        }
    }

    #[test]
    fn divergent_parameters_are_reported() {
        let p = EnvParams {
            c_r: 1.0,
            ..EnvParams::default()
        };
        let b = Building::new(p, 0.5).unwrap();
        let tr = flat_traces(50, -5.0, 21.0);
        let mut s = GroundTruthState::uniform(20.0, 0);
        let mut failed = false;
        for _ in 0..50 {
            match b.step(&s, Action::FULL, &tr) {
                Ok(o) => s = o.state,
                Err(Error::Numerical(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(failed);
    }

    #[test]
    fn params_validation() {
        assert!(EnvParams {
            r_rm: 0.0,
            ..EnvParams::default()
        }
        .validate()
        .is_err());
        assert!(EnvParams {
            cop_min: 0.5,
            ..EnvParams::default()
        }
        .validate()
        .is_err());
        let p = EnvParams::default();
        for t in [-10.0, 0.0, 20.0] {
            assert!(p.cop(t) >= 1.0);
        }
        let nominal = p.p_el_max * p.cop(7.0);
        assert!((nominal - 15_000.0).abs() / 15_000.0 < 0.15, "{nominal}");
    }

    fn obs(t_r: f64, t_set: f64) -> ObservableState {
        ObservableState {
            tau: 0.0,
            t_r,
            u_phys_prev: 0.0,
            t_a: 0.0,
            lambda: 0.1,
            t_set,
        }
    }

    #[test]
    fn backup_band_cases() {
        let band = BackupBand::default();
        let u = Action::new(0.5).unwrap();
        assert_eq!(backup_override(&obs(21.0, 21.0), u, &band), u);
        assert_eq!(
            backup_override(&obs(19.0, 21.0), Action::OFF, &band),
            Action::FULL
        );
        assert_eq!(
            backup_override(&obs(23.0, 21.0), Action::FULL, &band),
            Action::OFF
        );
        // band edges are inside
        assert_eq!(backup_override(&obs(20.0, 21.0), u, &band), u);
        assert_eq!(backup_override(&obs(22.0, 21.0), u, &band), u);
    }

    #[test]
    fn backup_override_is_idempotent() {
        let band = BackupBand {
            delta_minus: 0.7,
            delta_plus: 0.4,
        };
        for i in 0..100 {
            let o = obs(17.0 + i as f64 * 0.08, 21.0);
            for k in 0..5 {
                let once = backup_override(&o, Action::from_index(k), &band);
                assert_eq!(backup_override(&o, once, &band), once);
            }
        }
    }

    fn settings() -> EpisodeSettings {
        EpisodeSettings {
            weights: ComfortWeights::default(),
            band: BackupBand::default(),
        }
    }

    #[test]
    fn empty_episode() {
        let tr = flat_traces(10, 5.0, 21.0);
        let traj = run_episode(
            &building(),
            GroundTruthState::uniform(20.0, 0),
            0.0,
            |_, _| Ok(Action::OFF),
            &tr,
            &settings(),
            0,
        );
        assert!(traj.records.is_empty());
        assert!(traj.error.is_none());
    }

    #[test]
    fn bang_bang_stays_in_band() {
        let tr = flat_traces(48 * 6, 0.0, 21.0);
        let traj = run_episode(
            &building(),
            GroundTruthState::uniform(21.0, 0),
            0.0,
            |o, _| Ok(Action::new(baselines::bang_bang(o.t_r, o.t_set)).unwrap()),
            &tr,
            &settings(),
            48 * 6,
        );
        assert!(traj.error.is_none());
        // after a day of settling the room oscillates around the setpoint
        for r in &traj.records[48..] {
            assert!(
                r.t_r_next >= 21.0 - 1.0 && r.t_r_next <= 21.0 + 1.0,
                "T_r {}",
                r.t_r_next
            );
        }
    }

    #[test]
    fn backup_forces_heating_for_idle_controller() {
        let tr = flat_traces(48 * 3, -5.0, 21.0);
        let traj = run_episode(
            &building(),
            GroundTruthState::uniform(21.0, 0),
            0.0,
            |_, _| Ok(Action::OFF),
            &tr,
            &settings(),
            48 * 3,
        );
        let first_forced = traj
            .records
            .iter()
            .position(|r| r.applied == Action::FULL)
            .expect("backup never fired");
        let r = &traj.records[first_forced];
        assert!(r.obs.t_r < 20.0);
        assert_eq!(r.requested, Action::OFF);
        // every earlier step was left alone and stayed above the band
        for r in &traj.records[..first_forced] {
            assert_eq!(r.applied, Action::OFF);
            assert!(r.obs.t_r >= 20.0);
        }
        for r in &traj.records {
            assert_eq!(
                r.applied,
                backup_override(&r.obs, r.requested, &BackupBand::default())
            );
        }
    }

    #[test]
    fn controller_failure_keeps_partial_log() {
        let tr = flat_traces(10, 5.0, 21.0);
        let traj = run_episode(
            &building(),
            GroundTruthState::uniform(21.0, 0),
            0.0,
            |_, seen| {
                if seen.len() == 3 {
                    Err("boom".into())
                } else {
                    Ok(Action::OFF)
                }
            },
            &tr,
            &settings(),
            10,
        );
        assert_eq!(traj.records.len(), 3);
        assert!(matches!(
            traj.error,
            Some(Error::Controller { step: 3, .. })
        ));
    }
}
