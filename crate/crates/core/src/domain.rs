//! Time discretization and the state/action vocabulary shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The planner's discrete action set: five equally spaced modulation levels.
pub const ACTION_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Number of discrete actions.
pub const N_ACTIONS: usize = ACTION_LEVELS.len();

/// Value domains of the observed quantities. They are used to scale network
/// inputs and to clip synthetic data; real traces may exceed them slightly.
pub mod ranges {
    pub const ROOM_TEMP: (f64, f64) = (15.0, 25.0);
    pub const OUTDOOR_TEMP: (f64, f64) = (-10.0, 20.0);
    pub const POWER_W: (f64, f64) = (0.0, 4000.0);
    pub const PRICE: (f64, f64) = (-0.4, 0.4);
    pub const SETPOINT: (f64, f64) = (15.0, 25.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_hour: f64,
    /// Step length in hours.
    pub step: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(start_hour: f64, step: f64, n_steps: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::config(format!("time step must be > 0, got {step}")));
        }
        if n_steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        if !(0.0..24.0).contains(&start_hour) {
            return Err(Error::config(format!(
                "start hour {start_hour} outside [0, 24)"
            )));
        }
        Ok(Self {
            start_hour,
            step,
            n_steps,
        })
    }

    /// Half-hour grid covering `days` whole days from midnight.
    pub fn half_hourly_days(days: usize) -> Result<Self> {
        Self::new(0.0, 0.5, days * 48)
    }

    pub fn steps_per_day(&self) -> usize {
        (24.0 / self.step).round() as usize
    }

    /// Time of day in hours at step `t`.
    pub fn tau(&self, t: usize) -> f64 {
        (self.start_hour + t as f64 * self.step).rem_euclid(24.0)
    }

    pub fn hours(&self) -> f64 {
        self.n_steps as f64 * self.step
    }
}

/// Heat-pump modulation fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Action(f64);

impl Action {
    pub const OFF: Action = Action(0.0);
    pub const FULL: Action = Action(1.0);

    pub fn new(u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::input(format!("modulation {u} outside [0, 1]")));
        }
        Ok(Action(u))
    }

    /// Action for discrete index `i` of [`ACTION_LEVELS`].
    pub fn from_index(i: usize) -> Self {
        Action(ACTION_LEVELS[i])
    }

    /// Index into [`ACTION_LEVELS`] when this action is one of the discrete levels.
    pub fn index(&self) -> Option<usize> {
        ACTION_LEVELS.iter().position(|&l| l == self.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// What the controller sees at a decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableState {
    /// Time of day, hours.
    pub tau: f64,
    /// Room temperature, °C.
    pub t_r: f64,
    /// Electrical power drawn during the previous step, W.
    pub u_phys_prev: f64,
    /// Outdoor temperature, °C.
    pub t_a: f64,
    /// Energy price, €/kWh.
    pub lambda: f64,
    /// Room temperature setpoint, °C.
    pub t_set: f64,
}

/// Sine/cosine encoding of the hour of day.
pub fn time_features(tau: f64) -> (f64, f64) {
    let angle = std::f64::consts::TAU * tau / 24.0;
    (angle.sin(), angle.cos())
}

/// Maps `x` from `range` linearly onto `[-1, 1]`.
pub fn scale_symmetric(x: f64, range: (f64, f64)) -> f64 {
    2.0 * (x - range.0) / (range.1 - range.0) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_wraps_at_midnight() {
        let g = TimeGrid::new(23.0, 0.5, 10).unwrap();
        assert_eq!(g.tau(0), 23.0);
        assert_eq!(g.tau(2), 0.0);
        assert_eq!(g.tau(3), 0.5);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(TimeGrid::new(0.0, 0.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 0.5, 0).is_err());
        assert!(TimeGrid::new(24.0, 0.5, 1).is_err());
    }

    #[test]
    fn action_indices_round_trip() {
        for i in 0..N_ACTIONS {
            assert_eq!(Action::from_index(i).index(), Some(i));
        }
        assert_eq!(Action::new(0.3).unwrap().index(), None);
        assert!(Action::new(1.2).is_err());
    }

    #[test]
    fn half_hour_day_has_48_steps() {
        let g = TimeGrid::half_hourly_days(1).unwrap();
        assert_eq!(g.steps_per_day(), 48);
        assert_eq!(g.hours(), 24.0);
    }
}
