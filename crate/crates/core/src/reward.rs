//! Per-step reward and its min-max normalization.
//!
//! The raw reward trades off energy cost against asymmetric comfort
//! penalties. Power is held constant over a step, so the energy drawn is
//! `power * step / 1000` kWh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comfort-penalty weights per °C per step. `below` must exceed `above` so
/// that pre-heating is penalized less than under-heating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortWeights {
    /// Penalty per °C below the setpoint.
    pub c1: f64,
    /// Penalty per °C above the setpoint.
    pub c2: f64,
}

impl Default for ComfortWeights {
    fn default() -> Self {
        Self { c1: 0.5, c2: 0.1 }
    }
}

impl ComfortWeights {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let w = Self { c1, c2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c2 > 0.0 && self.c1 > self.c2) || !self.c1.is_finite() {
            return Err(Error::config(format!(
                "comfort weights need c1 > c2 > 0, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Energy in kWh for `power_w` held over `step_h` hours.
pub fn energy_kwh(power_w: f64, step_h: f64) -> f64 {
    power_w * step_h / 1000.0
}

/// Raw (unnormalized) reward of one step.
pub fn reward(
    u_phys: f64,
    lambda: f64,
    step_h: f64,
    t_set: f64,
    t_r_next: f64,
    w: &ComfortWeights,
) -> f64 {
    let cost = energy_kwh(u_phys, step_h) * lambda;
    let too_cold = (t_set - t_r_next).max(0.0);
    let too_warm = (t_r_next - t_set).max(0.0);
    -cost - too_cold * w.c1 - too_warm * w.c2
}

/// Min-max bounds of the raw reward. The upper bound is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl RewardNormalizer {
    pub fn new(rho_min: f64) -> Result<Self> {
        let n = Self {
            rho_min,
            rho_max: 0.0,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min < self.rho_max) || !self.rho_min.is_finite() {
            return Err(Error::config(format!(
                "reward normalizer needs rho_min < rho_max, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        Ok(())
    }

    /// Maps `rho` onto `[0, 1]`, clipping values outside the bounds.
    pub fn normalize(&self, rho: f64) -> f64 {
        ((rho - self.rho_min) / (self.rho_max - self.rho_min)).clamp(0.0, 1.0)
    }
}

/// Free-function form of [`RewardNormalizer::normalize`] that also rejects a
/// degenerate normalizer.
pub fn normalize_reward(rho: f64, norm: &RewardNormalizer) -> Result<f64> {
    if norm.rho_max == norm.rho_min {
        return Err(Error::config(
            "degenerate reward normalizer (rho_min == rho_max)",
        ));
    }
    Ok(norm.normalize(rho))
}

/// Worst-case reward from training statistics: the most expensive step
/// observed plus a 2 °C under-heating penalty.
///
/// Prices may be negative; callers pass the largest absolute price seen.
pub fn reward_bounds(
    max_power_seen: f64,
    max_price_seen: f64,
    step_h: f64,
    w: &ComfortWeights,
) -> RewardNormalizer {
    let cost_floor = energy_kwh(max_power_seen.max(0.0), step_h) * max_price_seen.abs();
    let comfort_floor = 2.0 * w.c1;
    RewardNormalizer {
        rho_min: -(cost_floor + comfort_floor),
        rho_max: 0.0,
    }
}
