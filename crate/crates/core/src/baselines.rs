//! Rule-based reference controllers.
//!
//! Comparisons are strict exactly as the rules are written; equality falls
//! through to the next branch.

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ObservableState};

/// Full heating whenever the room is below the setpoint.
pub fn bang_bang(t_r: f64, t_set: f64) -> f64 {
    if t_r < t_set {
        1.0
    } else {
        0.0
    }
}

/// Five-level staircase on the temperature deficit.
pub fn discrete_rule(t_r: f64, t_set: f64) -> f64 {
    if t_r > t_set {
        0.0
    } else if t_r > t_set - 0.05 {
        0.25
    } else if t_r > t_set - 0.15 {
        0.5
    } else if t_r > t_set - 0.25 {
        0.75
    } else {
        1.0
    }
}

/// Proportional rule saturating at a 0.5 °C deficit.
pub fn continuous_rule(t_r: f64, t_set: f64) -> f64 {
    (2.0 * (t_set - t_r).max(0.0)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleController {
    #[serde(rename = "bangbang")]
    BangBang,
    Discrete,
    Continuous,
}

impl RuleController {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bangbang" => Some(Self::BangBang),
            "discrete" => Some(Self::Discrete),
            "continuous" => Some(Self::Continuous),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::BangBang => "bangbang",
            Self::Discrete => "discrete",
            Self::Continuous => "continuous",
        }
    }

    pub fn decide(&self, obs: &ObservableState) -> Action {
        let u = match self {
            Self::BangBang => bang_bang(obs.t_r, obs.t_set),
            Self::Discrete => discrete_rule(obs.t_r, obs.t_set),
            Self::Continuous => continuous_rule(obs.t_r, obs.t_set),
        };
        Action::new(u).expect("rule outputs lie in [0, 1]")
    }
}
