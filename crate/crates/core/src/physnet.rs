//! Encoder–predictor thermal forecaster with a physics-regularized latent.
//!
//! The encoder compresses the last `window` building samples
//! `(room temperature, power)` into a scalar latent `z`, read as the building
//! mass temperature `T_m = 20 + 10 z`. The predictor maps `z`, the current
//! building sample, time of day, outdoor temperature and the action to the
//! next room temperature and power draw. Multi-step forecasts feed each
//! prediction back into the window and re-encode it.
//!
//! In `PhysNet` mode the latent sequence is additionally pulled toward a
//! first-order mass recursion driven by the measured room temperature:
//! `T_m[k] = T_m_hat[k-1] + theta * (T_r[k-1] - T_m_hat[k-1])`, with a single
//! trainable coupling `theta`. `BlackBox` mode drops that term.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ranges, scale_symmetric, time_features};
use crate::env::StepRecord;
use crate::error::{Error, Result};
use crate::nn::{
    Activation, Adam, AdamConfig, ForwardCache, LayerSpec, NetCheckpoint, Network, Unit,
};
use crate::parallel;
use crate::scenario::ForecastStep;

/// Latent-to-temperature map: `T_m = LATENT_CENTER + LATENT_SPAN * z`.
pub const LATENT_CENTER: f64 = 20.0;
pub const LATENT_SPAN: f64 = 10.0;

/// Predictor input width: z, T_r, u_prev, sin tau, cos tau, T_a, u.
pub const PREDICTOR_INPUTS: usize = 7;

/// Largest coupling coefficient allowed; keeps the mass recursion stable.
pub const THETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecasterMode {
    PhysNet,
    BlackBox,
}

impl ForecasterMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PhysNet => "physnet",
            Self::BlackBox => "blackbox",
        }
    }
}

/// One observed building sample: room temperature and the power drawn over
/// the preceding step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingSample {
    pub t_r: f64,
    pub u_phys: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    /// Past samples seen by the encoder.
    pub window: usize,
    pub encoder_hidden: usize,
    pub predictor_hidden: usize,
    pub step_h: f64,
    /// Multiplier of the physics term; 1 gives the plain sum.
    pub physics_weight: f64,
    /// Initial mass time constant, hours; sets `theta_0 = step_h / tau`.
    pub theta_init_hours: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            window: 24,
            encoder_hidden: 32,
            predictor_hidden: 64,
            step_h: 0.5,
            physics_weight: 1.0,
            theta_init_hours: 80.0,
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 50,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.encoder_hidden == 0 || self.predictor_hidden == 0 {
            return Err(Error::config("forecaster dimensions must be >= 1"));
        }
        if !(self.step_h > 0.0) || !(self.theta_init_hours > 0.0) {
            return Err(Error::config("step and theta time constant must be > 0"));
        }
        if self.physics_weight < 0.0 || self.batch_size == 0 {
            return Err(Error::config(
                "physics weight must be >= 0 and batch size >= 1",
            ));
        }
        let theta0 = self.step_h / self.theta_init_hours;
        if !(theta0 < THETA_MAX) {
            return Err(Error::config(format!(
                "initial theta {theta0} must lie in (0, 1)"
            )));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalized room temperature in `[-1, 1]` over the room range.
#[inline]
pub fn norm_temp(t: f64) -> f64 {
    scale_symmetric(t, ranges::ROOM_TEMP)
}

#[inline]
pub fn norm_power(u: f64) -> f64 {
    scale_symmetric(u, ranges::POWER_W)
}

#[inline]
fn temp_from_output(o: f64) -> f64 {
    let (lo, hi) = ranges::ROOM_TEMP;
    (lo + hi) / 2.0 + (hi - lo) / 2.0 * o
}

#[inline]
fn power_fraction(o: f64) -> f64 {
    o.clamp(0.0, 1.0)
}

pub fn latent_to_temp(z: f64) -> f64 {
    LATENT_CENTER + LATENT_SPAN * z
}

/// Physics targets for the latent sequence.
///
/// `t_m_hat[k]` and `t_r[k]` for `k = 0..h` give targets for steps `1..=h`:
/// `t_m_hat[k] + theta * (t_r[k] - t_m_hat[k])`.
pub fn physics_targets(t_m_hat: &[f64], t_r: &[f64], theta: f64) -> Result<Vec<f64>> {
    if t_m_hat.len() != t_r.len() {
        return Err(Error::ShapeMismatch {
            expected: t_m_hat.len(),
            got: t_r.len(),
        });
    }
    Ok(t_m_hat
        .iter()
        .zip(t_r)
        .map(|(&m, &r)| m + theta * (r - m))
        .collect())
}

/// Loss terms of one forecast window, in normalized units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub regression: f64,
    pub physics: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.regression += o.regression;
        self.physics += o.physics;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.regression *= s;
        self.physics *= s;
    }
}

/// Window loss. `predicted` and `measured` cover steps `1..=h`;
/// `latent_t_m` holds `T_m_hat[0..=h]` and `targets` the physics targets for
/// steps `1..=h`. Temperatures are scaled by the room range, power by its
/// maximum and mass temperatures by the latent span.
pub fn loss(
    predicted: &[BuildingSample],
    measured: &[BuildingSample],
    latent_t_m: &[f64],
    targets: &[f64],
    mode: ForecasterMode,
    physics_weight: f64,
) -> Result<LossParts> {
    if predicted.len() != measured.len() {
        return Err(Error::ShapeMismatch {
            expected: measured.len(),
            got: predicted.len(),
        });
    }
    let regression: f64 = predicted
        .iter()
        .zip(measured)
        .map(|(p, m)| {
            let dt = norm_temp(p.t_r) - norm_temp(m.t_r);
            let du = (p.u_phys - m.u_phys) / ranges::POWER_W.1;
            dt * dt + du * du
        })
        .sum();
    let physics = match mode {
        ForecasterMode::BlackBox => 0.0,
        ForecasterMode::PhysNet => {
            if latent_t_m.len() != targets.len() + 1 {
                return Err(Error::ShapeMismatch {
                    expected: targets.len() + 1,
                    got: latent_t_m.len(),
                });
            }
            latent_t_m[1..]
                .iter()
                .zip(targets)
                .map(|(m, t)| ((m - t) / LATENT_SPAN).powi(2))
                .sum()
        }
    };
    Ok(LossParts {
        total: regression + physics_weight * physics,
        regression,
        physics,
    })
}

/// Multi-step forecast. `t_r[k]`, `u_phys[k]` are predictions for step
/// `k + 1`; `t_m[k]` is the mass temperature encoded from the window ending
/// at step `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub t_r: Vec<f64>,
    pub u_phys: Vec<f64>,
    pub t_m: Vec<f64>,
}

/// One supervised window: `history` ends at the current step, then
/// `forecast`, `actions` and `measured` cover the next `h` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWindow {
    pub history: Vec<BuildingSample>,
    pub forecast: Vec<ForecastStep>,
    pub actions: Vec<f64>,
    pub measured: Vec<BuildingSample>,
}

impl TrainingWindow {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Cuts stride-1 windows of `window` past samples and `h` future steps from
/// a contiguous closed-loop log. The exogenous inputs are the logged
/// (measured) outdoor temperatures.
pub fn windows_from_log(
    log: &[StepRecord],
    window: usize,
    h: usize,
) -> Result<Vec<TrainingWindow>> {
    if h == 0 || window == 0 {
        return Err(Error::config("window and horizon must be >= 1"));
    }
    if log.len() < window + h - 1 {
        return Err(Error::InvalidInput(format!(
            "log of {} steps is shorter than window {window} + horizon {h}",
            log.len()
        )));
    }
    Ok((window - 1..=log.len() - h)
        .map(|t| TrainingWindow {
            history: log[t + 1 - window..=t]
                .iter()
                .map(|r| BuildingSample {
                    t_r: r.obs.t_r,
                    u_phys: r.obs.u_phys_prev,
                })
                .collect(),
            forecast: log[t..t + h]
                .iter()
                .map(|r| ForecastStep {
                    tau: r.obs.tau,
                    t_a: r.obs.t_a,
                    lambda: r.obs.lambda,
                    t_set: r.obs.t_set,
                })
                .collect(),
            actions: log[t..t + h].iter().map(|r| r.applied.value()).collect(),
            measured: log[t..t + h]
                .iter()
                .map(|r| BuildingSample {
                    t_r: r.t_r_next,
                    u_phys: r.u_phys,
                })
                .collect(),
        })
        .collect())
}

/// Gradients of the window loss with respect to every trainable quantity.
struct WindowPass {
    entries: Vec<f64>,
    enc_caches: Vec<ForwardCache>,
    pred_caches: Vec<ForwardCache>,
    predicted: Vec<BuildingSample>,
    t_m_hat: Vec<f64>,
    t_r_meas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterGrads {
    pub encoder: Vec<f64>,
    pub predictor: Vec<f64>,
    pub theta_raw: f64,
}

impl ForecasterGrads {
    fn zeros(model: &Forecaster) -> Self {
        Self {
            encoder: vec![0.0; model.encoder.n_params()],
            predictor: vec![0.0; model.predictor.n_params()],
            theta_raw: 0.0,
        }
    }

    fn add(&mut self, o: &ForecasterGrads) {
        self.encoder
            .iter_mut()
            .zip(&o.encoder)
            .for_each(|(a, b)| *a += b);
        self.predictor
            .iter_mut()
            .zip(&o.predictor)
            .for_each(|(a, b)| *a += b);
        self.theta_raw += o.theta_raw;
    }

    fn scale(&mut self, s: f64) {
        self.encoder.iter_mut().for_each(|a| *a *= s);
        self.predictor.iter_mut().for_each(|a| *a *= s);
        self.theta_raw *= s;
    }
}

/// Per-epoch mean window losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<LossParts>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<LossParts> {
        self.epochs.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub mode: ForecasterMode,
    pub config: ForecasterConfig,
    pub encoder: Network,
    pub predictor: Network,
    theta_raw: f64,
    /// Horizon of the most recent training run (0 if untrained).
    pub trained_horizon: usize,
}

impl Forecaster {
    /// Fresh model with seeded weights. The encoder is initialized before the
    /// predictor, so both modes share identical weights for the same seed.
    pub fn new(mode: ForecasterMode, config: ForecasterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(mode, config, &mut rng)
    }

    fn with_rng(
        mode: ForecasterMode,
        config: ForecasterConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut encoder = Network::new(
            vec![
                LayerSpec::new(2 * config.window, config.encoder_hidden, Activation::Relu),
                LayerSpec::new(config.encoder_hidden, 1, Activation::Tanh),
            ],
            rng,
        )?;
        // start the latent in the linear range of tanh, near 20 degC; a
        // saturated latent is constant and trivially meets the physics loss
        for w in encoder.weights_mut(1) {
            *w *= 0.1;
        }
        let mut predictor = Network::new(
            vec![
                LayerSpec::new(PREDICTOR_INPUTS, config.predictor_hidden, Activation::Relu),
                LayerSpec::new(
                    config.predictor_hidden,
                    2,
                    Activation::Mixed(vec![Unit::Tanh, Unit::Relu]),
                ),
            ],
            rng,
        )?;
        // start the power unit mid-range for any input; a ReLU output that
        // starts dead never recovers
        let hidden = config.predictor_hidden;
        for w in &mut predictor.weights_mut(1)[hidden..] {
            *w *= 0.1;
        }
        predictor.bias_mut(1)[1] = 0.5;
        let theta0 = config.step_h / config.theta_init_hours;
        Ok(Self {
            mode,
            config,
            encoder,
            predictor,
            theta_raw: softplus_inv(theta0),
            trained_horizon: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    /// Mass coupling coefficient `dt / (C_m R_rm)` of the physics prior.
    pub fn theta(&self) -> f64 {
        softplus(self.theta_raw)
    }

    pub fn theta_raw(&self) -> f64 {
        self.theta_raw
    }

    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        if !(theta > 0.0 && theta <= THETA_MAX) {
            return Err(Error::input(format!(
                "theta {theta} outside (0, {THETA_MAX}]"
            )));
        }
        self.theta_raw = softplus_inv(theta);
        Ok(())
    }

    /// Sets the unconstrained coupling parameter (`theta = softplus(raw)`).
    pub fn set_theta_raw(&mut self, raw: f64) {
        self.theta_raw = raw;
    }

    fn clip_theta(&mut self) {
        self.theta_raw = self.theta_raw.min(softplus_inv(THETA_MAX));
    }

    /// Flattened normalized encoder input for the last `window` samples.
    pub fn normalize_window(&self, history: &[BuildingSample]) -> Result<Vec<f64>> {
        let d = self.config.window;
        if history.len() < d {
            return Err(Error::InvalidInput(format!(
                "history has {} samples, window needs {d}",
                history.len()
            )));
        }
        Ok(history[history.len() - d..]
            .iter()
            .flat_map(|s| [norm_temp(s.t_r), norm_power(s.u_phys)])
            .collect())
    }

    /// Latent `z` of an already-normalized window.
    pub fn encode_normalized(&self, window: &[f64]) -> Result<f64> {
        Ok(self.encoder.predict(window)?[0])
    }

    /// Latent and mass temperature of the last `window` samples.
    pub fn encode(&self, history: &[BuildingSample]) -> Result<(f64, f64)> {
        let z = self.encode_normalized(&self.normalize_window(history)?)?;
        Ok((z, latent_to_temp(z)))
    }

    fn predictor_input(
        z: f64,
        current: &BuildingSample,
        step: &ForecastStep,
        u: f64,
    ) -> [f64; PREDICTOR_INPUTS] {
        let (s, c) = time_features(step.tau);
        [
            z,
            norm_temp(current.t_r),
            norm_power(current.u_phys),
            s,
            c,
            scale_symmetric(step.t_a, ranges::OUTDOOR_TEMP),
            u,
        ]
    }

    /// One-step prediction from a latent and the current building sample.
    /// Outputs are within the physical ranges.
    pub fn predict_step(
        &self,
        z: f64,
        current: &BuildingSample,
        step: &ForecastStep,
        u: f64,
    ) -> Result<BuildingSample> {
        let out = self
            .predictor
            .predict(&Self::predictor_input(z, current, step, u))?;
        Ok(BuildingSample {
            t_r: temp_from_output(out[0]),
            u_phys: power_fraction(out[1]) * ranges::POWER_W.1,
        })
    }

    /// Autoregressive forecast over `actions.len()` steps.
    pub fn rollout(
        &self,
        history: &[BuildingSample],
        forecast: &[ForecastStep],
        actions: &[f64],
    ) -> Result<Rollout> {
        let h = actions.len();
        if h == 0 {
            return Err(Error::input("rollout horizon must be >= 1"));
        }
        if forecast.len() < h {
            return Err(Error::InvalidInput(format!(
                "forecast covers {} steps, horizon is {h}",
                forecast.len()
            )));
        }
        let d = self.config.window;
        if history.len() < d {
            return Err(Error::InvalidInput(format!(
                "history has {} samples, window needs {d}",
                history.len()
            )));
        }
        let mut samples: Vec<BuildingSample> = history[history.len() - d..].to_vec();
        let mut out = Rollout {
            t_r: Vec::with_capacity(h),
            u_phys: Vec::with_capacity(h),
            t_m: Vec::with_capacity(h + 1),
        };
        for k in 0..=h {
            let (z, t_m) = self.encode(&samples[samples.len() - d..])?;
            out.t_m.push(t_m);
            if k == h {
                break;
            }
            let current = samples[samples.len() - 1];
            let next = self.predict_step(z, &current, &forecast[k], actions[k])?;
            out.t_r.push(next.t_r);
            out.u_phys.push(next.u_phys);
            samples.push(next);
        }
        Ok(out)
    }

    fn forward_window(&self, w: &TrainingWindow) -> Result<WindowPass> {
        let d = self.config.window;
        let h = w.horizon();
        if h == 0 || w.forecast.len() < h || w.measured.len() != h || w.history.len() < d {
            return Err(Error::input("malformed training window"));
        }
        let p_hi = ranges::POWER_W.1;
        // normalized samples: history followed by predictions
        let mut entries = self.normalize_window(&w.history)?;
        entries.reserve(2 * h);
        let mut enc_caches = Vec::with_capacity(h + 1);
        let mut pred_caches = Vec::with_capacity(h);
        let mut z = Vec::with_capacity(h + 1);
        let mut current = *w.history.last().expect("history non-empty");
        let mut predicted = Vec::with_capacity(h);
        for k in 0..=h {
            let (y, cache) = self.encoder.forward(&entries[2 * k..2 * (k + d)])?;
            z.push(y[0]);
            enc_caches.push(cache);
            if k == h {
                break;
            }
            let input = Self::predictor_input(y[0], &current, &w.forecast[k], w.actions[k]);
            let (o, cache) = self.predictor.forward(&input)?;
            pred_caches.push(cache);
            let next = BuildingSample {
                t_r: temp_from_output(o[0]),
                u_phys: power_fraction(o[1]) * p_hi,
            };
            entries.push(norm_temp(next.t_r));
            entries.push(norm_power(next.u_phys));
            predicted.push(next);
            current = next;
        }
        let t_m_hat: Vec<f64> = z.iter().map(|&v| latent_to_temp(v)).collect();
        let t_r_meas: Vec<f64> = std::iter::once(w.history[w.history.len() - 1].t_r)
            .chain(w.measured[..h - 1].iter().map(|m| m.t_r))
            .collect();
        Ok(WindowPass {
            entries,
            enc_caches,
            pred_caches,
            predicted,
            t_m_hat,
            t_r_meas,
        })
    }

    /// Window loss with physics targets built from the fixed latent estimates
    /// `anchor` (as the targets are constants during training). Returns the
    /// loss and this model's own latent estimates `T_m_hat[0..=h]`.
    pub fn anchored_loss(
        &self,
        w: &TrainingWindow,
        anchor: Option<&[f64]>,
    ) -> Result<(LossParts, Vec<f64>)> {
        let pass = self.forward_window(w)?;
        let h = w.horizon();
        let base = anchor.unwrap_or(&pass.t_m_hat);
        if base.len() != h + 1 {
            return Err(Error::ShapeMismatch {
                expected: h + 1,
                got: base.len(),
            });
        }
        let targets = physics_targets(&base[..h], &pass.t_r_meas, self.theta())?;
        let parts = loss(
            &pass.predicted,
            &w.measured,
            &pass.t_m_hat,
            &targets,
            self.mode,
            self.config.physics_weight,
        )?;
        Ok((parts, pass.t_m_hat))
    }

    /// Window loss and its gradient through the whole autoregressive chain,
    /// including every re-encoding. Physics targets are constants with
    /// respect to the network weights; `theta` keeps its gradient.
    pub fn loss_and_grad(&self, w: &TrainingWindow) -> Result<(LossParts, ForecasterGrads)> {
        let WindowPass {
            entries,
            enc_caches,
            pred_caches,
            predicted,
            t_m_hat,
            t_r_meas,
        } = self.forward_window(w)?;
        let d = self.config.window;
        let h = w.horizon();
        let (t_lo, t_hi) = ranges::ROOM_TEMP;
        let p_hi = ranges::POWER_W.1;
        // d norm_temp(temp_from_output(o)) / do and d norm_power(p_hi * o) / do
        let dtemp = (t_hi - t_lo) / 2.0 * 2.0 / (t_hi - t_lo);
        let dpower = p_hi * 2.0 / (ranges::POWER_W.1 - ranges::POWER_W.0);

        let physnet = self.mode == ForecasterMode::PhysNet;
        let weight = self.config.physics_weight;
        let theta = self.theta();
        let targets = physics_targets(&t_m_hat[..h], &t_r_meas, theta)?;
        let parts = loss(
            &predicted,
            &w.measured,
            &t_m_hat,
            &targets,
            self.mode,
            weight,
        )?;

        let mut grads = ForecasterGrads::zeros(self);
        let mut dz = vec![0.0; h + 1];
        if physnet {
            for k in 1..=h {
                let r = (t_m_hat[k] - targets[k - 1]) / LATENT_SPAN;
                dz[k] += weight * 2.0 * r;
                // target = m + theta (T_r - m), so d target / d theta = T_r - m
                let dtarget = -weight * 2.0 * r / LATENT_SPAN;
                grads.theta_raw +=
                    dtarget * (t_r_meas[k - 1] - t_m_hat[k - 1]) * sigmoid(self.theta_raw);
            }
        }
        let mut dentries = vec![0.0; entries.len()];
        for k in (0..=h).rev() {
            if k < h {
                let meas = &w.measured[k];
                let e = 2 * (d + k);
                let d_o0 = 2.0 * (norm_temp(predicted[k].t_r) - norm_temp(meas.t_r)) * dtemp
                    + dentries[e] * dtemp;
                // the upper power clip passes its gradient straight through
                let d_o1 =
                    2.0 * (predicted[k].u_phys - meas.u_phys) / p_hi + dentries[e + 1] * dpower;
                let din = self.predictor.backward_accumulate(
                    &pred_caches[k],
                    &[d_o0, d_o1],
                    &mut grads.predictor,
                )?;
                dz[k] += din[0];
                // current sample of step k is the last entry of window k
                let c = 2 * (d + k - 1);
                dentries[c] += din[1];
                dentries[c + 1] += din[2];
            }
            let dwin =
                self.encoder
                    .backward_accumulate(&enc_caches[k], &[dz[k]], &mut grads.encoder)?;
            for (i, g) in dwin.iter().enumerate() {
                dentries[2 * k + i] += g;
            }
        }
        Ok((parts, grads))
    }

    /// Mean loss and gradient over a batch of windows.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[&TrainingWindow],
    ) -> Result<(LossParts, ForecasterGrads)> {
        let per: Vec<Result<(LossParts, ForecasterGrads)>> =
            parallel::map(batch, |w| self.loss_and_grad(w));
        let mut total = LossParts::default();
        let mut grads = ForecasterGrads::zeros(self);
        for r in per {
            let (l, g) = r?;
            total.add(&l);
            grads.add(&g);
        }
        let s = 1.0 / batch.len().max(1) as f64;
        total.scale(s);
        grads.scale(s);
        Ok((total, grads))
    }

    /// Trains a fresh model for `epochs` passes with shuffled mini-batches.
    pub fn train(
        mode: ForecasterMode,
        config: ForecasterConfig,
        dataset: &[TrainingWindow],
        seed: u64,
    ) -> Result<(Self, TrainReport)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::with_rng(mode, config, &mut rng)?;
        let report = model.fit(dataset, config.epochs, &mut rng)?;
        Ok((model, report))
    }

    /// Continues training this model (fresh optimizer state).
    pub fn fine_tune(
        &mut self,
        dataset: &[TrainingWindow],
        epochs: usize,
        seed: u64,
    ) -> Result<TrainReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.fit(dataset, epochs, &mut rng)
    }

    fn fit(
        &mut self,
        dataset: &[TrainingWindow],
        epochs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainReport> {
        if dataset.is_empty() {
            return Err(Error::input("training dataset is empty"));
        }
        let h = dataset[0].horizon();
        let mut enc_opt = Adam::new(self.encoder.n_params(), self.config.adam);
        let mut pred_opt = Adam::new(self.predictor.n_params(), self.config.adam);
        let mut theta_opt = Adam::new(1, self.config.adam);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut report = TrainReport::default();
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut epoch = LossParts::default();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&TrainingWindow> = chunk.iter().map(|&i| &dataset[i]).collect();
                let (l, g) = self.batch_loss_and_grad(&batch)?;
                let mut l = l;
                l.scale(chunk.len() as f64);
                epoch.add(&l);
                enc_opt.step(self.encoder.params_mut(), &g.encoder)?;
                pred_opt.step(self.predictor.params_mut(), &g.predictor)?;
                if self.mode == ForecasterMode::PhysNet {
                    let mut raw = [self.theta_raw];
                    theta_opt.step(&mut raw, &[g.theta_raw])?;
                    self.theta_raw = raw[0];
                    self.clip_theta();
                }
            }
            epoch.scale(1.0 / dataset.len() as f64);
            if !epoch.total.is_finite() {
                return Err(Error::Numerical("training loss diverged".into()));
            }
            report.epochs.push(epoch);
        }
        self.trained_horizon = h;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> ForecasterCheckpoint {
        ForecasterCheckpoint {
            format: FORECASTER_FORMAT.into(),
            version: crate::nn::CHECKPOINT_VERSION,
            mode: self.mode,
            window: self.config.window,
            horizon: self.trained_horizon,
            step_h: self.config.step_h,
            theta: self.theta(),
            theta_raw: self.theta_raw,
            physics_weight: self.config.physics_weight,
            ranges: NormalizationRanges::default(),
            config: self.config,
            encoder: self.encoder.to_checkpoint(),
            predictor: self.predictor.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ForecasterCheckpoint) -> Result<Self> {
        if ck.format != FORECASTER_FORMAT || ck.version != crate::nn::CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported forecaster checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.ranges != NormalizationRanges::default() {
            return Err(Error::Checkpoint(
                "checkpoint uses different normalization ranges".into(),
            ));
        }
        let encoder = Network::from_checkpoint(&ck.encoder)?;
        let predictor = Network::from_checkpoint(&ck.predictor)?;
        if encoder.in_dim() != 2 * ck.window || encoder.out_dim() != 1 {
            return Err(Error::Checkpoint(
                "encoder shape does not match window".into(),
            ));
        }
        if predictor.in_dim() != PREDICTOR_INPUTS || predictor.out_dim() != 2 {
            return Err(Error::Checkpoint("predictor shape mismatch".into()));
        }
        Ok(Self {
            mode: ck.mode,
            config: ck.config,
            encoder,
            predictor,
            theta_raw: ck.theta_raw,
            trained_horizon: ck.horizon,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: ForecasterCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

pub const FORECASTER_FORMAT: &str = "heatplan-physnet";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRanges {
    pub room_temp: (f64, f64),
    pub power_w: (f64, f64),
    pub outdoor_temp: (f64, f64),
    pub latent_center: f64,
    pub latent_span: f64,
}

impl Default for NormalizationRanges {
    fn default() -> Self {
        Self {
            room_temp: ranges::ROOM_TEMP,
            power_w: ranges::POWER_W,
            outdoor_temp: ranges::OUTDOOR_TEMP,
            latent_center: LATENT_CENTER,
            latent_span: LATENT_SPAN,
        }
    }
}

/// Forecaster checkpoint: a header followed by two network checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterCheckpoint {
    pub format: String,
    pub version: u32,
    pub mode: ForecasterMode,
    pub window: usize,
    pub horizon: usize,
    pub step_h: f64,
    pub theta: f64,
    pub theta_raw: f64,
    pub physics_weight: f64,
    pub ranges: NormalizationRanges,
    pub config: ForecasterConfig,
    pub encoder: NetCheckpoint,
    pub predictor: NetCheckpoint,
}
