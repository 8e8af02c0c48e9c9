//! Price, weather and setpoint traces, plus the cumulative forecast-noise model.
//!
//! Every generator is a pure function of its inputs and seed. The
//! environment reads only [`ScenarioTraces::env_inputs`] (true outdoor
//! temperature); the planner reads only [`ScenarioTraces::forecast`] (noisy
//! outdoor temperature).

use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{ranges, TimeGrid};
use crate::error::{Error, Result};

/// Aligned per-step exogenous series on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTraces {
    pub grid: TimeGrid,
    /// €/kWh
    pub lambda: Vec<f64>,
    pub t_a_true: Vec<f64>,
    pub t_a_forecast: Vec<f64>,
    pub t_set: Vec<f64>,
    /// Global horizontal irradiance, W/m².
    pub solar: Vec<f64>,
    /// Internal heat gains, W.
    pub internal: Vec<f64>,
}

/// Exogenous inputs the building simulator consumes at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvInputs {
    pub t_a: f64,
    pub solar: f64,
    pub internal: f64,
}

/// One step of the exogenous forecast handed to the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub tau: f64,
    pub t_a: f64,
    pub lambda: f64,
    pub t_set: f64,
}

impl ScenarioTraces {
    pub fn len(&self) -> usize {
        self.grid.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.grid.n_steps == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_steps;
        for (name, s) in [
            ("lambda", &self.lambda),
            ("t_a_true", &self.t_a_true),
            ("t_a_forecast", &self.t_a_forecast),
            ("t_set", &self.t_set),
            ("solar", &self.solar),
            ("internal", &self.internal),
        ] {
            if s.len() != n {
                return Err(Error::Trace(format!(
                    "{name} has {} entries, grid has {n}",
                    s.len()
                )));
            }
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::Trace(format!("{name}[{i}] is not finite")));
            }
        }
        Ok(())
    }

    pub fn env_inputs(&self, t: usize) -> EnvInputs {
        EnvInputs {
            t_a: self.t_a_true[t],
            solar: self.solar[t],
            internal: self.internal[t],
        }
    }

    /// Forecast for steps `t0 .. t0 + h`, truncated at the end of the trace.
    pub fn forecast(&self, t0: usize, h: usize) -> Vec<ForecastStep> {
        let end = (t0 + h).min(self.len());
        (t0..end)
            .map(|t| ForecastStep {
                tau: self.grid.tau(t),
                t_a: self.t_a_forecast[t],
                lambda: self.lambda[t],
                t_set: self.t_set[t],
            })
            .collect()
    }

    /// Writes all series as CSV with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "step",
            "tau",
            "lambda",
            "t_a_true",
            "t_a_forecast",
            "t_set",
            "solar",
            "internal",
        ])?;
        for t in 0..self.len() {
            w.write_record(&[
                t.to_string(),
                self.grid.tau(t).to_string(),
                self.lambda[t].to_string(),
                self.t_a_true[t].to_string(),
                self.t_a_forecast[t].to_string(),
                self.t_set[t].to_string(),
                self.solar[t].to_string(),
                self.internal[t].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Square wave alternating `low` and `high` every half period. The first half
/// of each period (after `phase_h`) is low.
pub fn square_wave_price(
    grid: &TimeGrid,
    low: f64,
    high: f64,
    period_h: f64,
    phase_h: f64,
) -> Result<Vec<f64>> {
    if !(period_h > 0.0) {
        return Err(Error::config(format!(
            "price period must be > 0, got {period_h}"
        )));
    }
    if low > high {
        return Err(Error::config(format!(
            "price low {low} exceeds high {high}"
        )));
    }
    Ok((0..grid.n_steps)
        .map(|t| {
            let h = grid.start_hour + t as f64 * grid.step + phase_h;
            if h.rem_euclid(period_h) < period_h / 2.0 {
                low
            } else {
                high
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherSpec {
    pub mean: f64,
    pub amplitude: f64,
    pub coldest_hour: f64,
    /// Std of the per-step white noise, °C.
    pub noise_std: f64,
    /// Std of the day-to-day random walk of the daily mean, °C.
    pub daily_drift_std: f64,
}

impl Default for WeatherSpec {
    fn default() -> Self {
        Self {
            mean: 5.0,
            amplitude: 4.0,
            coldest_hour: 5.0,
            noise_std: 0.3,
            daily_drift_std: 1.0,
        }
    }
}

/// Daily sinusoid with its minimum at `coldest_hour`, plus seeded noise,
/// clipped to the outdoor-temperature range.
pub fn synth_weather(grid: &TimeGrid, spec: &WeatherSpec, seed: u64) -> Result<Vec<f64>> {
    if spec.amplitude < 0.0 || spec.noise_std < 0.0 || spec.daily_drift_std < 0.0 {
        return Err(Error::config(
            "weather amplitude and noise levels must be >= 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = (grid.hours() / 24.0).ceil() as usize + 2;
    // day-level offsets, interpolated linearly between day midpoints
    let mut offsets = Vec::with_capacity(days);
    let mut level = 0.0;
    for _ in 0..days {
        offsets.push(level);
        let step: f64 = rng.sample(StandardNormal);
        level = 0.8 * level + spec.daily_drift_std * step;
    }
    let (lo, hi) = ranges::OUTDOOR_TEMP;
    Ok((0..grid.n_steps)
        .map(|t| {
            let tau = grid.tau(t);
            let elapsed = grid.start_hour + t as f64 * grid.step;
            let pos = (elapsed / 24.0 - 0.5).max(0.0);
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            let drift = offsets[i] * (1.0 - frac) + offsets[i + 1] * frac;
            let base = spec.mean + drift
                - spec.amplitude * (std::f64::consts::TAU * (tau - spec.coldest_hour) / 24.0).cos();
            let eta: f64 = rng.sample(StandardNormal);
            (base + spec.noise_std * eta).clamp(lo, hi)
        })
        .collect())
}

/// Forecast-noise magnitude and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// °C per step.
    pub sigma: f64,
    pub seed: u64,
}

/// Adds a random-walk error to `truth`: each step draws a fair sign and a
/// half-normal magnitude scaled by `sigma`, and the error accumulates with
/// lead time. The first entry is exact.
pub fn cumulative_noise(truth: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>> {
    if !(spec.sigma >= 0.0) {
        return Err(Error::config(format!(
            "noise sigma must be >= 0, got {}",
            spec.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut err = 0.0;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            if t > 0 {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let eta: f64 = StandardNormal.sample(&mut rng);
                err += sign * eta.abs() * spec.sigma;
            }
            v + err
        })
        .collect())
}

/// Rectangular day/night setpoint: `day_temp` on `[day_start_h, day_end_h)`.
pub fn setpoint_schedule(
    grid: &TimeGrid,
    day_temp: f64,
    night_temp: f64,
    day_start_h: f64,
    day_end_h: f64,
) -> Result<Vec<f64>> {
    let (lo, hi) = ranges::SETPOINT;
    for t in [day_temp, night_temp] {
        if !(lo..=hi).contains(&t) {
            return Err(Error::config(format!("setpoint {t} outside [{lo}, {hi}]")));
        }
    }
    Ok((0..grid.n_steps)
        .map(|t| {
            let tau = grid.tau(t);
            if tau >= day_start_h && tau < day_end_h {
                day_temp
            } else {
                night_temp
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainsSpec {
    /// Peak irradiance, W/m².
    pub solar_peak: f64,
    pub sunrise_h: f64,
    pub sunset_h: f64,
    pub internal_base: f64,
    pub evening_bump: f64,
    pub evening_start_h: f64,
    pub evening_end_h: f64,
}

impl Default for GainsSpec {
    fn default() -> Self {
        Self {
            solar_peak: 250.0,
            sunrise_h: 8.0,
            sunset_h: 17.0,
            internal_base: 300.0,
            evening_bump: 400.0,
            evening_start_h: 18.0,
            evening_end_h: 22.0,
        }
    }
}

/// Daytime half-sine irradiance bell.
pub fn solar_schedule(grid: &TimeGrid, spec: &GainsSpec) -> Vec<f64> {
    let span = spec.sunset_h - spec.sunrise_h;
    (0..grid.n_steps)
        .map(|t| {
            let x = (grid.tau(t) - spec.sunrise_h) / span;
            if (0.0..=1.0).contains(&x) {
                spec.solar_peak * (std::f64::consts::PI * x).sin()
            } else {
                0.0
            }
        })
        .collect()
}

/// Constant internal gains with an evening bump.
pub fn internal_gains_schedule(grid: &TimeGrid, spec: &GainsSpec) -> Vec<f64> {
    (0..grid.n_steps)
        .map(|t| {
            let tau = grid.tau(t);
            if tau >= spec.evening_start_h && tau < spec.evening_end_h {
                spec.internal_base + spec.evening_bump
            } else {
                spec.internal_base
            }
        })
        .collect()
}

/// Column names to read from a price/weather CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub value: String,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a `(timestamp, value)` CSV onto `grid`.
///
/// Rows are sorted by timestamp. The spacing must be constant and an integer
/// multiple of the grid step; each value is repeated to fill the finer grid
/// (hourly prices over half-hour steps appear twice). The first timestamp
/// must fall on the grid's start hour, and the file must cover the whole grid.
pub fn load_csv_trace(path: &Path, columns: &ColumnMap, grid: &TimeGrid) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    read_trace(&mut rdr, columns, grid)
}

pub(crate) fn read_trace<R: std::io::Read>(
    rdr: &mut csv::Reader<R>,
    columns: &ColumnMap,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Trace(format!("missing column {name:?}")))
    };
    let ts_col = col(&columns.timestamp)?;
    let val_col = col(&columns.value)?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ts_raw = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(ts_raw)
            .ok_or_else(|| Error::Trace(format!("row {}: bad timestamp {ts_raw:?}", i + 1)))?;
        let raw = rec.get(val_col).unwrap_or("");
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Trace(format!("row {}: non-numeric value {raw:?}", i + 1)))?;
        if !v.is_finite() {
            return Err(Error::Trace(format!("row {}: non-finite value", i + 1)));
        }
        rows.push((ts, v));
    }
    if rows.is_empty() {
        return Err(Error::Trace("trace file has no rows".into()));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Trace(format!("duplicate timestamp {}", w[0].0)));
    }

    let step_s = (grid.step * 3600.0).round() as i64;
    let spacing_s = if rows.len() > 1 {
        (rows[1].0 - rows[0].0).num_seconds()
    } else {
        step_s
    };
    if spacing_s < step_s || spacing_s % step_s != 0 {
        return Err(Error::Trace(format!(
            "row spacing {spacing_s}s is not a whole multiple of the {step_s}s grid step"
        )));
    }
    if let Some(w) = rows
        .windows(2)
        .find(|w| (w[1].0 - w[0].0).num_seconds() != spacing_s)
    {
        return Err(Error::Trace(format!(
            "gap or irregular spacing after {}",
            w[0].0
        )));
    }
    let first = rows[0].0;
    let first_hour =
        first.hour() as f64 + first.minute() as f64 / 60.0 + first.second() as f64 / 3600.0;
    if (first_hour - grid.start_hour).abs() > 1e-9 {
        return Err(Error::Trace(format!(
            "first row at hour {first_hour} does not match grid start {}",
            grid.start_hour
        )));
    }

    let repeat = (spacing_s / step_s) as usize;
    let values: Vec<f64> = rows
        .iter()
        .flat_map(|&(_, v)| std::iter::repeat_n(v, repeat))
        .take(grid.n_steps)
        .collect();
    if values.len() < grid.n_steps {
        return Err(Error::Trace(format!(
            "trace covers {} steps, grid needs {}",
            values.len(),
            grid.n_steps
        )));
    }
    Ok(values)
}

/// How the price series is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriceSource {
    SquareWave {
        low: f64,
        high: f64,
        period_h: f64,
        phase_h: f64,
    },
    Csv {
        path: String,
        columns: ColumnMap,
    },
}

impl Default for PriceSource {
    fn default() -> Self {
        PriceSource::SquareWave {
            low: 0.10,
            high: 0.30,
            period_h: 12.0,
            phase_h: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetpointSpec {
    pub day_temp: f64,
    pub night_temp: f64,
    pub day_start_h: f64,
    pub day_end_h: f64,
}

impl Default for SetpointSpec {
    fn default() -> Self {
        Self {
            day_temp: 21.0,
            night_temp: 19.0,
            day_start_h: 7.0,
            day_end_h: 22.0,
        }
    }
}

/// Everything needed to regenerate a scenario bit-exactly from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub step_h: f64,
    pub price: PriceSource,
    pub weather: WeatherSpec,
    /// Forecast noise per step, °C.
    pub forecast_sigma: f64,
    pub setpoint: SetpointSpec,
    pub gains: GainsSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            step_h: 0.5,
            price: PriceSource::default(),
            weather: WeatherSpec::default(),
            forecast_sigma: 0.15,
            setpoint: SetpointSpec::default(),
            gains: GainsSpec::default(),
        }
    }
}

impl ScenarioSpec {
    /// Builds `days` whole days of traces starting at midnight.
    ///
    /// The outdoor-temperature forecast is issued once per day at midnight,
    /// so its error restarts from zero at each day boundary and grows with
    /// lead time within the day.
    pub fn generate(&self, days: usize, seed: u64) -> Result<ScenarioTraces> {
        let steps_per_day = (24.0 / self.step_h).round() as usize;
        let grid = TimeGrid::new(0.0, self.step_h, days * steps_per_day)?;
        let lambda = match &self.price {
            PriceSource::SquareWave {
                low,
                high,
                period_h,
                phase_h,
            } => square_wave_price(&grid, *low, *high, *period_h, *phase_h)?,
            PriceSource::Csv { path, columns } => load_csv_trace(Path::new(path), columns, &grid)?,
        };
        let weather_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
        let t_a_true = synth_weather(&grid, &self.weather, weather_seed)?;
        let mut t_a_forecast = Vec::with_capacity(grid.n_steps);
        for (day, chunk) in t_a_true.chunks(steps_per_day).enumerate() {
            let spec = NoiseSpec {
                sigma: self.forecast_sigma,
                seed: weather_seed.wrapping_add(1000 + day as u64),
            };
            t_a_forecast.extend(cumulative_noise(chunk, &spec)?);
        }
        let sp = &self.setpoint;
        let traces = ScenarioTraces {
            grid,
            lambda,
            t_a_true,
            t_a_forecast,
            t_set: setpoint_schedule(
                &grid,
                sp.day_temp,
                sp.night_temp,
                sp.day_start_h,
                sp.day_end_h,
            )?,
            solar: solar_schedule(&grid, &self.gains),
            internal: internal_gains_schedule(&grid, &self.gains),
        };
        traces.validate()?;
        Ok(traces)
    }
}
