//! Oracles shared by the property suites and the acceptance run.

#![allow(dead_code)]

use heatplan::env::BackupBand;
use heatplan::error::Result;
use heatplan::nn::{cross_entropy, LayerSpec, Network};
use heatplan::physnet::{
    BuildingSample, Forecaster, ForecasterConfig, ForecasterMode, TrainingWindow,
};
use heatplan::planner::{
    prior_network, search, Fomdp, HeatPumpSim, PriorConfig, PriorSource, SearchConfig, SearchMode,
    SimSettings,
};
use heatplan::reward::{ComfortWeights, RewardNormalizer};
use heatplan::scenario::ForecastStep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Worst elementwise relative error and its index.
pub fn worst(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut w = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(*a, *n);
        if e > w.0 {
            w = (e, i);
        }
    }
    w
}

pub fn assert_close(name: &str, analytic: &[f64], numeric: &[f64]) {
    let (e, i) = worst(analytic, numeric);
    assert!(
        e < FD_TOL,
        "{name}: worst relative error {e:.3e} at {i} (analytic {}, numeric {})",
        analytic[i],
        numeric[i]
    );
}

/// Analytic and numeric gradients of a random network under a squared error
/// (`"mse"`) or cross-entropy (`"ce"`) loss: parameters, then inputs.
pub fn network_gradients(
    specs: Vec<LayerSpec>,
    seed: u64,
    loss_kind: &str,
) -> [(Vec<f64>, Vec<f64>); 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(specs, &mut rng).unwrap();
    for b in 0..net.specs().len() {
        for v in net.bias_mut(b) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let x: Vec<f64> = (0..net.in_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let out_dim = net.out_dim();
    let target: Vec<f64> = {
        let raw: Vec<f64> = (0..out_dim).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let loss = |n: &Network, x: &[f64]| -> f64 {
        let y = n.predict(x).unwrap();
        match loss_kind {
            "ce" => cross_entropy(&y, &target).unwrap().0,
            _ => y
                .iter()
                .zip(&target)
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum(),
        }
    };
    let (y, cache) = net.forward(&x).unwrap();
    let upstream: Vec<f64> = match loss_kind {
        "ce" => cross_entropy(&y, &target).unwrap().1,
        _ => y.iter().zip(&target).map(|(a, b)| a - b).collect(),
    };
    let (grads, dx) = net.backward(&cache, &upstream).unwrap();

    let numeric: Vec<f64> = (0..net.n_params())
        .map(|i| {
            let orig = net.params()[i];
            central(orig, |v| {
                let mut n = net.clone();
                n.params_mut()[i] = v;
                loss(&n, &x)
            })
        })
        .collect();
    let numeric_x: Vec<f64> = (0..x.len())
        .map(|i| {
            central(x[i], |v| {
                let mut xx = x.clone();
                xx[i] = v;
                loss(&net, &xx)
            })
        })
        .collect();
    [(grads, numeric), (dx, numeric_x)]
}

pub fn random_window(rng: &mut ChaCha8Rng, d: usize, h: usize) -> TrainingWindow {
    let sample = |rng: &mut ChaCha8Rng| BuildingSample {
        t_r: rng.random_range(18.0..23.0),
        u_phys: rng.random_range(0.0..3000.0),
    };
    TrainingWindow {
        history: (0..d).map(|_| sample(rng)).collect(),
        forecast: (0..h)
            .map(|k| ForecastStep {
                tau: 0.5 * k as f64,
                t_a: rng.random_range(-5.0..10.0),
                lambda: 0.2,
                t_set: 21.0,
            })
            .collect(),
        actions: (0..h)
            .map(|_| [0.0, 0.25, 0.5, 0.75, 1.0][rng.random_range(0..5)])
            .collect(),
        measured: (0..h).map(|_| sample(rng)).collect(),
    }
}

/// Window-loss gradients of a small forecaster: encoder, predictor and
/// theta, each as (analytic, numeric). Physics targets are held at the
/// unperturbed latent estimates, matching the detached targets in training.
pub fn forecaster_gradients(
    mode: ForecasterMode,
    seed: u64,
) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let cfg = ForecasterConfig {
        window: 6,
        encoder_hidden: 8,
        predictor_hidden: 10,
        ..Default::default()
    };
    let mut model = Forecaster::new(mode, cfg, seed).unwrap();
    model.set_theta(0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let w = random_window(&mut rng, 6, 4);
    let (parts, g) = model.loss_and_grad(&w).unwrap();
    let (check, anchor) = model.anchored_loss(&w, None).unwrap();
    assert_eq!(check, parts);
    let total = |m: &Forecaster| m.anchored_loss(&w, Some(&anchor)).unwrap().0.total;

    let enc: Vec<f64> = (0..model.encoder.n_params())
        .map(|i| {
            central(model.encoder.params()[i], |v| {
                let mut m = model.clone();
                m.encoder.params_mut()[i] = v;
                total(&m)
            })
        })
        .collect();
    let pred: Vec<f64> = (0..model.predictor.n_params())
        .map(|i| {
            central(model.predictor.params()[i], |v| {
                let mut m = model.clone();
                m.predictor.params_mut()[i] = v;
                total(&m)
            })
        })
        .collect();
    let theta = central(model.theta_raw(), |v| {
        let mut m = model.clone();
        m.set_theta_raw(v);
        total(&m)
    });
    vec![
        ("encoder through rollout", g.encoder, enc),
        ("predictor through rollout", g.predictor, pred),
        ("theta", vec![g.theta_raw], vec![theta]),
    ]
}

/// Complete `actions`-ary tree of depth `depth` with a fixed reward on every
/// edge. Node ids: root 0, child of `id` via `a` is `id * actions + a + 1`.
pub struct Toy {
    pub actions: usize,
    pub depth: usize,
    pub rewards: Vec<f64>,
}

impl Toy {
    pub fn random(actions: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: usize = (0..=depth).map(|k| actions.pow(k as u32)).sum();
        Self {
            actions,
            depth,
            rewards: (0..nodes).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }

    fn child(&self, id: usize, a: usize) -> usize {
        id * self.actions + a + 1
    }

    pub fn leaves(&self) -> usize {
        self.actions.pow(self.depth as u32)
    }

    /// Best discounted return from `id` at `depth`, by enumeration.
    pub fn value(&self, id: usize, depth: usize, gamma: f64) -> f64 {
        if depth == self.depth {
            return 0.0;
        }
        (0..self.actions)
            .map(|a| self.action_value(id, depth, a, gamma))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn action_value(&self, id: usize, depth: usize, a: usize, gamma: f64) -> f64 {
        let c = self.child(id, a);
        self.rewards[c] + gamma * self.value(c, depth + 1, gamma)
    }

    pub fn best_root_action(&self, gamma: f64) -> usize {
        let v: Vec<f64> = (0..self.actions)
            .map(|a| self.action_value(0, 0, a, gamma))
            .collect();
        (0..self.actions).fold(0, |b, a| if v[a] > v[b] { a } else { b })
    }
}

impl Fomdp for Toy {
    type State = usize;

    fn n_actions(&self) -> usize {
        self.actions
    }

    fn horizon(&self) -> usize {
        self.depth
    }

    fn allowed_actions(&self, _: &usize, _: usize) -> Vec<usize> {
        (0..self.actions).collect()
    }

    fn transition(&self, s: &usize, _: usize, a: usize) -> Result<(usize, f64)> {
        let c = self.child(*s, a);
        Ok((c, self.rewards[c]))
    }
}

/// Searches 100 random instances with `budget_per_leaf` simulations per leaf
/// and counts agreements with the enumerated optimum.
pub fn oracle_agreement(actions: usize, depth: usize, budget_per_leaf: usize) -> usize {
    let gamma = 0.97;
    (0..100)
        .filter(|&seed| {
            let toy = Toy::random(actions, depth, seed);
            let cfg = SearchConfig {
                n_simulations: budget_per_leaf * toy.leaves(),
                ..SearchConfig::vanilla(1)
            };
            let out = search(&toy, 0, &cfg, SearchMode::Vanilla, PriorSource::Ones).unwrap();
            out.action == toy.best_root_action(gamma)
        })
        .count()
}

pub const SETPOINT: f64 = 21.0;

pub fn settings(horizon: usize) -> SimSettings {
    SimSettings {
        normalizer: RewardNormalizer::new(-1.6).unwrap(),
        weights: ComfortWeights::default(),
        band: BackupBand::default(),
        step_h: 0.5,
        horizon,
    }
}

/// Untrained forecaster, random history around a random level and a random
/// exogenous forecast.
pub fn random_case(
    seed: u64,
    horizon: usize,
) -> (Forecaster, Vec<BuildingSample>, Vec<ForecastStep>) {
    let model =
        Forecaster::new(ForecasterMode::PhysNet, ForecasterConfig::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let level = rng.random_range(18.5..23.5);
    let history = (0..24)
        .map(|_| BuildingSample {
            t_r: level + rng.random_range(-0.3..0.3),
            u_phys: rng.random_range(0.0..4000.0),
        })
        .collect();
    let start = rng.random_range(0..48) as f64 * 0.5;
    let forecast = (0..horizon)
        .map(|k| ForecastStep {
            tau: (start + 0.5 * k as f64) % 24.0,
            t_a: rng.random_range(-5.0..12.0),
            lambda: if rng.random_bool(0.5) { 0.1 } else { 0.3 },
            t_set: SETPOINT,
        })
        .collect();
    (model, history, forecast)
}

/// Runs `n` random searches over the heat-pump simulator, alternating vanilla
/// and network-prior AlphaZero, and checks every structural property of the
/// resulting trees. Returns how many expanded nodes were forced by the
/// backup band.
pub fn random_tree_properties(n: u64) -> std::result::Result<usize, String> {
    let band = BackupBand::default();
    let mut forced_seen = 0;
    for seed in 0..n {
        let horizon = 4 + (seed as usize % 5);
        let (model, history, forecast) = random_case(seed, horizon);
        let sim = HeatPumpSim::new(&model, &forecast, &settings(horizon));
        let root = sim
            .root(&history, forecast[0].tau)
            .map_err(|e| e.to_string())?;
        let mode = if seed % 2 == 0 {
            SearchMode::Vanilla
        } else {
            SearchMode::AlphaZero
        };
        let prior = prior_network(
            &PriorConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        let source = match mode {
            SearchMode::Vanilla => PriorSource::Ones,
            SearchMode::AlphaZero => PriorSource::Network(&prior),
        };
        let budget = 20 + 37 * seed as usize;
        let cfg = SearchConfig {
            n_simulations: budget,
            ..SearchConfig::vanilla(1)
        };
        let out = search(&sim, root, &cfg, mode, source).map_err(|e| e.to_string())?;
        let tree = &out.tree;
        tree.check_invariants()
            .map_err(|e| format!("search {seed}: {e}"))?;
        if tree.root().n != 1 + budget as u64 {
            return Err(format!(
                "search {seed}: root visited {} times for budget {budget}",
                tree.root().n
            ));
        }
        for node in &tree.nodes {
            if let Some(e) = node.edges.iter().find(|e| !(0.0..=1.0).contains(&e.q)) {
                return Err(format!("search {seed}: Q {} outside [0, 1]", e.q));
            }
            if !node.expanded {
                continue;
            }
            let allowed = HeatPumpSim::allowed_for(node.state.t_r, SETPOINT, &band);
            let actions: Vec<usize> = node.edges.iter().map(|e| e.action).collect();
            if actions != allowed {
                return Err(format!(
                    "search {seed}: edges {actions:?}, allowed {allowed:?}"
                ));
            }
            if allowed.len() == 1 {
                forced_seen += 1;
            }
            if mode == SearchMode::AlphaZero {
                let s: f64 = node.edges.iter().map(|e| e.prior).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(format!("search {seed}: priors sum to {s}"));
                }
            }
        }
    }
    Ok(forced_seen)
}

pub fn sample(t_r: f64, u_phys: f64) -> BuildingSample {
    BuildingSample { t_r, u_phys }
}

pub fn step(k: usize, t_a: f64) -> ForecastStep {
    ForecastStep {
        tau: (8.0 + 0.5 * k as f64) % 24.0,
        t_a,
        lambda: 0.2,
        t_set: 21.0,
    }
}

/// Smooth periodic windows with a rotating action pattern.
pub fn synthetic_windows(n: usize, d: usize, h: usize) -> Vec<TrainingWindow> {
    (0..n)
        .map(|i| {
            let phase = i as f64 * 0.37;
            let t = |k: usize| 20.5 + 0.8 * ((k as f64 + phase) * 0.3).sin();
            let u = |k: usize| 1500.0 + 1000.0 * ((k as f64 + phase) * 0.2).cos();
            TrainingWindow {
                history: (0..d).map(|k| sample(t(k), u(k))).collect(),
                forecast: (0..h).map(|k| step(k, 5.0 + phase)).collect(),
                actions: (0..h)
                    .map(|k| [0.0, 0.25, 0.5, 0.75, 1.0][(i + k) % 5])
                    .collect(),
                measured: (0..h).map(|k| sample(t(d + k), u(d + k))).collect(),
            }
        })
        .collect()
}
