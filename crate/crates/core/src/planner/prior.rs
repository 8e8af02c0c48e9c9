//! Prior policy network: samples from vanilla searches along simulated
//! trajectories and cross-entropy training on their root visit shares.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heatpump::{HeatPumpSim, SimSettings};
use super::{search, Fomdp, PriorSource, SearchConfig, SearchMode};
use crate::domain::{ranges, scale_symmetric, time_features, N_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Activation, Adam, AdamConfig, LayerSpec, Network};
use crate::parallel;
use crate::physnet::{BuildingSample, Forecaster};
use crate::scenario::ForecastStep;

pub const PRIOR_FEATURES: usize = 7;

/// Normalized prior input: `(sin tau, cos tau, T_r, T_m, T_a, price, T_set)`.
pub fn prior_features(
    tau: f64,
    t_r: f64,
    t_m: f64,
    t_a: f64,
    lambda: f64,
    t_set: f64,
) -> [f64; PRIOR_FEATURES] {
    let (s, c) = time_features(tau);
    [
        s,
        c,
        scale_symmetric(t_r, ranges::ROOM_TEMP),
        scale_symmetric(t_m, ranges::ROOM_TEMP),
        scale_symmetric(t_a, ranges::OUTDOOR_TEMP),
        scale_symmetric(lambda, ranges::PRICE),
        scale_symmetric(t_set, ranges::SETPOINT),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

/// Starting point of one simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEpisode {
    pub history: Vec<BuildingSample>,
    /// Exogenous inputs from the first decision onward; must cover
    /// `steps` decisions (later decisions see a shorter horizon).
    pub exo: Vec<ForecastStep>,
    pub steps: usize,
}

/// Runs vanilla search at every step of each episode, advancing the
/// simulated state with the chosen action, and records the root features and
/// visit distribution of every decision.
pub fn collect_prior_samples(
    model: &Forecaster,
    episodes: &[PriorEpisode],
    settings: &SimSettings,
    config: &SearchConfig,
) -> Result<Vec<PriorSample>> {
    let per: Vec<Result<Vec<PriorSample>>> = parallel::map(episodes, |ep| {
        if ep.exo.len() < ep.steps {
            return Err(Error::input("episode inputs shorter than its step count"));
        }
        let mut out = Vec::with_capacity(ep.steps);
        let mut state = None;
        for t in 0..ep.steps {
            let sim = HeatPumpSim::new(model, &ep.exo[t..], settings);
            let mut root = match state.take() {
                None => sim.root(&ep.history, ep.exo[0].tau)?,
                Some(s) => s,
            };
            sim.prepare(&mut root, 0)?;
            let features = sim.prior_features(&root, 0)?;
            let res = search(&sim, root, config, SearchMode::Vanilla, PriorSource::Ones)?;
            out.push(PriorSample {
                features,
                target: res.visits.clone(),
            });
            let r = res.tree.root();
            let edge = r
                .edges
                .iter()
                .find(|e| e.action == res.action)
                .expect("chosen action has an edge");
            state = Some(res.tree.nodes[edge.child].state.clone());
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Fresh untrained prior network.
pub fn prior_network(config: &PriorConfig, rng: &mut ChaCha8Rng) -> Result<Network> {
    Network::new(
        vec![
            LayerSpec::new(PRIOR_FEATURES, config.hidden[0], Activation::Relu),
            LayerSpec::new(config.hidden[0], config.hidden[1], Activation::Relu),
            LayerSpec::new(config.hidden[1], N_ACTIONS, Activation::Softmax),
        ],
        rng,
    )
}

/// Trains the prior network with mini-batch cross-entropy. Returns the
/// network and the mean loss of each epoch.
pub fn train_prior(
    dataset: &[PriorSample],
    config: &PriorConfig,
    seed: u64,
) -> Result<(Network, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::input("prior dataset is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = prior_network(config, &mut rng)?;
    let mut opt = Adam::new(net.n_params(), config.adam);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = vec![0.0; net.n_params()];
            for &i in chunk {
                let s = &dataset[i];
                let (p, cache) = net.forward(&s.features)?;
                let (l, g) = cross_entropy(&p, &s.target)?;
                epoch += l;
                net.backward_accumulate(&cache, &g, &mut grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(net.params_mut(), &grads)?;
        }
        losses.push(epoch / dataset.len() as f64);
    }
    Ok((net, losses))
}
