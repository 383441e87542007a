//! MAE training with Adam, best-checkpoint retention, and HyperBand search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{nrmse, predict_dataset};
use crate::rnn::{backward_accumulate, forward, Mode, NetworkParams, MAX_LAYERS, MAX_UNITS};
use crate::timeseries::WindowedDataset;

/// Mean absolute error and its gradient with respect to each prediction.
pub fn mae_loss(preds: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch { expected: targets.len(), actual: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = preds.len() as f64;
    let loss = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::ShapeMismatch("Adam state, parameters and gradients differ".into()));
    }
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let tensors =
        params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.m.tensors_mut()).zip(state.v.tensors_mut());
    for (((theta, g), m), v) in tensors {
        for i in 0..theta.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batch_size: 32, learning_rate: 1e-3, adam: AdamConfig::default(), shuffle_seed: 0 }
    }
}

/// Parameters with the best monitored score seen during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub epoch: usize,
    pub monitored_score: f64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean absolute error of the train-mode predictions made during the epoch.
    pub train_loss: f64,
    /// Full-period NRMSE on the monitor set after the epoch.
    pub monitored_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Eval-mode train MAE and monitor score of the initial parameters.
    pub initial_train_mae: f64,
    pub initial_score: f64,
    /// Eval-mode train MAE of the parameters after the last epoch.
    pub final_train_mae: f64,
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, score)` each time the checkpoint was replaced, starting with epoch 0.
    pub saves: Vec<(usize, f64)>,
}

/// Deterministic 64-bit mixing of seeds and counters.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn eval_mae(params: &NetworkParams, data: &WindowedDataset) -> Result<f64> {
    let preds = predict_dataset(params, data)?;
    Ok(mae_loss(&preds, &data.targets())?.0)
}

/// Mini-batch training; the monitor set (the test set, by default) is
/// scored after every epoch and the best parameters are kept.
pub fn train(
    init: NetworkParams,
    train_set: &WindowedDataset,
    monitor_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    if train_set.is_empty() || monitor_set.is_empty() {
        return Err(Error::EmptySplit("training needs nonempty train and monitor sets"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if train_set.n_features() != init.n_features {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features, network expects {}",
            train_set.n_features(),
            init.n_features
        )));
    }
    let monitor_obs = monitor_set.targets();
    let score = |p: &NetworkParams| -> Result<f64> { nrmse(&predict_dataset(p, monitor_set)?, &monitor_obs) };

    let mut params = init;
    let initial_score = score(&params)?;
    let mut history = TrainHistory {
        initial_train_mae: eval_mae(&params, train_set)?,
        initial_score,
        final_train_mae: f64::NAN,
        epochs: Vec::with_capacity(cfg.epochs),
        saves: vec![(0, initial_score)],
    };
    let mut best = Checkpoint { params: params.clone(), epoch: 0, monitored_score: initial_score, config: cfg.clone() };
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let epoch_seed = mix_seed(cfg.shuffle_seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut abs_err = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut preds = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            for (k, &i) in batch.iter().enumerate() {
                let sample_seed = mix_seed(epoch_seed, (b * cfg.batch_size + k) as u64);
                let (p, cache) = forward(&params, &train_set.samples[i].input, Mode::Train, sample_seed)?;
                preds.push(p);
                caches.push(cache.expect("train mode returns a cache"));
            }
            let targets: Vec<f64> = batch.iter().map(|&i| train_set.samples[i].target).collect();
            let (loss, d_preds) = mae_loss(&preds, &targets)?;
            abs_err += loss * batch.len() as f64;
            grads.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
            for (cache, d) in caches.iter().zip(&d_preds) {
                backward_accumulate(&params, cache, *d, &mut grads)?;
            }
            adam_step(&mut adam, &mut params, &grads, cfg.learning_rate)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteActivation);
        }
        let monitored_score = score(&params)?;
        history.epochs.push(EpochRecord { epoch, train_loss: abs_err / train_set.len() as f64, monitored_score });
        if monitored_score < best.monitored_score {
            best.params = params.clone();
            best.epoch = epoch;
            best.monitored_score = monitored_score;
            history.saves.push((epoch, monitored_score));
        }
    }
    history.final_train_mae = eval_mae(&params, train_set)?;
    Ok((best, history))
}

/// How many configurations a bracket starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketSizing {
    /// `floor((s_max+1)/(s+1)) · η^s`.
    #[default]
    Floor,
    /// `ceil((s_max+1)/(s+1) · η^s)`.
    Ceil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_layers: usize,
    pub units: Vec<usize>,
    pub lr_min: f64,
    pub lr_max: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { max_layers: MAX_LAYERS, units: vec![16, 32, 64, 128, 256, 512], lr_min: 1e-4, lr_max: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBandConfig {
    /// Maximum epochs given to one configuration.
    pub max_resource: usize,
    pub eta: usize,
    pub space: SearchSpace,
    pub sizing: BracketSizing,
}

impl Default for HyperBandConfig {
    fn default() -> Self {
        Self { max_resource: 81, eta: 3, space: SearchSpace::default(), sizing: BracketSizing::Floor }
    }
}

impl HyperBandConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.space;
        if self.eta < 2 || self.max_resource < self.eta {
            return Err(Error::EmptySpace(format!(
                "need eta >= 2 and max_resource >= eta (eta {}, R {})",
                self.eta, self.max_resource
            )));
        }
        if !(1..=MAX_LAYERS).contains(&s.max_layers) {
            return Err(Error::EmptySpace(format!("max_layers {} outside 1..={MAX_LAYERS}", s.max_layers)));
        }
        if s.units.is_empty() || s.units.iter().any(|&u| !(1..=MAX_UNITS).contains(&u)) {
            return Err(Error::EmptySpace("units grid must be nonempty and within 1..=512".into()));
        }
        if !(s.lr_min > 0.0 && s.lr_min <= s.lr_max) {
            return Err(Error::EmptySpace(format!("learning rate range [{}, {}]", s.lr_min, s.lr_max)));
        }
        Ok(())
    }
}

/// One sampled hyperparameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ordinal: usize,
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
}

/// One successive-halving rung as executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rung {
    pub bracket: usize,
    pub rung: usize,
    pub configs: usize,
    pub resource: usize,
    /// Configurations promoted to the next rung; 0 on a bracket's last rung.
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub bracket: usize,
    pub rung: usize,
    pub candidate: Candidate,
    pub resource: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub best_score: f64,
    pub rungs: Vec<Rung>,
    pub evaluations: Vec<Evaluation>,
    pub total_epochs: usize,
}

fn floor_log(r: usize, eta: usize) -> usize {
    let mut s = 0;
    let mut p = eta;
    while p <= r {
        s += 1;
        p *= eta;
    }
    s
}

/// The analytic `(configs, epochs)` rungs of every bracket, from `s_max`
/// down to 0.
pub fn bracket_schedule(max_resource: usize, eta: usize, sizing: BracketSizing) -> Vec<Vec<(usize, usize)>> {
    let s_max = floor_log(max_resource, eta);
    (0..=s_max)
        .rev()
        .map(|s| {
            let eta_s = eta.pow(s as u32);
            let mut n = match sizing {
                BracketSizing::Floor => (s_max + 1) / (s + 1) * eta_s,
                BracketSizing::Ceil => ((s_max + 1) * eta_s).div_ceil(s + 1),
            };
            (0..=s)
                .map(|i| {
                    let r = (max_resource * eta.pow(i as u32) / eta_s).max(1);
                    let rung = (n, r);
                    n = (n / eta).max(1);
                    rung
                })
                .collect()
        })
        .collect()
}

/// Sum of `configs × epochs` over every rung of every bracket.
pub fn schedule_epochs(schedule: &[Vec<(usize, usize)>]) -> usize {
    schedule.iter().flatten().map(|(n, r)| n * r).sum()
}

fn sample_candidate(space: &SearchSpace, rng: &mut ChaCha8Rng, ordinal: usize) -> Candidate {
    let layers = rng.random_range(1..=space.max_layers);
    let layer_sizes = (0..layers).map(|_| space.units[rng.random_range(0..space.units.len())]).collect();
    let (lo, hi) = (space.lr_min.ln(), space.lr_max.ln());
    let learning_rate = if hi > lo { rng.random_range(lo..hi).exp() } else { space.lr_min };
    Candidate { ordinal, layer_sizes, learning_rate }
}

fn by_score(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    let key = |s: f64| if s.is_nan() { f64::INFINITY } else { s };
    key(a.0).total_cmp(&key(b.0)).then(a.1.cmp(&b.1))
}

/// HyperBand over `space`; lower objective scores are better. The objective
/// is called with a candidate and an epoch budget and must be deterministic.
pub fn hyperband_search<F>(cfg: &HyperBandConfig, mut objective: F, seed: u64) -> Result<SearchOutcome>
where
    F: FnMut(&Candidate, usize) -> Result<f64>,
{
    cfg.validate()?;
    let schedule = bracket_schedule(cfg.max_resource, cfg.eta, cfg.sizing);
    let s_max = schedule.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ordinal = 0;
    let mut rungs = Vec::new();
    let mut evaluations = Vec::new();
    let mut total_epochs = 0;
    let mut best: Option<(f64, Candidate)> = None;

    for (b, bracket) in schedule.iter().enumerate() {
        let s = s_max - b;
        let mut alive: Vec<Candidate> = (0..bracket[0].0)
            .map(|_| {
                ordinal += 1;
                sample_candidate(&cfg.space, &mut rng, ordinal - 1)
            })
            .collect();
        for (i, &(_, resource)) in bracket.iter().enumerate() {
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(alive.len());
            for (k, cand) in alive.iter().enumerate() {
                let score = objective(cand, resource)?;
                total_epochs += resource;
                evaluations.push(Evaluation { bracket: s, rung: i, candidate: cand.clone(), resource, score });
                scored.push((score, k));
            }
            scored.sort_by(|a, b| by_score(&(a.0, alive[a.1].ordinal), &(b.0, alive[b.1].ordinal)));
            let last = i + 1 == bracket.len();
            let keep = if last { 0 } else { bracket[i + 1].0.min(alive.len()) };
            rungs.push(Rung { bracket: s, rung: i, configs: alive.len(), resource, survivors: keep });
            if last {
                let (score, k) = scored[0];
                let cand = &alive[k];
                let better = match &best {
                    None => true,
                    Some((bs, bc)) => by_score(&(score, cand.ordinal), &(*bs, bc.ordinal)).is_lt(),
                };
                if better {
                    best = Some((score, cand.clone()));
                }
            } else {
                alive = scored[..keep].iter().map(|&(_, k)| alive[k].clone()).collect();
            }
        }
    }
    let (best_score, best) = best.ok_or_else(|| Error::EmptySpace("no configurations evaluated".into()))?;
    Ok(SearchOutcome { best, best_score, rungs, evaluations, total_epochs })
}
