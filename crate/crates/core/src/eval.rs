//! NRMSE scoring over the full test period, the growing season and flagged
//! extremes, plus permutation feature importance.

use chrono::Datelike;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremes::ExtremeMask;
use crate::rnn::{predict, NetworkParams};
use crate::timeseries::WindowedDataset;

pub const DEFAULT_REPETITIONS: usize = 10;
/// May through September.
pub const GROWING_SEASON: std::ops::RangeInclusive<u32> = 5..=9;

/// Root-mean-squared error divided by the range of `obs`.
pub fn nrmse(preds: &[f64], obs: &[f64]) -> Result<f64> {
    if preds.len() != obs.len() {
        return Err(Error::LengthMismatch { expected: obs.len(), actual: preds.len() });
    }
    if obs.len() < 2 {
        return Err(Error::SingleSample(obs.len()));
    }
    let (lo, hi) = obs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &o| (lo.min(o), hi.max(o)));
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::ZeroRange);
    }
    let mse = preds.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum::<f64>() / obs.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Eval-mode predictions for every sample, in dataset order.
pub fn predict_dataset(model: &NetworkParams, data: &WindowedDataset) -> Result<Vec<f64>> {
    data.samples.iter().map(|s| predict(model, &s.input)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRegime {
    Full,
    GrowingSeason,
    Extremes,
}

impl EvalRegime {
    pub const ALL: [EvalRegime; 3] = [Self::Full, Self::GrowingSeason, Self::Extremes];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::GrowingSeason => "growing_season",
            Self::Extremes => "extremes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeScore {
    pub nrmse: f64,
    pub n_samples: usize,
}

/// Scores for one site; `None` where the regime's subset is too small or
/// has no spread in the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub site_id: String,
    pub full: Option<RegimeScore>,
    pub growing_season: Option<RegimeScore>,
    pub extremes: Option<RegimeScore>,
}

impl RegimeReport {
    pub fn get(&self, regime: EvalRegime) -> Option<RegimeScore> {
        match regime {
            EvalRegime::Full => self.full,
            EvalRegime::GrowingSeason => self.growing_season,
            EvalRegime::Extremes => self.extremes,
        }
    }
}

fn subset_score(preds: &[f64], obs: &[f64], keep: impl Fn(usize) -> bool) -> Option<RegimeScore> {
    let (p, o): (Vec<f64>, Vec<f64>) = (0..preds.len()).filter(|&i| keep(i)).map(|i| (preds[i], obs[i])).unzip();
    nrmse(&p, &o).ok().map(|nrmse| RegimeScore { nrmse, n_samples: o.len() })
}

/// Scores precomputed predictions under the three regimes.
pub fn score_regimes(site_id: &str, data: &WindowedDataset, preds: &[f64], mask: &ExtremeMask) -> Result<RegimeReport> {
    if preds.len() != data.len() {
        return Err(Error::LengthMismatch { expected: data.len(), actual: preds.len() });
    }
    let obs = data.targets();
    let month = |i: usize| data.samples[i].target_date.month();
    Ok(RegimeReport {
        site_id: site_id.to_string(),
        full: subset_score(preds, &obs, |_| true),
        growing_season: subset_score(preds, &obs, |i| GROWING_SEASON.contains(&month(i))),
        extremes: subset_score(preds, &obs, |i| mask.is_extreme(data.samples[i].target_date)),
    })
}

pub fn evaluate_regimes(model: &NetworkParams, test: &WindowedDataset, mask: &ExtremeMask) -> Result<RegimeReport> {
    let preds = predict_dataset(model, test)?;
    let site = test.samples.first().map_or(String::new(), |s| s.site_id.clone());
    score_regimes(&site, test, &preds, mask)
}

/// How a feature is shuffled across samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// One permutation of the sample axis moves each window's whole column.
    #[default]
    SampleBlock,
    /// An independent permutation of the sample axis per time step.
    PerTimestep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub feature: String,
    /// `E_f - E_b` for each repetition.
    pub values: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiReport {
    pub baseline: f64,
    pub repetitions: usize,
    pub features: Vec<FeatureImportance>,
}

impl FiReport {
    pub fn get(&self, feature: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }
}

/// Seed for one (feature, repetition) task.
pub fn task_seed(seed: u64, feature: usize, repetitions: usize, repetition: usize) -> u64 {
    seed.wrapping_add((feature * repetitions + repetition) as u64)
}

/// The permutation(s) used for one task: one for block mode, `steps` for
/// per-timestep mode. Shared with tests that replay them.
pub fn task_permutations(task_seed: u64, n_samples: usize, steps: usize, mode: PermutationMode) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
    let count = match mode {
        PermutationMode::SampleBlock => 1,
        PermutationMode::PerTimestep => steps,
    };
    (0..count)
        .map(|_| {
            let mut p: Vec<usize> = (0..n_samples).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

pub fn permutation_importance(
    model: &NetworkParams,
    test: &WindowedDataset,
    repetitions: usize,
    seed: u64,
    mode: PermutationMode,
) -> Result<FiReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    if test.len() < 2 {
        return Err(Error::SingleSample(test.len()));
    }
    let obs = test.targets();
    let baseline = nrmse(&predict_dataset(model, test)?, &obs)?;
    let n = test.n_features();
    let steps = test.length;
    let mut features = Vec::with_capacity(n);
    for f in 0..n {
        let mut values = Vec::with_capacity(repetitions);
        for r in 0..repetitions {
            let perms = task_permutations(task_seed(seed, f, repetitions, r), test.len(), steps, mode);
            let mut window = vec![0.0; steps * n];
            let mut preds = Vec::with_capacity(test.len());
            for (i, sample) in test.samples.iter().enumerate() {
                window.copy_from_slice(&sample.input);
                for t in 0..steps {
                    let source = perms[t % perms.len()][i];
                    window[t * n + f] = test.samples[source].input[t * n + f];
                }
                preds.push(predict(model, &window)?);
            }
            values.push(nrmse(&preds, &obs)? - baseline);
        }
        let mean = values.iter().sum::<f64>() / repetitions as f64;
        features.push(FeatureImportance { feature: test.feature_names[f].clone(), values, mean });
    }
    Ok(FiReport { baseline, repetitions, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::{init_params, Architecture, CellType};
    use crate::timeseries::{Date, Sample};
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset(targets: &[f64], months: &[u32], steps: usize, n: usize, seed: u64) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = targets
            .iter()
            .zip(months)
            .enumerate()
            .map(|(i, (&target, &m))| Sample {
                input: (0..steps * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target,
                target_date: Date::from_ymd_opt(2019, m, 1 + i as u32).unwrap(),
                site_id: "S".into(),
            })
            .collect();
        WindowedDataset { length: steps, feature_names: (0..n).map(|i| format!("f{i}")).collect(), samples }
    }

    #[test]
    fn nrmse_examples() {
        assert_eq!(nrmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(nrmse(&[1.0, 3.0, 5.0], &[0.0, 2.0, 4.0]).unwrap(), 0.25);
        assert!(matches!(nrmse(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::ZeroRange)));
        assert!(matches!(nrmse(&[1.0], &[2.0, 3.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(nrmse(&[1.0], &[2.0]), Err(Error::SingleSample(1))));
    }

    #[test]
    fn nrmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let o: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        // Oracle: sort observations for the range, accumulate residuals in reverse.
        let mut sorted = o.clone();
        sorted.sort_by(f64::total_cmp);
        let mut ss = 0.0;
        for i in (0..100).rev() {
            let r = p[i] - o[i];
            ss += r * r;
        }
        let oracle = (ss / 100.0).sqrt() / (sorted[99] - sorted[0]);
        assert!((nrmse(&p, &o).unwrap() - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn nrmse_translation_invariant(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..50),
            shift in -100.0f64..100.0,
        ) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(o.iter().any(|&x| x != o[0]));
            let a = nrmse(&p, &o).unwrap();
            let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let os: Vec<f64> = o.iter().map(|x| x + shift).collect();
            let b = nrmse(&ps, &os).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn regimes_hand_computed() {
        // Ten samples: months 3..=12 cycle; extremes on samples 2,3,4.
        let targets = [1.0, 3.0, 0.0, 4.0, 2.0, 6.0, 5.0, 7.0, 9.0, 8.0];
        let months = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12];
        let data = dataset(&targets, &months, 2, 1, 0);
        let preds = [1.5, 3.0, 1.0, 4.0, 1.0, 6.0, 5.0, 6.0, 9.0, 8.0];
        let start = Date::from_ymd_opt(2019, 1, 1).unwrap();
        let mut mask = ExtremeMask::all_false(start, 400);
        for s in &data.samples[2..5] {
            mask.flags[(s.target_date - start).num_days() as usize] = true;
        }
        let report = score_regimes("S", &data, &preds, &mask).unwrap();
        // full: residuals .5,0,1,0,-1,0,0,-1,0,0 -> mse 3.25/10, range 9
        let full = report.full.unwrap();
        assert_eq!(full.n_samples, 10);
        assert_eq!(full.nrmse, (3.25f64 / 10.0).sqrt() / 9.0);
        // growing season: months 5..=9 -> samples 2..=6: residuals 1,0,-1,0,0, range 6-0
        let gs = report.growing_season.unwrap();
        assert_eq!(gs.n_samples, 5);
        assert_eq!(gs.nrmse, (2.0f64 / 5.0).sqrt() / 6.0);
        // extremes: samples 2,3,4: residuals 1,0,-1, range 4
        let ex = report.extremes.unwrap();
        assert_eq!(ex.n_samples, 3);
        assert_eq!(ex.nrmse, (2.0f64 / 3.0).sqrt() / 4.0);
    }

    #[test]
    fn regimes_absent_and_identical_subsets() {
        let data = dataset(&[1.0, 2.0, 4.0], &[7, 7, 7], 3, 2, 1);
        let model = init_params(&Architecture::new(CellType::Lstm, vec![3]), 2, 0).unwrap();
        let mask = ExtremeMask::all_false(Date::from_ymd_opt(2019, 1, 1).unwrap(), 365);
        let report = evaluate_regimes(&model, &data, &mask).unwrap();
        assert!(report.extremes.is_none());
        assert_eq!(report.full, report.growing_season);
    }

    #[test]
    fn dead_feature_has_zero_importance() {
        let data = dataset(&[1.0, 2.0, 4.0, 0.5, 3.0, 2.2], &[5, 6, 7, 8, 9, 10], 4, 3, 2);
        let mut model = init_params(&Architecture::new(CellType::Gru, vec![4]), 3, 1).unwrap();
        for row in model.layers[0].input_weights.chunks_mut(3) {
            row[1] = 0.0;
        }
        let before = data.clone();
        let report = permutation_importance(&model, &data, 5, 9, PermutationMode::SampleBlock).unwrap();
        assert!(report.get("f1").unwrap().values.iter().all(|&v| v == 0.0));
        assert_eq!(data, before);
        let mean = report.features[0].values.iter().sum::<f64>() / 5.0;
        assert_eq!(report.features[0].mean, mean);
    }

    #[test]
    fn identity_permutation_gives_zero() {
        let data = dataset(&[1.0, 2.0], &[6, 7], 3, 2, 3);
        let model = init_params(&Architecture::new(CellType::Rnn, vec![2]), 2, 4).unwrap();
        let seed = (0..100u64)
            .find(|&s| task_permutations(task_seed(s, 0, 1, 0), 2, 3, PermutationMode::SampleBlock)[0] == [0, 1])
            .unwrap();
        let report = permutation_importance(&model, &data, 1, seed, PermutationMode::SampleBlock).unwrap();
        assert_eq!(report.features[0].values, vec![0.0]);
    }

    #[test]
    fn importance_rejects_tiny_sets() {
        let data = dataset(&[1.0], &[6], 3, 2, 3);
        let model = init_params(&Architecture::new(CellType::Rnn, vec![2]), 2, 4).unwrap();
        assert!(matches!(
            permutation_importance(&model, &data, 3, 0, PermutationMode::SampleBlock),
            Err(Error::SingleSample(1))
        ));
    }

    #[test]
    fn baseline_is_reproducible_and_per_timestep_mode_runs() {
        let data = dataset(&[1.0, 2.0, 4.0, 0.5, 3.0], &[5, 6, 7, 8, 9], 4, 2, 5);
        let model = init_params(&Architecture::new(CellType::Lstm, vec![3]), 2, 2).unwrap();
        let a = permutation_importance(&model, &data, 2, 1, PermutationMode::PerTimestep).unwrap();
        let b = permutation_importance(&model, &data, 2, 1, PermutationMode::PerTimestep).unwrap();
        assert_eq!(a.baseline.to_bits(), b.baseline.to_bits());
        assert_eq!(a, b);
    }
}
