//! Climate-induced GPP extremes: days whose anomaly from the mean seasonal
//! cycle falls in the low tail, kept only when they form runs of at least
//! `min_run` consecutive days.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{add_days, Date, SiteSeries};

pub const DEFAULT_QUANTILE: f64 = 0.10;
pub const DEFAULT_MIN_RUN: usize = 5;
pub const MIN_ANOMALIES: usize = 10;

const FEB_28: usize = 58;
const FEB_29: usize = 59;

/// Index of a calendar day in a leap year, 0..366.
fn calendar_slot(date: Date) -> usize {
    Date::from_ymd_opt(2000, date.month(), date.day()).expect("every month/day exists in a leap year").ordinal0()
        as usize
}

/// Mean GPP per calendar day across all years.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalCycle {
    slots: Vec<Option<f64>>,
}

impl SeasonalCycle {
    pub fn get(&self, month: u32, day: u32) -> Option<f64> {
        let date = Date::from_ymd_opt(2000, month, day)?;
        self.slots[calendar_slot(date)]
    }

    pub fn at(&self, date: Date) -> Option<f64> {
        self.slots[calendar_slot(date)]
    }

    /// Adds `offset` to every defined day.
    pub fn shifted(&self, offset: f64) -> Self {
        Self { slots: self.slots.iter().map(|v| v.map(|x| x + offset)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    pub start: Date,
    pub values: Vec<Option<f64>>,
}

impl AnomalySeries {
    pub fn date(&self, index: usize) -> Date {
        add_days(self.start, index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeMask {
    pub start: Date,
    pub flags: Vec<bool>,
    /// Anomaly threshold used for flagging; `None` when no threshold could
    /// be formed (no negative anomalies in negative-tail mode).
    pub threshold: Option<f64>,
}

impl ExtremeMask {
    pub fn all_false(start: Date, len: usize) -> Self {
        Self { start, flags: vec![false; len], threshold: None }
    }

    pub fn date(&self, index: usize) -> Date {
        add_days(self.start, index)
    }

    /// False for dates outside the mask.
    pub fn is_extreme(&self, date: Date) -> bool {
        let offset = (date - self.start).num_days();
        offset >= 0 && self.flags.get(offset as usize).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Which anomalies define the low-tail threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// q-quantile of all present anomalies.
    #[default]
    Full,
    /// q-quantile of the negative anomalies only.
    NegativeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeConfig {
    pub quantile: f64,
    pub min_run: usize,
    pub tail: TailMode,
}

impl Default for ExtremeConfig {
    fn default() -> Self {
        Self { quantile: DEFAULT_QUANTILE, min_run: DEFAULT_MIN_RUN, tail: TailMode::Full }
    }
}

pub fn mean_seasonal_cycle(series: &SiteSeries) -> Result<SeasonalCycle> {
    let mut sums = vec![0.0; 366];
    let mut counts = vec![0usize; 366];
    for (i, g) in series.gpp().iter().enumerate() {
        if let Some(g) = g {
            let slot = calendar_slot(series.date(i));
            sums[slot] += g;
            counts[slot] += 1;
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptySeries);
    }
    let mut slots: Vec<Option<f64>> = sums.iter().zip(&counts).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    if slots[FEB_29].is_none() {
        slots[FEB_29] = slots[FEB_28];
    }
    Ok(SeasonalCycle { slots })
}

pub fn anomalies(series: &SiteSeries, cycle: &SeasonalCycle) -> Result<AnomalySeries> {
    let values = series
        .gpp()
        .iter()
        .enumerate()
        .map(|(i, g)| match g {
            None => Ok(None),
            Some(g) => {
                let date = series.date(i);
                cycle
                    .at(date)
                    .map(|c| Some(g - c))
                    .ok_or(Error::MissingCycleDay { month: date.month(), day: date.day() })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnomalySeries { start: series.start(), values })
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn flag_extremes(anoms: &AnomalySeries, config: &ExtremeConfig) -> Result<ExtremeMask> {
    if !(config.quantile > 0.0 && config.quantile < 0.5) {
        return Err(Error::InvalidArgument(format!("quantile {} outside (0, 0.5)", config.quantile)));
    }
    if config.min_run == 0 {
        return Err(Error::InvalidArgument("min_run must be at least 1".into()));
    }
    let mut present: Vec<f64> = anoms.values.iter().flatten().copied().collect();
    if present.len() < MIN_ANOMALIES {
        return Err(Error::InsufficientData { needed: MIN_ANOMALIES, found: present.len() });
    }
    if config.tail == TailMode::NegativeOnly {
        present.retain(|&a| a < 0.0);
    }
    if present.is_empty() {
        return Ok(ExtremeMask::all_false(anoms.start, anoms.values.len()));
    }
    present.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&present, config.quantile);

    let candidate: Vec<bool> = anoms.values.iter().map(|a| a.is_some_and(|a| a < threshold)).collect();
    let mut flags = vec![false; candidate.len()];
    let mut i = 0;
    while i < candidate.len() {
        if !candidate[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < candidate.len() && candidate[i] {
            i += 1;
        }
        if i - start >= config.min_run {
            flags[start..i].iter_mut().for_each(|f| *f = true);
        }
    }
    Ok(ExtremeMask { start: anoms.start, flags, threshold: Some(threshold) })
}

/// Seasonal cycle, anomalies and flags for one site in a single call.
pub fn detect_extremes(series: &SiteSeries, config: &ExtremeConfig) -> Result<(AnomalySeries, ExtremeMask)> {
    let cycle = mean_seasonal_cycle(series)?;
    let anoms = anomalies(series, &cycle)?;
    let mask = flag_extremes(&anoms, config)?;
    Ok((anoms, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> Date {
        Date::from_ymd_opt(y, m, day).unwrap()
    }

    fn series(start: Date, gpp: Vec<Option<f64>>) -> SiteSeries {
        let qc = vec![Some(1.0); gpp.len()];
        SiteSeries::new("S", 0.0, 0.0, start, gpp, qc).unwrap()
    }

    fn anoms(values: Vec<Option<f64>>) -> AnomalySeries {
        AnomalySeries { start: d(2019, 1, 1), values }
    }

    #[test]
    fn cycle_is_mean_over_years() {
        let start = d(2017, 1, 1);
        let mut gpp = vec![None; 730];
        gpp[10] = Some(1.0);
        gpp[375] = Some(3.0);
        gpp[11] = Some(4.0);
        let cycle = mean_seasonal_cycle(&series(start, gpp)).unwrap();
        assert_eq!(cycle.get(1, 11), Some(2.0));
        assert_eq!(cycle.get(1, 12), Some(4.0));
        assert_eq!(cycle.get(1, 13), None);
    }

    #[test]
    fn cycle_single_year_and_leap_fallback() {
        let start = d(2019, 1, 1);
        let gpp: Vec<_> = (0..365).map(|i| Some(i as f64)).collect();
        let s = series(start, gpp);
        let cycle = mean_seasonal_cycle(&s).unwrap();
        for (i, date) in s.dates().enumerate() {
            assert_eq!(cycle.at(date), Some(i as f64));
        }
        assert_eq!(cycle.get(2, 29), cycle.get(2, 28));
    }

    #[test]
    fn cycle_rejects_empty() {
        let s = series(d(2019, 1, 1), vec![None; 5]);
        assert!(matches!(mean_seasonal_cycle(&s), Err(Error::EmptySeries)));
    }

    #[test]
    fn anomaly_examples() {
        let start = d(2019, 1, 1);
        let base = series(start, vec![Some(6.5), Some(2.0), None]);
        let cycle = mean_seasonal_cycle(&base).unwrap();
        let s = series(start, vec![Some(4.0), Some(2.0), None]);
        let a = anomalies(&s, &cycle).unwrap();
        assert_eq!(a.values, vec![Some(-2.5), Some(0.0), None]);
        let later = series(d(2019, 6, 1), vec![Some(1.0)]);
        assert!(matches!(anomalies(&later, &cycle), Err(Error::MissingCycleDay { month: 6, day: 1 })));
    }

    #[test]
    fn run_length_rule() {
        // A block of strongly negative values in 100 zeros stays below the
        // 10% quantile, which is 0.
        for (block, flagged) in [(6usize, 6usize), (4, 0)] {
            let mut values = vec![Some(0.0); 100];
            for v in values.iter_mut().skip(10).take(block) {
                *v = Some(-5.0);
            }
            let mask = flag_extremes(&anoms(values), &ExtremeConfig::default()).unwrap();
            assert_eq!(mask.count(), flagged, "block {block}");
        }
    }

    #[test]
    fn missing_breaks_runs() {
        let mut values = vec![Some(0.0); 100];
        for v in values.iter_mut().skip(10).take(8) {
            *v = Some(-5.0);
        }
        values[14] = None;
        let mask = flag_extremes(&anoms(values), &ExtremeConfig::default()).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn flag_errors() {
        let few = anoms(vec![Some(1.0); 9]);
        assert!(matches!(
            flag_extremes(&few, &ExtremeConfig::default()),
            Err(Error::InsufficientData { found: 9, .. })
        ));
        let ok = anoms(vec![Some(1.0); 20]);
        let bad = ExtremeConfig { quantile: 0.5, ..Default::default() };
        assert!(flag_extremes(&ok, &bad).is_err());
        let bad = ExtremeConfig { min_run: 0, ..Default::default() };
        assert!(flag_extremes(&ok, &bad).is_err());
    }

    #[test]
    fn negative_tail_mode_uses_negative_anomalies() {
        let mut values: Vec<Option<f64>> = (0..20).map(|i| Some(i as f64)).collect();
        values.extend((0..10).map(|i| Some(-1.0 - i as f64)));
        let full = flag_extremes(&anoms(values.clone()), &ExtremeConfig::default()).unwrap();
        let neg = flag_extremes(
            &anoms(values),
            &ExtremeConfig { tail: TailMode::NegativeOnly, min_run: 1, ..Default::default() },
        )
        .unwrap();
        assert!(neg.threshold.unwrap() < full.threshold.unwrap());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
        assert_eq!(quantile_sorted(&[7.0], 0.1), 7.0);
    }

    proptest! {
        #[test]
        fn flagged_days_respect_threshold_and_run_length(
            values in prop::collection::vec(prop::option::weighted(0.95, -3.0f64..3.0), 10..400),
            q in 0.02f64..0.45,
            min_run in 1usize..8,
        ) {
            prop_assume!(values.iter().flatten().count() >= MIN_ANOMALIES);
            let cfg = ExtremeConfig { quantile: q, min_run, tail: TailMode::Full };
            let a = anoms(values);
            let mask = flag_extremes(&a, &cfg).unwrap();
            let threshold = mask.threshold.unwrap();
            let mut run = 0;
            for (i, &f) in mask.flags.iter().enumerate() {
                if f {
                    prop_assert!(a.values[i].unwrap() < threshold);
                    run += 1;
                } else {
                    prop_assert!(run == 0 || run >= min_run);
                    run = 0;
                }
            }
            prop_assert!(run == 0 || run >= min_run);

            let stricter = ExtremeConfig { quantile: q / 2.0, ..cfg };
            let fewer = flag_extremes(&a, &stricter).unwrap();
            for (s, l) in fewer.flags.iter().zip(&mask.flags) {
                prop_assert!(!s || *l);
            }
        }

        #[test]
        fn mask_invariant_under_constant_shift(
            gpp in prop::collection::vec(prop::option::weighted(0.9, 0.0f64..12.0), 400..800),
            shift in -5.0f64..5.0,
        ) {
            let start = d(2018, 3, 1);
            let s = series(start, gpp.clone());
            let shifted = series(start, gpp.iter().map(|g| g.map(|x| x + shift)).collect());
            let cfg = ExtremeConfig::default();
            let (_, m1) = detect_extremes(&s, &cfg).unwrap();
            let (_, m2) = detect_extremes(&shifted, &cfg).unwrap();
            prop_assert_eq!(m1.flags, m2.flags);
        }
    }
}
