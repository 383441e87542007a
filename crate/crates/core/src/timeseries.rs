//! Daily site series, predictor tables, the temporal split and
//! sequence-to-one window construction.
//!
//! Series are gap-free by construction: a [`SiteSeries`] stores its first
//! date and one entry per consecutive day, so missing days must be present
//! as missing values.

use std::collections::BTreeSet;

use chrono::{Datelike, Days, NaiveDate};

use crate::error::{Error, Result};

pub type Date = NaiveDate;

pub const DEFAULT_QC_MIN: f64 = 0.70;
pub const DEFAULT_VALID_MIN: f64 = 0.60;
pub const DEFAULT_WINDOW: usize = 90;

pub(crate) fn add_days(date: Date, n: usize) -> Date {
    date.checked_add_days(Days::new(n as u64)).expect("date overflow")
}

/// Daily GPP target of one site with its per-day quality fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSeries {
    pub site_id: String,
    pub latitude: f64,
    pub longitude: f64,
    start: Date,
    gpp: Vec<Option<f64>>,
    qc: Vec<Option<f64>>,
}

impl SiteSeries {
    pub fn new(
        site_id: impl Into<String>,
        latitude: f64,
        longitude: f64,
        start: Date,
        gpp: Vec<Option<f64>>,
        qc: Vec<Option<f64>>,
    ) -> Result<Self> {
        if gpp.len() != qc.len() {
            return Err(Error::LengthMismatch { expected: gpp.len(), actual: qc.len() });
        }
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::InvalidArgument(format!("coordinates out of range: lat {latitude}, lon {longitude}")));
        }
        Ok(Self { site_id: site_id.into(), latitude, longitude, start, gpp, qc })
    }

    pub fn len(&self) -> usize {
        self.gpp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpp.is_empty()
    }

    pub fn start(&self) -> Date {
        self.start
    }

    pub fn date(&self, index: usize) -> Date {
        add_days(self.start, index)
    }

    pub fn dates(&self) -> impl Iterator<Item = Date> + '_ {
        (0..self.len()).map(|i| self.date(i))
    }

    /// Row index of `date`, if it lies inside the series.
    pub fn index_of(&self, date: Date) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn gpp(&self) -> &[Option<f64>] {
        &self.gpp
    }

    pub fn qc(&self) -> &[Option<f64>] {
        &self.qc
    }

    pub fn valid_count(&self) -> usize {
        self.gpp.iter().filter(|v| v.is_some()).count()
    }

    pub(crate) fn with_gpp(&self, gpp: Vec<Option<f64>>) -> Self {
        Self { gpp, ..self.clone() }
    }
}

/// Daily predictor matrix stored column-wise, one column per named feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
    rows: usize,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<Option<f64>>>, rows: usize) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch { expected: names.len(), actual: columns.len() });
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateFeature(name.clone()));
            }
        }
        if let Some(col) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::LengthMismatch { expected: rows, actual: col.len() });
        }
        Ok(Self { names, columns, rows })
    }

    /// Builds a table with no missing entries.
    pub fn from_dense(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let columns = columns.into_iter().map(|c| c.into_iter().map(Some).collect()).collect();
        Self::new(names, columns, rows)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, index: usize) -> &[Option<f64>] {
        &self.columns[index]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[Option<f64>]> {
        self.position(name).map(|i| self.columns[i].as_slice())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.columns[col][row]
    }

    pub fn is_dense(&self) -> bool {
        self.columns.iter().all(|c| c.iter().all(Option::is_some))
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(Error::DuplicateFeature(name));
        }
        if values.len() != self.rows {
            return Err(Error::LengthMismatch { expected: self.rows, actual: values.len() });
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Removes and returns the named columns, in the given order.
    pub fn take_columns(&mut self, names: &[String]) -> Result<Vec<Vec<Option<f64>>>> {
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let idx = self.position(name).ok_or_else(|| Error::InvalidArgument(format!("no feature `{name}`")))?;
            self.names.remove(idx);
            out.push(self.columns.remove(idx));
        }
        Ok(out)
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col =
                self.column_by_name(name).ok_or_else(|| Error::InvalidArgument(format!("no feature `{name}`")))?;
            columns.push(col.to_vec());
        }
        Self::new(names.to_vec(), columns, self.rows)
    }

    pub(crate) fn dense_column(&self, col: usize) -> Result<Vec<f64>> {
        self.columns[col].iter().map(|v| v.ok_or_else(|| Error::NotInterpolated(self.names[col].clone()))).collect()
    }
}

/// Disjoint sets of train and test years.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    train_years: BTreeSet<i32>,
    test_years: BTreeSet<i32>,
}

impl SplitSpec {
    pub fn new(train_years: impl IntoIterator<Item = i32>, test_years: impl IntoIterator<Item = i32>) -> Result<Self> {
        let train_years: BTreeSet<i32> = train_years.into_iter().collect();
        let test_years: BTreeSet<i32> = test_years.into_iter().collect();
        if let Some(year) = train_years.intersection(&test_years).next() {
            return Err(Error::OverlappingSplit(*year));
        }
        Ok(Self { train_years, test_years })
    }

    pub fn train_years(&self) -> &BTreeSet<i32> {
        &self.train_years
    }

    pub fn test_years(&self) -> &BTreeSet<i32> {
        &self.test_years
    }

    pub fn years(&self, which: Partition) -> &BTreeSet<i32> {
        match which {
            Partition::Train => &self.train_years,
            Partition::Test => &self.test_years,
        }
    }

    pub fn partition_of(&self, date: Date) -> Option<Partition> {
        if self.train_years.contains(&date.year()) {
            Some(Partition::Train)
        } else if self.test_years.contains(&date.year()) {
            Some(Partition::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Test,
}

/// One sequence-to-one sample: `length` rows of features ending on the
/// target date.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `length × n_features`, oldest row first.
    pub input: Vec<f64>,
    pub target: f64,
    pub target_date: Date,
    pub site_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub length: usize,
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl WindowedDataset {
    pub fn empty(length: usize, feature_names: Vec<String>) -> Self {
        Self { length, feature_names, samples: Vec::new() }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }

    /// Appends another site's samples; window length and features must agree.
    pub fn extend(&mut self, other: WindowedDataset) -> Result<()> {
        if other.length != self.length || other.feature_names != self.feature_names {
            return Err(Error::ShapeMismatch("datasets differ in window length or feature names".into()));
        }
        self.samples.extend(other.samples);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            length: self.length,
            feature_names: self.feature_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Samples belonging to one site, in their original order.
    pub fn for_site(&self, site_id: &str) -> Self {
        Self {
            length: self.length,
            feature_names: self.feature_names.clone(),
            samples: self.samples.iter().filter(|s| s.site_id == site_id).cloned().collect(),
        }
    }

    /// Site ids in order of first appearance.
    pub fn site_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.samples.iter().filter(|s| seen.insert(s.site_id.as_str())).map(|s| s.site_id.clone()).collect()
    }
}

/// Masks GPP where the quality fraction is below `qc_min` (or missing) or
/// the value is negative, then rejects the site if fewer than `valid_min`
/// of its days remain valid.
pub fn filter_gpp_quality(series: &SiteSeries, qc_min: f64, valid_min: f64) -> Result<SiteSeries> {
    if !(0.0..=1.0).contains(&qc_min) || !(0.0..=1.0).contains(&valid_min) {
        return Err(Error::InvalidArgument(format!("qc_min {qc_min} and valid_min {valid_min} must lie in [0, 1]")));
    }
    if series.gpp.len() != series.qc.len() {
        return Err(Error::LengthMismatch { expected: series.gpp.len(), actual: series.qc.len() });
    }
    let gpp: Vec<Option<f64>> = series
        .gpp
        .iter()
        .zip(&series.qc)
        .map(|(&g, &q)| match (g, q) {
            (Some(g), Some(q)) if q >= qc_min && g >= 0.0 => Some(g),
            _ => None,
        })
        .collect();
    let valid = gpp.iter().filter(|v| v.is_some()).count();
    let fraction = if gpp.is_empty() { 0.0 } else { valid as f64 / gpp.len() as f64 };
    if fraction < valid_min {
        return Err(Error::SiteRejected(fraction));
    }
    Ok(series.with_gpp(gpp))
}

fn interpolate_column(name: &str, column: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let present: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    let (&first, &last) = match (present.first(), present.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyColumn(name.to_string())),
    };
    let mut out = column.to_vec();
    for slot in &mut out[..first] {
        *slot = column[first];
    }
    for slot in &mut out[last + 1..] {
        *slot = column[last];
    }
    for pair in present.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let (va, vb) = (column[a].unwrap(), column[b].unwrap());
        let span = (b - a) as f64;
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (i - a) as f64 / span;
            *slot = Some(va + (vb - va) * w);
        }
    }
    Ok(out)
}

/// Linear interpolation of interior gaps, nearest-value fill at the edges.
/// Present values are copied untouched.
pub fn interpolate_features(table: &FeatureTable) -> Result<FeatureTable> {
    let columns = table
        .names
        .iter()
        .zip(&table.columns)
        .map(|(name, col)| interpolate_column(name, col))
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(table.names.clone(), columns, table.rows)
}

/// Partitions the GPP targets by year. Both halves keep the full date range
/// and feature table so that test windows can reach back into train years;
/// targets outside a half's years are masked.
#[allow(clippy::type_complexity)]
pub fn temporal_split(
    series: &SiteSeries,
    table: &FeatureTable,
    spec: &SplitSpec,
) -> Result<((SiteSeries, FeatureTable), (SiteSeries, FeatureTable))> {
    if table.n_rows() != series.len() {
        return Err(Error::LengthMismatch { expected: series.len(), actual: table.n_rows() });
    }
    let mask = |which: Partition| -> SiteSeries {
        let years = spec.years(which);
        let gpp =
            series.gpp.iter().enumerate().map(|(i, g)| g.filter(|_| years.contains(&series.date(i).year()))).collect();
        series.with_gpp(gpp)
    };
    let train = mask(Partition::Train);
    let test = mask(Partition::Test);
    if train.valid_count() == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if test.valid_count() == 0 {
        return Err(Error::EmptySplit("test"));
    }
    Ok(((train, table.clone()), (test, table.clone())))
}

/// One sample per present target in the chosen partition that has at least
/// `length - 1` days of feature history before it.
pub fn build_windows(
    series: &SiteSeries,
    table: &FeatureTable,
    length: usize,
    split: &SplitSpec,
    which: Partition,
) -> Result<WindowedDataset> {
    if length == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if table.n_rows() != series.len() {
        return Err(Error::LengthMismatch { expected: series.len(), actual: table.n_rows() });
    }
    let columns = (0..table.n_features()).map(|c| table.dense_column(c)).collect::<Result<Vec<_>>>()?;
    let n = columns.len();
    let years = split.years(which);
    let mut out = WindowedDataset::empty(length, table.names.clone());
    for t in (length - 1)..series.len() {
        let Some(target) = series.gpp[t] else { continue };
        let date = series.date(t);
        if !years.contains(&date.year()) {
            continue;
        }
        let mut input = Vec::with_capacity(length * n);
        for row in (t + 1 - length)..=t {
            input.extend(columns.iter().map(|c| c[row]));
        }
        out.samples.push(Sample { input, target, target_date: date, site_id: series.site_id.clone() });
    }
    Ok(out)
}
