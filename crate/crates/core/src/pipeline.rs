//! End-to-end stages behind the CLI subcommands. Each stage reads what the
//! previous ones wrote under the output directory:
//!
//! ```text
//! synth       data/<site>.csv, synth_truth_<site>.csv
//! radiation   radiation_<site>.csv
//! preprocess  preprocessed/<site>.csv, preprocess_summary.csv,
//!             pca_model.json, pca_variance.csv
//! extremes    extremes_<site>.csv, anomalies_<site>.csv, extremes_summary.csv
//! train       model.ckpt, training_history.csv
//! tune        hyperband_evaluations.csv, hyperband_rungs.csv, hyperband_best.csv
//! evaluate    evaluation.csv, predictions.csv
//! importance  importance.csv, importance_summary.csv
//! ```

use std::path::{Path, PathBuf};

use chrono::Datelike;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile, PcaBlock};
use crate::config::{CheckpointOn, PipelineConfig, SiteEntry};
use crate::error::{Error, Result};
use crate::eval::{permutation_importance, predict_dataset, score_regimes, EvalRegime, FiReport};
use crate::extremes::{detect_extremes, mean_seasonal_cycle, ExtremeMask};
use crate::features::{pca_fit, pca_transform, Standardizer};
use crate::io::{format_value, load_feature_csv, write_atomic, write_csv, write_feature_csv};
use crate::rnn::init_params;
use crate::solar::{daily_toa_mean, radiation_series, SiteLocation};
use crate::synth::synth_generate;
use crate::timeseries::{
    build_windows, filter_gpp_quality, interpolate_features, temporal_split, FeatureTable, Partition, SiteSeries,
    SplitSpec, WindowedDataset,
};
use crate::training::{hyperband_search, mix_seed, train, Candidate, SearchOutcome, TrainHistory};

/// Stream tags mixed into the run seed, one per random consumer.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const SEARCH_STREAM: u64 = 3;
const IMPORTANCE_STREAM: u64 = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
const PCA_FILE: &str = "pca_model.json";

/// A validated config bound to an output directory and run seed.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
}

fn num(v: f64) -> String {
    v.to_string()
}

impl Workspace {
    /// `out` and `seed` override the config when given.
    pub fn new(mut config: PipelineConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        config.validate()?;
        let out = out.or_else(|| config.paths.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let seed = config.seed;
        Ok(Self { config, out, seed })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.paths.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn site_csv(&self, site: &SiteEntry) -> PathBuf {
        site.csv.clone().unwrap_or_else(|| self.data_dir().join(format!("{}.csv", site.id)))
    }

    pub fn preprocessed_csv(&self, id: &str) -> PathBuf {
        self.out.join("preprocessed").join(format!("{id}.csv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path(CHECKPOINT_FILE)
    }

    fn split(&self) -> Result<SplitSpec> {
        self.config.split_spec()
    }
}

/// Writes the synthetic site file and its injected-drought mask.
pub fn run_synth(ws: &Workspace) -> Result<PathBuf> {
    let spec = &ws.config.synth;
    let site = synth_generate(spec)?;
    let path = ws.data_dir().join(format!("{}.csv", spec.site_id));
    write_feature_csv(&path, &site.series, &site.features)?;
    let truth = &site.ground_truth;
    let rows = truth.flags.iter().enumerate().map(|(i, &f)| [truth.date(i).to_string(), u8::from(f).to_string()]);
    write_csv(&ws.path(&format!("synth_truth_{}.csv", spec.site_id)), &["date", "drought"], rows)?;
    Ok(path)
}

/// Daily mean top-of-atmosphere and clear-sky radiation over each site
/// file's date range.
pub fn run_radiation(ws: &Workspace) -> Result<Vec<PathBuf>> {
    let tau = ws.config.radiation.transmittance;
    let mut written = Vec::new();
    for entry in ws.config.site_entries() {
        let (series, _) = load_feature_csv(&ws.site_csv(&entry), &entry.info())?;
        let loc = SiteLocation::from_degrees(entry.latitude, entry.longitude)?;
        let clear = radiation_series(loc, series.start(), series.len(), tau)?;
        let rows = clear
            .dates()
            .zip(&clear.values)
            .map(|(date, &v)| {
                let toa = daily_toa_mean(loc.latitude, date.ordinal())?;
                Ok([date.to_string(), date.ordinal().to_string(), num(toa), num(v)])
            })
            .collect::<Result<Vec<_>>>()?;
        let path = ws.path(&format!("radiation_{}.csv", entry.id));
        write_csv(&path, &["date", "doy", "toa_mean", "clearsky_mean"], rows)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteStatus {
    pub id: String,
    pub days: usize,
    pub valid_fraction: f64,
    /// `None` when kept, else the rejection reason.
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub sites: Vec<SiteStatus>,
    pub pca: Option<PcaBlock>,
    pub features: Vec<String>,
}

fn train_rows(series: &SiteSeries, split: &SplitSpec) -> Vec<usize> {
    (0..series.len()).filter(|&i| split.partition_of(series.date(i)) == Some(Partition::Train)).collect()
}

/// Quality filtering, radiation column, gap filling and PCA of the
/// vegetation-index columns, fitted on the train years of all kept sites.
pub fn run_preprocess(ws: &Workspace) -> Result<PreprocessSummary> {
    let cfg = &ws.config;
    let split = ws.split()?;
    let mut statuses = Vec::new();
    let mut kept: SiteData = Vec::new();
    let mut first_rejection = None;
    for entry in cfg.site_entries() {
        let (raw, mut table) = load_feature_csv(&ws.site_csv(&entry), &entry.info())?;
        let fraction = if raw.is_empty() { 0.0 } else { raw.valid_count() as f64 / raw.len() as f64 };
        let series = match filter_gpp_quality(&raw, cfg.quality.qc_min, cfg.quality.valid_min) {
            Ok(s) => s,
            Err(e @ Error::SiteRejected(_)) => {
                statuses.push(SiteStatus {
                    id: entry.id.clone(),
                    days: raw.len(),
                    valid_fraction: fraction,
                    rejected: Some(e.to_string()),
                });
                first_rejection.get_or_insert(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        if cfg.radiation.enabled && table.position(&cfg.radiation.feature).is_none() {
            let loc = SiteLocation::from_degrees(entry.latitude, entry.longitude)?;
            let rad = radiation_series(loc, series.start(), series.len(), cfg.radiation.transmittance)?;
            table.push_column(cfg.radiation.feature.clone(), rad.values.into_iter().map(Some).collect())?;
        }
        let table = interpolate_features(&table)?;
        statuses.push(SiteStatus {
            id: entry.id.clone(),
            days: series.len(),
            valid_fraction: series.valid_count() as f64 / series.len().max(1) as f64,
            rejected: None,
        });
        kept.push((series, table));
    }
    if kept.is_empty() {
        return Err(first_rejection.unwrap_or(Error::EmptySplit("no sites configured")));
    }
    let names = kept[0].1.names().to_vec();
    if let Some((s, _)) = kept.iter().find(|(_, t)| t.names() != names.as_slice()) {
        return Err(Error::ShapeMismatch(format!("site {} has different feature columns", s.site_id)));
    }

    let vi: Vec<String> = names.iter().filter(|n| n.starts_with(&cfg.pca.prefix)).cloned().collect();
    let mut pca = None;
    if cfg.pca.enabled && !vi.is_empty() {
        let mut rows = Vec::new();
        for (series, table) in &kept {
            let cols: Vec<&[Option<f64>]> = vi.iter().map(|n| table.column_by_name(n).expect("present")).collect();
            for i in train_rows(series, &split) {
                rows.push(cols.iter().map(|c| c[i].expect("interpolated")).collect::<Vec<f64>>());
            }
        }
        let model = pca_fit(&rows, &cfg.pca_config())?;
        for (_, table) in kept.iter_mut() {
            let raw = table.take_columns(&vi)?;
            let rows: Vec<Vec<f64>> =
                (0..table.n_rows()).map(|i| raw.iter().map(|c| c[i].expect("interpolated")).collect()).collect();
            let scores = pca_transform(&model, &rows)?;
            for k in 0..model.n_components() {
                table.push_column(format!("PC{}", k + 1), scores.iter().map(|z| Some(z[k])).collect())?;
            }
        }
        pca = Some(PcaBlock { inputs: vi, model });
    }

    for (series, table) in &kept {
        write_feature_csv(&ws.preprocessed_csv(&series.site_id), series, table)?;
    }
    let rows = statuses.iter().map(|s| {
        [
            s.id.clone(),
            s.days.to_string(),
            num(s.valid_fraction),
            if s.rejected.is_some() { "rejected".into() } else { "kept".into() },
        ]
    });
    write_csv(&ws.path("preprocess_summary.csv"), &["site", "days", "valid_fraction", "status"], rows)?;
    let pca_json = ws.path(PCA_FILE);
    match &pca {
        Some(block) => {
            let json = serde_json::to_string_pretty(block).expect("PCA model serializes");
            write_atomic(&pca_json, json.as_bytes())?;
            let m = &block.model;
            let mut cumulative = 0.0;
            let rows: Vec<[String; 4]> = (0..m.n_components())
                .map(|k| {
                    cumulative += m.explained_variance_ratio[k];
                    [format!("PC{}", k + 1), num(m.eigenvalues[k]), num(m.explained_variance_ratio[k]), num(cumulative)]
                })
                .collect();
            write_csv(
                &ws.path("pca_variance.csv"),
                &["component", "eigenvalue", "explained_ratio", "cumulative_ratio"],
                rows,
            )?;
        }
        None => {
            if pca_json.exists() {
                std::fs::remove_file(&pca_json).map_err(|e| Error::io(&pca_json, e))?;
            }
        }
    }
    let features = kept[0].1.names().to_vec();
    Ok(PreprocessSummary { sites: statuses, pca, features })
}

/// Series and features per site, in config order.
pub type SiteData = Vec<(SiteSeries, FeatureTable)>;

/// Preprocessed sites in config order, skipping rejected ones.
pub fn load_preprocessed(ws: &Workspace) -> Result<SiteData> {
    let mut out = Vec::new();
    for entry in ws.config.site_entries() {
        let path = ws.preprocessed_csv(&entry.id);
        if path.exists() {
            out.push(load_feature_csv(&path, &entry.info())?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySplit("no preprocessed sites; run `preprocess` first"));
    }
    Ok(out)
}

fn load_pca(ws: &Workspace) -> Result<Option<PcaBlock>> {
    let path = ws.path(PCA_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::Parse { path, line: e.line(), msg: e.to_string() })
}

fn site_masks(ws: &Workspace, sites: &[(SiteSeries, FeatureTable)]) -> Result<Vec<ExtremeMask>> {
    let cfg = ws.config.extreme_config();
    sites.iter().map(|(s, _)| detect_extremes(s, &cfg).map(|(_, m)| m)).collect()
}

/// Anomalies and extreme flags of each preprocessed site.
pub fn run_extremes(ws: &Workspace) -> Result<Vec<ExtremeMask>> {
    let sites = load_preprocessed(ws)?;
    let cfg = ws.config.extreme_config();
    let mut masks = Vec::new();
    let mut summary = Vec::new();
    for (series, _) in &sites {
        let cycle = mean_seasonal_cycle(series)?;
        let (anoms, mask) = detect_extremes(series, &cfg)?;
        let rows = (0..series.len()).map(|i| {
            let date = series.date(i);
            [
                date.to_string(),
                format_value(series.gpp()[i]),
                format_value(cycle.at(date)),
                format_value(anoms.values[i]),
            ]
        });
        write_csv(
            &ws.path(&format!("anomalies_{}.csv", series.site_id)),
            &["date", "gpp", "seasonal_cycle", "anomaly"],
            rows,
        )?;
        let flags = (0..mask.flags.len()).map(|i| [mask.date(i).to_string(), u8::from(mask.flags[i]).to_string()]);
        write_csv(&ws.path(&format!("extremes_{}.csv", series.site_id)), &["date", "flag"], flags)?;
        summary.push([series.site_id.clone(), format_value(mask.threshold), mask.count().to_string()]);
        masks.push(mask);
    }
    write_csv(&ws.path("extremes_summary.csv"), &["site", "threshold", "extreme_days"], summary)?;
    Ok(masks)
}

/// Train and test windows of every site, standardized with statistics of
/// the pooled train rows.
pub struct Datasets {
    pub standardizer: Standardizer,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    /// Test windows per site, in site order.
    pub test_by_site: Vec<WindowedDataset>,
}

fn pooled_standardizer(sites: &[(SiteSeries, FeatureTable)], split: &SplitSpec) -> Result<Standardizer> {
    let names = sites[0].1.names().to_vec();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (series, table) in sites {
        let rows = train_rows(series, split);
        for (c, col) in columns.iter_mut().enumerate() {
            let values = table.column(c);
            for &i in &rows {
                col.push(values[i].ok_or_else(|| Error::NotInterpolated(names[c].clone()))?);
            }
        }
    }
    let pooled = FeatureTable::from_dense(names, columns)?;
    let n = pooled.n_rows();
    Standardizer::fit(&pooled, 0..n)
}

pub fn build_datasets(
    ws: &Workspace,
    sites: &[(SiteSeries, FeatureTable)],
    standardizer: Option<Standardizer>,
) -> Result<Datasets> {
    let split = ws.split()?;
    let length = ws.config.window.length;
    let standardizer = match standardizer {
        Some(s) => s,
        None => pooled_standardizer(sites, &split)?,
    };
    let names = sites[0].1.names().to_vec();
    let mut train = WindowedDataset::empty(length, names.clone());
    let mut test = WindowedDataset::empty(length, names.clone());
    let mut test_by_site = Vec::new();
    for (series, table) in sites {
        let scaled = standardizer.apply(table)?;
        let ((tr_s, tr_t), (te_s, te_t)) = temporal_split(series, &scaled, &split)?;
        train.extend(build_windows(&tr_s, &tr_t, length, &split, Partition::Train)?)?;
        let site_test = build_windows(&te_s, &te_t, length, &split, Partition::Test)?;
        test.extend(site_test.clone())?;
        test_by_site.push(site_test);
    }
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok(Datasets { standardizer, train, test, test_by_site })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: CheckpointFile,
    pub history: TrainHistory,
}

/// Trains the configured architecture and keeps the best checkpoint.
pub fn run_train(ws: &Workspace) -> Result<TrainSummary> {
    let sites = load_preprocessed(ws)?;
    let data = build_datasets(ws, &sites, None)?;
    let cfg = &ws.config;
    let init = init_params(&cfg.architecture(), data.train.n_features(), mix_seed(ws.seed, INIT_STREAM))?;
    let monitor = match cfg.training.checkpoint_on {
        CheckpointOn::Test => &data.test,
        CheckpointOn::Train => &data.train,
    };
    let (best, history) = train(init, &data.train, monitor, &cfg.train_config(mix_seed(ws.seed, SHUFFLE_STREAM)))?;
    let checkpoint = CheckpointFile {
        params: best.params,
        window: cfg.window.length,
        feature_names: data.train.feature_names.clone(),
        pca: load_pca(ws)?,
        standardizer: Some(data.standardizer),
        monitored_score: best.monitored_score,
        epoch: best.epoch as u64,
    };
    save_checkpoint(&ws.checkpoint_path(), &checkpoint)?;

    let saved: std::collections::BTreeSet<usize> = history.saves.iter().map(|&(e, _)| e).collect();
    // Epoch 0 holds the untrained network, scored without dropout.
    let mut rows = vec![["0".to_string(), num(history.initial_train_mae), num(history.initial_score), "1".into()]];
    rows.extend(history.epochs.iter().map(|e| {
        [e.epoch.to_string(), num(e.train_loss), num(e.monitored_score), u8::from(saved.contains(&e.epoch)).to_string()]
    }));
    write_csv(&ws.path("training_history.csv"), &["epoch", "train_mae", "monitored_nrmse", "checkpoint_saved"], rows)?;
    Ok(TrainSummary { checkpoint, history })
}

fn layers_label(sizes: &[usize]) -> String {
    sizes.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(";")
}

/// HyperBand over depth, width and learning rate for the configured cell.
/// Each evaluation trains from scratch for its resource in epochs and
/// reports the best monitored NRMSE.
pub fn run_tune(ws: &Workspace) -> Result<SearchOutcome> {
    let sites = load_preprocessed(ws)?;
    let data = build_datasets(ws, &sites, None)?;
    let cfg = &ws.config;
    let monitor = match cfg.training.checkpoint_on {
        CheckpointOn::Test => &data.test,
        CheckpointOn::Train => &data.train,
    };
    let objective = |cand: &Candidate, epochs: usize| -> Result<f64> {
        let mut arch = cfg.architecture();
        arch.layer_sizes = cand.layer_sizes.clone();
        let init =
            init_params(&arch, data.train.n_features(), mix_seed(mix_seed(ws.seed, INIT_STREAM), cand.ordinal as u64))?;
        let mut tc = cfg.train_config(mix_seed(ws.seed, SHUFFLE_STREAM));
        tc.epochs = epochs;
        tc.learning_rate = cand.learning_rate;
        Ok(train(init, &data.train, monitor, &tc)?.0.monitored_score)
    };
    let outcome = hyperband_search(&cfg.hyperband_config(), objective, mix_seed(ws.seed, SEARCH_STREAM))?;

    let evals = outcome.evaluations.iter().map(|e| {
        [
            e.bracket.to_string(),
            e.rung.to_string(),
            e.candidate.ordinal.to_string(),
            layers_label(&e.candidate.layer_sizes),
            num(e.candidate.learning_rate),
            e.resource.to_string(),
            num(e.score),
        ]
    });
    write_csv(
        &ws.path("hyperband_evaluations.csv"),
        &["bracket", "rung", "candidate", "layer_sizes", "learning_rate", "epochs", "nrmse"],
        evals,
    )?;
    let rungs = outcome.rungs.iter().map(|r| {
        [
            r.bracket.to_string(),
            r.rung.to_string(),
            r.configs.to_string(),
            r.resource.to_string(),
            r.survivors.to_string(),
        ]
    });
    write_csv(&ws.path("hyperband_rungs.csv"), &["bracket", "rung", "configs", "epochs", "survivors"], rungs)?;
    let b = &outcome.best;
    write_csv(
        &ws.path("hyperband_best.csv"),
        &["cell", "layer_sizes", "learning_rate", "nrmse", "total_epochs"],
        [[
            cfg.model.cell.name().to_string(),
            layers_label(&b.layer_sizes),
            num(b.learning_rate),
            num(outcome.best_score),
            outcome.total_epochs.to_string(),
        ]],
    )?;
    Ok(outcome)
}

fn load_model_data(ws: &Workspace) -> Result<(CheckpointFile, SiteData, Datasets)> {
    let ck = load_checkpoint(&ws.checkpoint_path())?;
    let sites = load_preprocessed(ws)?;
    if sites[0].1.names() != ck.feature_names.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects features {:?}, data has {:?}",
            ck.feature_names,
            sites[0].1.names()
        )));
    }
    if ck.window != ws.config.window.length {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint window {} differs from configured {}",
            ck.window, ws.config.window.length
        )));
    }
    let n = ck.feature_names.len();
    let data = build_datasets(ws, &sites, Some(ck.standardizer.clone().unwrap_or_else(|| Standardizer::identity(n))))?;
    Ok((ck, sites, data))
}

/// Per-site NRMSE over the full test period, the growing season and the
/// extreme days, plus the test predictions.
pub fn run_evaluate(ws: &Workspace) -> Result<Vec<crate::eval::RegimeReport>> {
    let (ck, sites, data) = load_model_data(ws)?;
    let masks = site_masks(ws, &sites)?;
    let mut reports = Vec::new();
    let mut score_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for ((site_test, mask), (series, _)) in data.test_by_site.iter().zip(&masks).zip(&sites) {
        let preds = predict_dataset(&ck.params, site_test)?;
        let report = score_regimes(&series.site_id, site_test, &preds, mask)?;
        for regime in [EvalRegime::Full, EvalRegime::GrowingSeason, EvalRegime::Extremes] {
            let s = report.get(regime);
            score_rows.push([
                series.site_id.clone(),
                regime.name().to_string(),
                s.map_or_else(String::new, |s| num(s.nrmse)),
                s.map_or(0, |s| s.n_samples).to_string(),
            ]);
        }
        for (sample, p) in site_test.samples.iter().zip(&preds) {
            pred_rows.push([
                series.site_id.clone(),
                sample.target_date.to_string(),
                num(sample.target),
                num(*p),
                u8::from(mask.is_extreme(sample.target_date)).to_string(),
            ]);
        }
        reports.push(report);
    }
    write_csv(&ws.path("evaluation.csv"), &["site", "regime", "nrmse", "n_samples"], score_rows)?;
    write_csv(&ws.path("predictions.csv"), &["site", "date", "observed", "predicted", "extreme"], pred_rows)?;
    Ok(reports)
}

/// Permutation importance of every model input on the pooled test set.
pub fn run_importance(ws: &Workspace) -> Result<FiReport> {
    let (ck, _, data) = load_model_data(ws)?;
    let imp = &ws.config.importance;
    let report = permutation_importance(
        &ck.params,
        &data.test,
        imp.repetitions,
        mix_seed(ws.seed, IMPORTANCE_STREAM),
        imp.mode,
    )?;
    let rows = report
        .features
        .iter()
        .flat_map(|f| f.values.iter().enumerate().map(|(r, v)| [f.feature.clone(), (r + 1).to_string(), num(*v)]));
    write_csv(&ws.path("importance.csv"), &["feature", "repetition", "delta_nrmse"], rows)?;
    let mut ranked: Vec<_> = report.features.iter().collect();
    ranked.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.feature.cmp(&b.feature)));
    let summary = ranked.iter().enumerate().map(|(rank, f)| {
        let n = f.values.len() as f64;
        let var = f.values.iter().map(|v| (v - f.mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        [f.feature.clone(), num(f.mean), num(var.sqrt()), (rank + 1).to_string()]
    });
    write_csv(
        &ws.path("importance_summary.csv"),
        &["feature", "mean_delta_nrmse", "std_delta_nrmse", "rank"],
        summary,
    )?;
    write_csv(&ws.path("importance_baseline.csv"), &["baseline_nrmse"], [[num(report.baseline)]])?;
    Ok(report)
}

/// Relative paths of every file a stage writes, for callers that compare
/// runs.
pub fn output_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, base, out)?;
            } else {
                out.push(path.strip_prefix(base).expect("under base").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
