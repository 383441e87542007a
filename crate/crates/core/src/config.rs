//! TOML pipeline configuration. Every section is optional and falls back to
//! the defaults below; unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PermutationMode;
use crate::extremes::{ExtremeConfig, TailMode, DEFAULT_MIN_RUN, DEFAULT_QUANTILE};
use crate::features::PcaConfig;
use crate::io::SiteInfo;
use crate::rnn::{Architecture, CellType, InitScheme, DEFAULT_DROPOUT};
use crate::solar::DEFAULT_TRANSMITTANCE;
use crate::synth::{SynthSpec, RADIATION_FEATURE};
use crate::timeseries::{SplitSpec, DEFAULT_QC_MIN, DEFAULT_VALID_MIN, DEFAULT_WINDOW};
use crate::training::{AdamConfig, BracketSizing, HyperBandConfig, SearchSpace, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteEntry {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Site file; defaults to `<data_dir>/<id>.csv`.
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

impl SiteEntry {
    pub fn info(&self) -> SiteInfo {
        SiteInfo { id: self.id.clone(), latitude: self.latitude, longitude: self.longitude }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_years: Vec<i32>,
    pub test_years: Vec<i32>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_years: vec![2016, 2017, 2018], test_years: vec![2019, 2020] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub length: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { length: DEFAULT_WINDOW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub cell: CellType,
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    pub init: InitScheme,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { cell: CellType::Lstm, layer_sizes: vec![64], dropout: DEFAULT_DROPOUT, init: InitScheme::default() }
    }
}

/// Which set picks the retained checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointOn {
    #[default]
    Test,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub checkpoint_on: CheckpointOn,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            checkpoint_on: CheckpointOn::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperbandSection {
    pub max_resource: usize,
    pub eta: usize,
    pub max_layers: usize,
    pub units: Vec<usize>,
    pub lr_min: f64,
    pub lr_max: f64,
    pub sizing: BracketSizing,
}

impl Default for HyperbandSection {
    fn default() -> Self {
        let h = HyperBandConfig::default();
        Self {
            max_resource: h.max_resource,
            eta: h.eta,
            max_layers: h.space.max_layers,
            units: h.space.units,
            lr_min: h.space.lr_min,
            lr_max: h.space.lr_max,
            sizing: h.sizing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtremesSection {
    pub quantile: f64,
    pub min_run: usize,
    pub tail: TailMode,
}

impl Default for ExtremesSection {
    fn default() -> Self {
        Self { quantile: DEFAULT_QUANTILE, min_run: DEFAULT_MIN_RUN, tail: TailMode::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualitySection {
    pub qc_min: f64,
    pub valid_min: f64,
}

impl Default for QualitySection {
    fn default() -> Self {
        Self { qc_min: DEFAULT_QC_MIN, valid_min: DEFAULT_VALID_MIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    pub enabled: bool,
    /// Columns starting with this prefix are reduced.
    pub prefix: String,
    pub standardize: bool,
    pub k: Option<usize>,
    pub variance_target: f64,
    pub max_components: usize,
}

impl Default for PcaSection {
    fn default() -> Self {
        let p = PcaConfig::default();
        Self {
            enabled: true,
            prefix: "VI_".into(),
            standardize: p.standardize,
            k: p.k,
            variance_target: p.variance_target,
            max_components: p.max_components,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiationSection {
    /// Add a clear-sky radiation column when the site file has none.
    pub enabled: bool,
    pub feature: String,
    pub transmittance: f64,
}

impl Default for RadiationSection {
    fn default() -> Self {
        Self { enabled: true, feature: RADIATION_FEATURE.into(), transmittance: DEFAULT_TRANSMITTANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImportanceSection {
    pub repetitions: usize,
    pub mode: PermutationMode,
}

impl Default for ImportanceSection {
    fn default() -> Self {
        Self { repetitions: 10, mode: PermutationMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Site files; defaults to `<out>/data`.
    pub data_dir: Option<PathBuf>,
    /// Output directory; `--out` takes precedence.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// When empty, the single synthetic site described by `[synth]` is used.
    pub sites: Vec<SiteEntry>,
    pub split: SplitSection,
    pub window: WindowSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub hyperband: HyperbandSection,
    pub extremes: ExtremesSection,
    pub quality: QualitySection,
    pub pca: PcaSection,
    pub radiation: RadiationSection,
    pub importance: ImportanceSection,
    pub synth: SynthSpec,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            sites: Vec::new(),
            split: SplitSection::default(),
            window: WindowSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            hyperband: HyperbandSection::default(),
            extremes: ExtremesSection::default(),
            quality: QualitySection::default(),
            pca: PcaSection::default(),
            radiation: RadiationSection::default(),
            importance: ImportanceSection::default(),
            synth: SynthSpec::default(),
            paths: PathsSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_err(msg()))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative site paths and directories
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.sites.iter_mut().filter_map(|s| s.csv.as_mut()).for_each(resolve);
        cfg.paths.data_dir.as_mut().map(resolve);
        cfg.paths.out_dir.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut files = BTreeSet::new();
        for s in &self.sites {
            check(!s.id.is_empty() && !s.id.contains(['/', '\\']) && s.id != "." && s.id != "..", || {
                format!("site id `{}` is not a valid file stem", s.id)
            })?;
            check(ids.insert(&s.id), || format!("site `{}` listed twice", s.id))?;
            check((-90.0..=90.0).contains(&s.latitude) && (-180.0..=180.0).contains(&s.longitude), || {
                format!("site `{}` has coordinates out of range", s.id)
            })?;
            if let Some(csv) = &s.csv {
                check(files.insert(csv), || format!("site file {} referenced twice", csv.display()))?;
            }
        }
        if let (Some(d), Some(o)) = (&self.paths.data_dir, &self.paths.out_dir) {
            check(d != o, || "data_dir and out_dir must differ".into())?;
        }
        self.split_spec()?;
        check(self.window.length >= 1, || "window.length must be at least 1".into())?;
        self.architecture().validate().map_err(|e| config_err(e.to_string()))?;

        let t = &self.training;
        check(t.batch_size >= 1, || "training.batch_size must be at least 1".into())?;
        check(t.learning_rate > 0.0 && t.learning_rate.is_finite(), || {
            "training.learning_rate must be positive".into()
        })?;
        check((0.0..1.0).contains(&t.beta1) && (0.0..1.0).contains(&t.beta2), || {
            "training.beta1 and beta2 must lie in [0, 1)".into()
        })?;
        check(t.epsilon > 0.0, || "training.epsilon must be positive".into())?;

        self.hyperband_config().validate().map_err(|e| config_err(e.to_string()))?;

        let e = &self.extremes;
        check(e.quantile > 0.0 && e.quantile < 0.5, || "extremes.quantile must lie in (0, 0.5)".into())?;
        check(e.min_run >= 1, || "extremes.min_run must be at least 1".into())?;

        let q = &self.quality;
        check((0.0..=1.0).contains(&q.qc_min) && (0.0..=1.0).contains(&q.valid_min), || {
            "quality.qc_min and valid_min must lie in [0, 1]".into()
        })?;

        let p = &self.pca;
        check(!p.prefix.is_empty(), || "pca.prefix must not be empty".into())?;
        check(p.variance_target > 0.0 && p.variance_target <= 1.0, || "pca.variance_target must lie in (0, 1]".into())?;
        check(p.max_components >= 1, || "pca.max_components must be at least 1".into())?;
        check(p.k.is_none_or(|k| k >= 1), || "pca.k must be at least 1".into())?;

        let r = &self.radiation;
        check(!r.feature.is_empty(), || "radiation.feature must not be empty".into())?;
        check(r.transmittance > 0.0 && r.transmittance <= 1.0, || "radiation.transmittance must lie in (0, 1]".into())?;

        check(self.importance.repetitions >= 1, || "importance.repetitions must be at least 1".into())?;
        self.synth.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        check(!self.split.train_years.is_empty() && !self.split.test_years.is_empty(), || {
            "split needs at least one train and one test year".into()
        })?;
        SplitSpec::new(self.split.train_years.iter().copied(), self.split.test_years.iter().copied())
    }

    pub fn architecture(&self) -> Architecture {
        let m = &self.model;
        Architecture::new(m.cell, m.layer_sizes.clone()).with_dropout(m.dropout).with_init(m.init)
    }

    pub fn train_config(&self, shuffle_seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam: AdamConfig { beta1: t.beta1, beta2: t.beta2, epsilon: t.epsilon },
            shuffle_seed,
        }
    }

    pub fn hyperband_config(&self) -> HyperBandConfig {
        let h = &self.hyperband;
        HyperBandConfig {
            max_resource: h.max_resource,
            eta: h.eta,
            space: SearchSpace { max_layers: h.max_layers, units: h.units.clone(), lr_min: h.lr_min, lr_max: h.lr_max },
            sizing: h.sizing,
        }
    }

    pub fn extreme_config(&self) -> ExtremeConfig {
        ExtremeConfig { quantile: self.extremes.quantile, min_run: self.extremes.min_run, tail: self.extremes.tail }
    }

    pub fn pca_config(&self) -> PcaConfig {
        let p = &self.pca;
        PcaConfig {
            standardize: p.standardize,
            k: p.k,
            variance_target: p.variance_target,
            max_components: p.max_components,
        }
    }

    /// Configured sites, or the synthetic site when none are listed.
    pub fn site_entries(&self) -> Vec<SiteEntry> {
        if self.sites.is_empty() {
            vec![SiteEntry {
                id: self.synth.site_id.clone(),
                latitude: self.synth.latitude,
                longitude: self.synth.longitude,
                csv: None,
            }]
        } else {
            self.sites.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in
            ["sed = 1", "[model]\ncells = \"gru\"", "[[sites]]\nid = \"A\"\nlatitude = 1.0\nlongitude = 2.0\nlat = 3"]
        {
            assert!(matches!(PipelineConfig::from_toml_str(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn sections_parse() {
        let doc = r#"
            seed = 7
            [[sites]]
            id = "DE-Hai"
            latitude = 51.08
            longitude = 10.45
            csv = "data/hai.csv"
            [model]
            cell = "gru"
            layer_sizes = [32, 16]
            init = "inv_sqrt_features"
            [training]
            epochs = 5
            checkpoint_on = "train"
            [extremes]
            tail = "negative_only"
            [importance]
            mode = "per_timestep"
        "#;
        let cfg = PipelineConfig::from_toml_str(doc).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.cell, CellType::Gru);
        assert_eq!(cfg.architecture().layer_sizes, vec![32, 16]);
        assert_eq!(cfg.training.checkpoint_on, CheckpointOn::Train);
        assert_eq!(cfg.extreme_config().tail, TailMode::NegativeOnly);
        assert_eq!(cfg.importance.mode, PermutationMode::PerTimestep);
        assert_eq!(cfg.site_entries()[0].id, "DE-Hai");
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        let docs = [
            "[model]\ndropout = 1.0",
            "[model]\nlayer_sizes = []",
            "[model]\nlayer_sizes = [513]",
            "[window]\nlength = 0",
            "[training]\nlearning_rate = 0.0",
            "[extremes]\nquantile = 1.5",
            "[pca]\nvariance_target = 0.0",
            "[hyperband]\neta = 1",
            "[split]\ntrain_years = [2019]\ntest_years = [2019]",
            "[synth]\nn_years = 0",
            "[[sites]]\nid = \"A\"\nlatitude = 1.0\nlongitude = 2.0\n[[sites]]\nid = \"A\"\nlatitude = 1.0\nlongitude = 2.0",
        ];
        for doc in docs {
            let err = PipelineConfig::from_toml_str(doc).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{doc}: {err}");
        }
    }

    #[test]
    fn synthetic_site_is_the_fallback() {
        let cfg = PipelineConfig::default();
        let sites = cfg.site_entries();
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].id, cfg.synth.site_id);
    }
}
