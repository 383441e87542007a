//! Predictor construction: vegetation indices from band means, Sentinel-1
//! backscatter transforms, PCA reduction of VI matrices, and per-feature
//! standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::FeatureTable;

/// Per-date surface reflectances. `None` marks a band that is unavailable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BandMeans {
    pub green: Option<f64>,
    pub red: Option<f64>,
    pub red_edge1: Option<f64>,
    pub nir: Option<f64>,
    pub swir1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VegetationIndex {
    Kndvi,
    Ndmi,
    Mcari,
    Dswi,
}

impl VegetationIndex {
    pub const ALL: [VegetationIndex; 4] = [Self::Kndvi, Self::Ndmi, Self::Mcari, Self::Dswi];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kndvi => "kNDVI",
            Self::Ndmi => "NDMI",
            Self::Mcari => "MCARI",
            Self::Dswi => "DSWI",
        }
    }
}

fn band(index: VegetationIndex, name: &'static str, value: Option<f64>) -> Result<f64> {
    value.ok_or(Error::MissingBand { index: index.name(), band: name })
}

fn ratio(index: VegetationIndex, num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        Err(Error::DivisionByZero(index.name()))
    } else {
        Ok(num / den)
    }
}

pub fn compute_vi(index: VegetationIndex, bands: &BandMeans) -> Result<f64> {
    use VegetationIndex::*;
    match index {
        Kndvi => {
            let n = band(index, "N", bands.nir)?;
            let r = band(index, "R", bands.red)?;
            let ndvi = ratio(index, n - r, n + r)?;
            Ok((ndvi * ndvi).tanh())
        }
        Ndmi => {
            let n = band(index, "N", bands.nir)?;
            let s1 = band(index, "S1", bands.swir1)?;
            ratio(index, n - s1, n + s1)
        }
        Mcari => {
            let g = band(index, "G", bands.green)?;
            let r = band(index, "R", bands.red)?;
            let re1 = band(index, "RE1", bands.red_edge1)?;
            Ok(((re1 - r) - 0.2 * (re1 - g)) * ratio(index, re1, r)?)
        }
        Dswi => {
            let n = band(index, "N", bands.nir)?;
            let g = band(index, "G", bands.green)?;
            let s1 = band(index, "S1", bands.swir1)?;
            let r = band(index, "R", bands.red)?;
            ratio(index, n + g, s1 + r)
        }
    }
}

/// Linear backscatter power to decibels.
pub fn s1_to_db(linear: f64) -> Result<f64> {
    if linear > 0.0 {
        Ok(10.0 * linear.log10())
    } else {
        Err(Error::NonPositiveInput(linear))
    }
}

/// Terrain-flattened backscatter in linear power units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaNaught {
    pub vv: f64,
    pub vh: f64,
}

/// Dual-polarization radar vegetation index, `4·VH / (VV + VH)`.
pub fn dprvi(g: GammaNaught) -> Result<f64> {
    if g.vv < 0.0 || g.vh < 0.0 {
        return Err(Error::InvalidArgument("backscatter must be non-negative".into()));
    }
    let total = g.vv + g.vh;
    if total == 0.0 {
        return Err(Error::DivisionByZero("DpRVI"));
    }
    Ok(4.0 * g.vh / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaConfig {
    pub standardize: bool,
    /// Fixed component count; when unset it is chosen by `variance_target`.
    pub k: Option<usize>,
    pub variance_target: f64,
    pub max_components: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { standardize: true, k: None, variance_target: 0.99, max_components: 18 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// `k` rows of length `p`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the (scaled) covariance, all `p` of them, descending.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_inputs(&self) -> usize {
        self.means.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Maps component scores back to input space.
    pub fn reconstruct(&self, scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let p = self.n_inputs();
        scores
            .iter()
            .map(|z| {
                (0..p)
                    .map(|j| {
                        let s: f64 = self.components.iter().zip(z).map(|(c, zi)| c[j] * zi).sum();
                        self.means[j] + self.scales[j] * s
                    })
                    .collect()
            })
            .collect()
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors (as rows), unsorted.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let akp = row[p];
                    let akq = row[q];
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (head, tail) = a.split_at_mut(q);
                for (apk, aqk) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    let (x, y) = (*apk, *aqk);
                    *apk = c * x - s * y;
                    *aqk = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

/// Flips `vector` so that its largest-magnitude coordinate is positive.
pub fn fix_sign(vector: &mut [f64]) {
    let mut best = 0;
    for (i, x) in vector.iter().enumerate() {
        if x.abs() > vector[best].abs() {
            best = i;
        }
    }
    if vector.get(best).is_some_and(|&x| x < 0.0) {
        vector.iter_mut().for_each(|x| *x = -*x);
    }
}

fn column_stats(rows: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let stds = (0..p)
        .map(|j| {
            let ss: f64 = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    (means, stds)
}

pub fn pca_fit(rows: &[Vec<f64>], config: &PcaConfig) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::ShapeMismatch("ragged or empty PCA input".into()));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("PCA input contains non-finite values".into()));
    }
    if let Some(k) = config.k {
        if k == 0 || k > p {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={p}")));
        }
    }
    let (means, stds) = column_stats(rows, p);
    if let Some(j) = stds.iter().position(|&s| s == 0.0) {
        return Err(Error::DegenerateMatrix(j));
    }
    let scales = if config.standardize { stds } else { vec![1.0; p] };

    let n = rows.len() as f64;
    let z: Vec<Vec<f64>> = rows.iter().map(|r| (0..p).map(|j| (r[j] - means[j]) / scales[j]).collect()).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let s: f64 = z.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1.0);
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let trace: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let ratios: Vec<f64> = eigenvalues.iter().map(|v| (v.max(0.0) / trace).clamp(0.0, 1.0)).collect();

    let k = config.k.unwrap_or_else(|| {
        let mut cumulative = 0.0;
        let mut k = p;
        for (i, r) in ratios.iter().enumerate() {
            cumulative += r;
            if cumulative > config.variance_target {
                k = i + 1;
                break;
            }
        }
        k.min(config.max_components).max(1)
    });
    let components = order[..k]
        .iter()
        .map(|&i| {
            let mut c = vectors[i].clone();
            fix_sign(&mut c);
            c
        })
        .collect();
    Ok(PcaModel { means, scales, components, eigenvalues, explained_variance_ratio: ratios[..k].to_vec() })
}

pub fn pca_transform(model: &PcaModel, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = model.n_inputs();
    rows.iter()
        .map(|r| {
            if r.len() != p {
                return Err(Error::ShapeMismatch(format!("expected {p} columns, got {}", r.len())));
            }
            let centred: Vec<f64> = (0..p).map(|j| (r[j] - model.means[j]) / model.scales[j]).collect();
            Ok(model.components.iter().map(|c| c.iter().zip(&centred).map(|(a, b)| a * b).sum()).collect())
        })
        .collect()
}

/// Per-feature z-scoring fitted on training rows. Constant features get a
/// unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of `table` selected by `rows`.
    pub fn fit(table: &FeatureTable, rows: impl Iterator<Item = usize> + Clone) -> Result<Self> {
        let mut means = Vec::with_capacity(table.n_features());
        let mut scales = Vec::with_capacity(table.n_features());
        for c in 0..table.n_features() {
            let col = table.dense_column(c)?;
            let picked: Vec<f64> = rows.clone().map(|r| col[r]).collect();
            if picked.is_empty() {
                return Err(Error::EmptySplit("no rows to fit the standardizer"));
            }
            let n = picked.len() as f64;
            let mean = picked.iter().sum::<f64>() / n;
            let var = picked.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            scales.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { means, scales })
    }

    pub fn identity(n: usize) -> Self {
        Self { means: vec![0.0; n], scales: vec![1.0; n] }
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.n_features() != self.means.len() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer has {} features, table {}",
                self.means.len(),
                table.n_features()
            )));
        }
        let columns = (0..table.n_features())
            .map(|c| table.column(c).iter().map(|v| v.map(|x| (x - self.means[c]) / self.scales[c])).collect())
            .collect();
        FeatureTable::new(table.names().to_vec(), columns, table.n_rows())
    }

    /// Standardizes a row-major `rows × n_features` window in place.
    pub fn apply_window(&self, window: &mut [f64]) {
        let n = self.means.len();
        for row in window.chunks_mut(n) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.means[j]) / self.scales[j];
            }
        }
    }
}
