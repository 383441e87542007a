//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "FLUXRNN1"
//! version      u32      1
//! cell         u8       0 RNN, 1 GRU, 2 LSTM
//! n_features   u64
//! layers       u64 count, then u64 units per layer
//! dropout      f64
//! window       u64
//! features     u64 count, then per name: u64 byte length + UTF-8
//! pca          u8 flag; if 1: input names (as above), u64 p, u64 k,
//!              f64 means[p], scales[p], components[k·p],
//!              eigenvalues[p], explained_variance_ratio[k]
//! standardizer u8 flag; if 1: u64 n, f64 means[n], scales[n]
//! params       u64 array count, then per array: u64 length + f64 values,
//!              in the order of NetworkParams::tensors
//! score        f64      monitored score of the saved epoch
//! epoch        u64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{PcaModel, Standardizer};
use crate::io::write_atomic;
use crate::rnn::{Architecture, CellType, NetworkParams};

pub const MAGIC: &[u8; 8] = b"FLUXRNN1";
pub const FORMAT_VERSION: u32 = 1;

/// PCA applied to a named subset of the raw predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBlock {
    pub inputs: Vec<String>,
    pub model: PcaModel,
}

/// Everything needed to run a trained model on raw site data.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub params: NetworkParams,
    pub window: usize,
    /// Model inputs in column order; one per network input feature.
    pub feature_names: Vec<String>,
    pub pca: Option<PcaBlock>,
    pub standardizer: Option<Standardizer>,
    pub monitored_score: f64,
    pub epoch: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, values: &[f64]) {
        values.iter().for_each(|&v| self.f64(v));
    }
    fn strings(&mut self, values: &[String]) {
        self.len(values.len());
        for s in values {
            self.len(s.len());
            self.0.extend_from_slice(s.as_bytes());
        }
    }
}

pub fn encode_checkpoint(ck: &CheckpointFile) -> Vec<u8> {
    let p = &ck.params;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(p.cell.code());
    w.len(p.n_features);
    w.len(p.layers.len());
    p.layers.iter().for_each(|l| w.len(l.units));
    w.f64(p.dropout);
    w.len(ck.window);
    w.strings(&ck.feature_names);
    match &ck.pca {
        None => w.u8(0),
        Some(block) => {
            let m = &block.model;
            w.u8(1);
            w.strings(&block.inputs);
            w.len(m.n_inputs());
            w.len(m.n_components());
            w.f64s(&m.means);
            w.f64s(&m.scales);
            m.components.iter().for_each(|c| w.f64s(c));
            w.f64s(&m.eigenvalues);
            w.f64s(&m.explained_variance_ratio);
        }
    }
    match &ck.standardizer {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.len(s.means.len());
            w.f64s(&s.means);
            w.f64s(&s.scales);
        }
    }
    let tensors = p.tensors();
    w.len(tensors.len());
    for t in tensors {
        w.len(t.len());
        w.f64s(t);
    }
    w.f64(ck.monitored_score);
    w.u64(ck.epoch);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidCheckpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::TruncatedFile);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A count of items of `item_size` bytes each, checked against the
    /// bytes left so that no allocation exceeds the file size.
    fn count(&mut self, item_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::TruncatedFile)?;
        if n.checked_mul(item_size).is_none_or(|bytes| bytes > self.remaining()) {
            return Err(Error::TruncatedFile);
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.count(8)?;
        (0..n)
            .map(|_| {
                let len = self.count(1)?;
                let bytes = self.take(len)?;
                String::from_utf8(bytes.to_vec()).map_err(|_| invalid("name is not valid UTF-8"))
            })
            .collect()
    }
    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(invalid(format!("{what} flag must be 0 or 1, found {v}"))),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointFile> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) { Error::TruncatedFile } else { Error::BadMagic });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let code = r.u8()?;
    let cell = CellType::from_code(code).ok_or_else(|| invalid(format!("unknown cell code {code}")))?;
    let n_features = usize::try_from(r.u64()?).map_err(|_| invalid("feature count overflows"))?;
    let n_layers = r.count(8)?;
    let layer_sizes = (0..n_layers)
        .map(|_| usize::try_from(r.u64()?).map_err(|_| invalid("layer size overflows")))
        .collect::<Result<Vec<_>>>()?;
    let dropout = r.f64()?;
    Architecture::new(cell, layer_sizes.clone())
        .with_dropout(dropout)
        .validate()
        .map_err(|e| invalid(e.to_string()))?;
    let window = usize::try_from(r.u64()?).map_err(|_| invalid("window overflows"))?;
    if window == 0 {
        return Err(invalid("window length is zero"));
    }
    let feature_names = r.strings()?;
    if feature_names.len() != n_features {
        return Err(invalid(format!("{} feature names for {n_features} features", feature_names.len())));
    }

    let pca = if r.flag("pca")? {
        let inputs = r.strings()?;
        let p = r.count(8)?;
        let k = r.count(8)?;
        if inputs.len() != p || k > p {
            return Err(invalid(format!("pca block with {} names, p = {p}, k = {k}", inputs.len())));
        }
        let means = r.f64s(p)?;
        let scales = r.f64s(p)?;
        let components = (0..k).map(|_| r.f64s(p)).collect::<Result<Vec<_>>>()?;
        let eigenvalues = r.f64s(p)?;
        let explained_variance_ratio = r.f64s(k)?;
        Some(PcaBlock { inputs, model: PcaModel { means, scales, components, eigenvalues, explained_variance_ratio } })
    } else {
        None
    };

    let standardizer = if r.flag("standardizer")? {
        let n = r.count(16)?;
        if n != n_features {
            return Err(invalid(format!("standardizer has {n} features, network {n_features}")));
        }
        Some(Standardizer { means: r.f64s(n)?, scales: r.f64s(n)? })
    } else {
        None
    };

    // Shapes come from the header; array lengths are checked before reading.
    let gates = cell.gates();
    let mut expected = Vec::with_capacity(3 * n_layers + 2);
    let mut fan_in = n_features;
    for &units in &layer_sizes {
        let g = gates * units;
        let input = g.checked_mul(fan_in).ok_or_else(|| invalid("layer too large"))?;
        expected.extend([input, g * units, g]);
        fan_in = units;
    }
    expected.extend([fan_in, 1]);
    let n_arrays = r.count(8)?;
    if n_arrays != expected.len() {
        return Err(invalid(format!("{n_arrays} parameter arrays, expected {}", expected.len())));
    }
    let mut arrays = Vec::with_capacity(n_arrays);
    for &want in &expected {
        let len = r.count(8)?;
        if len != want {
            return Err(invalid(format!("parameter array of length {len}, expected {want}")));
        }
        arrays.push(r.f64s(len)?);
    }
    let monitored_score = r.f64()?;
    let epoch = r.u64()?;
    if r.remaining() != 0 {
        return Err(invalid(format!("{} trailing bytes", r.remaining())));
    }

    let mut params = NetworkParams::zeros(cell, &layer_sizes, n_features, dropout);
    for (dst, src) in params.tensors_mut().into_iter().zip(&arrays) {
        dst.copy_from_slice(src);
    }
    Ok(CheckpointFile { params, window, feature_names, pca, standardizer, monitored_score, epoch })
}

pub fn save_checkpoint(path: &Path, ck: &CheckpointFile) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::init_params;

    fn sample(cell: CellType) -> CheckpointFile {
        let arch = Architecture::new(cell, vec![4, 3]);
        CheckpointFile {
            params: init_params(&arch, 3, 11).unwrap(),
            window: 7,
            feature_names: vec!["RAD".into(), "PC1".into(), "NOISE".into()],
            pca: Some(PcaBlock {
                inputs: vec!["VI_A".into(), "VI_B".into()],
                model: PcaModel {
                    means: vec![0.5, -1.0],
                    scales: vec![2.0, 0.25],
                    components: vec![vec![0.6, 0.8]],
                    eigenvalues: vec![1.5, 0.5],
                    explained_variance_ratio: vec![0.75],
                },
            }),
            standardizer: Some(Standardizer { means: vec![1.0, 0.0, 0.0], scales: vec![3.0, 1.0, 1.0] }),
            monitored_score: 0.123_456_789,
            epoch: 42,
        }
    }

    #[test]
    fn round_trip_all_cells() {
        for cell in [CellType::Rnn, CellType::Gru, CellType::Lstm] {
            let ck = sample(cell);
            let bytes = encode_checkpoint(&ck);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_checkpoint(&sample(CellType::Lstm));
        assert_eq!(&bytes[..8], b"FLUXRNN1");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(bytes[12], 2);
        assert_eq!(&bytes[13..21], &3u64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&sample(CellType::Gru));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::BadMagic)));
        let mut bytes = encode_checkpoint(&sample(CellType::Gru));
        bytes[8] = 2;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::VersionUnsupported(2))));
        assert!(matches!(decode_checkpoint(b"NOPE"), Err(Error::BadMagic)));
        assert!(matches!(decode_checkpoint(b"FLUX"), Err(Error::TruncatedFile)));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&sample(CellType::Rnn));
        for cut in 0..bytes.len() {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::TruncatedFile), "cut {cut}: {err}");
        }
    }

    #[test]
    fn huge_declared_length_does_not_allocate() {
        let ck = CheckpointFile { pca: None, standardizer: None, ..sample(CellType::Rnn) };
        let mut bytes = encode_checkpoint(&ck);
        // The feature-name count follows the fixed header.
        let at = 8 + 4 + 1 + 8 + 8 + 2 * 8 + 8 + 8;
        bytes[at..at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::TruncatedFile)));
    }

    #[test]
    fn shape_mismatch_is_invalid() {
        let mut bytes = encode_checkpoint(&sample(CellType::Rnn));
        bytes.push(0);
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::InvalidCheckpoint(_))));
        let mut bytes = encode_checkpoint(&sample(CellType::Rnn));
        bytes[12] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::InvalidCheckpoint(_))));
    }
}
