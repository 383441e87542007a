//! Per-site CSV files and atomic output writes.
//!
//! A site file has the header `date,gpp,qc,<features...>`, one row per
//! consecutive calendar day, ISO dates and empty cells for missing values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{Date, FeatureTable, SiteSeries};

const FIXED_COLUMNS: [&str; 3] = ["date", "gpp", "qc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteInfo {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_cell(path: &Path, line: usize, column: &str, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(parse_error(path, line, format!("column `{column}`: cannot parse `{cell}` as a number"))),
    }
}

/// Reads one site file. Values are loaded as written; quality masking is
/// left to [`crate::timeseries::filter_gpp_quality`].
pub fn load_feature_csv(path: &Path, site: &SiteInfo) -> Result<(SiteSeries, FeatureTable)> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_slice());
    let mut records = reader.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(parse_error(path, 1, e.to_string())),
        None => return Err(parse_error(path, 1, "missing header")),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < FIXED_COLUMNS.len() || header[..3] != FIXED_COLUMNS {
        return Err(parse_error(path, 1, "header must start with date,gpp,qc"));
    }
    let names: Vec<String> = header[3..].to_vec();
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(parse_error(path, 1, format!("feature column {} has an empty name", i + 1)));
        }
        if FIXED_COLUMNS.contains(&name.as_str()) || names[..i].contains(name) {
            return Err(Error::DuplicateFeature(name.clone()));
        }
    }

    let mut start: Option<Date> = None;
    let mut prev: Option<Date> = None;
    let mut gpp = Vec::new();
    let mut qc = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (k, record) in records.enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_error(path, line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_error(path, line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let raw_date = record[0].trim();
        let date = Date::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| parse_error(path, line, format!("invalid date `{raw_date}`")))?;
        if let Some(p) = prev {
            if p.succ_opt() != Some(date) {
                return Err(Error::NonConsecutiveDates { path: path.to_path_buf(), line });
            }
        }
        start.get_or_insert(date);
        prev = Some(date);
        gpp.push(parse_cell(path, line, "gpp", &record[1])?);
        qc.push(parse_cell(path, line, "qc", &record[2])?);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse_cell(path, line, &names[c], &record[c + 3])?);
        }
    }
    let start = start.ok_or_else(|| parse_error(path, 1, "no data rows"))?;
    let rows = gpp.len();
    let series = SiteSeries::new(site.id.clone(), site.latitude, site.longitude, start, gpp, qc)?;
    let table = FeatureTable::new(names, columns, rows)?;
    Ok((series, table))
}

pub(crate) fn format_value(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| v.to_string())
}

/// Writes a site file in the format read by [`load_feature_csv`].
pub fn write_feature_csv(path: &Path, series: &SiteSeries, table: &FeatureTable) -> Result<()> {
    if table.n_rows() != series.len() {
        return Err(Error::LengthMismatch { expected: series.len(), actual: table.n_rows() });
    }
    let mut header: Vec<String> = FIXED_COLUMNS.map(String::from).to_vec();
    header.extend(table.names().iter().cloned());
    let rows = (0..series.len()).map(|i| {
        let mut row = vec![series.date(i).to_string(), format_value(series.gpp()[i]), format_value(series.qc()[i])];
        row.extend((0..table.n_features()).map(|c| format_value(table.value(i, c))));
        row
    });
    write_csv(path, &header, rows)
}

/// Serializes a table of string cells and writes it atomically.
pub fn write_csv<I, R, S>(path: &Path, header: &[S], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    S: AsRef<str>,
{
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    writer.write_record(header.iter().map(|h| h.as_ref())).map_err(to_err)?;
    for row in rows {
        writer.write_record(row).map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
