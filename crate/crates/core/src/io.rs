//! Series files and protocol manifests.
//!
//! A series file is either a headerless single-column CSV or, when the path
//! ends in `.f64`, raw little-endian 64-bit floats. A manifest is a JSON
//! object listing one series file per operating point, relative to the
//! manifest's own directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Label, Protocol, QuasiStaticRecord, TimeSeries};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 1.0;

pub fn read_series_samples(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_binary(path) {
        if bytes.len() % 8 != 0 {
            return Err(Error::parse(path, "binary series length is not a multiple of 8"));
        }
        return Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect());
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_series(path: &Path, sample_rate_hz: f64) -> Result<TimeSeries> {
    let samples = read_series_samples(path)?;
    TimeSeries::new(samples, sample_rate_hz).map_err(|e| Error::parse(path, e))
}

pub fn write_series(path: &Path, samples: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(samples.len() * 20);
    if is_binary(path) {
        for x in samples {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    } else {
        for x in samples {
            // Display for f64 is the shortest representation that round-trips.
            writeln!(buf, "{x}").expect("write to Vec");
        }
    }
    write_bytes(path, &buf)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "f64")
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub phi_ratio: f64,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub air_flow_slpm: f64,
    pub transition_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    /// Loads every referenced series and validates the result as a protocol.
    pub fn load(path: &Path) -> Result<Protocol> {
        let manifest = Self::read(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rate = manifest.sample_rate_hz.unwrap_or(DEFAULT_SAMPLE_RATE_HZ);
        let records = manifest
            .records
            .iter()
            .map(|r| {
                let series = read_series(&base.join(&r.path), rate)?;
                QuasiStaticRecord::new(r.phi_ratio, series, r.label)
            })
            .collect::<Result<Vec<_>>>()?;
        Protocol::new(
            manifest.name,
            manifest.air_flow_slpm,
            manifest.transition_ratio,
            records,
        )
    }
}

/// Writes each record as `<series_dir>/<name>_<phi>.<ext>` next to the
/// manifest and returns the manifest path.
pub fn write_protocol(manifest_path: &Path, protocol: &Protocol, binary: bool) -> Result<PathBuf> {
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = sanitize(&protocol.name);
    let ext = if binary { "f64" } else { "csv" };
    let mut records = Vec::with_capacity(protocol.records().len());
    for r in protocol.records() {
        let rel = format!("{stem}/phi_{:.3}.{ext}", r.phi_ratio);
        write_series(&base.join(&rel), r.series.samples())?;
        records.push(ManifestRecord {
            phi_ratio: r.phi_ratio,
            path: rel,
            label: r.label,
        });
    }
    let manifest = Manifest {
        name: protocol.name.clone(),
        air_flow_slpm: protocol.air_flow_slpm,
        transition_ratio: protocol.transition_ratio,
        sample_rate_hz: protocol.records().first().map(|r| r.series.sample_rate_hz()),
        records,
    };
    write_json(manifest_path, &manifest)?;
    Ok(manifest_path.to_path_buf())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

/// Writes comma-separated rows with LF endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}
