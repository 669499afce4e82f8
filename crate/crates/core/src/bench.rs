//! Wall-clock timing of per-record detector inference.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Detector;
use crate::series::{Protocol, TimeSeries};

pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub per_repeat: Vec<f64>,
}

impl Timing {
    fn from_samples(per_repeat: Vec<f64>) -> Self {
        let mut sorted = per_repeat.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_s = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            median_s,
            min_s: sorted[0],
            max_s: sorted[n - 1],
            per_repeat,
        }
    }
}

/// Times `detector.metric(series)` after one untimed warm-up call.
pub fn time_detector(detector: &Detector, series: &TimeSeries, repeats: usize) -> Result<Timing> {
    time_fn(|| detector.metric(series).map(|_| ()), repeats)
}

/// Times an arbitrary fallible closure with the same protocol.
pub fn time_fn<F: FnMut() -> Result<()>>(mut f: F, repeats: usize) -> Result<Timing> {
    if repeats < MIN_REPEATS {
        return Err(Error::ConfigInvalid(format!(
            "at least {MIN_REPEATS} repeats are required"
        )));
    }
    f()?;
    let mut per_repeat = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        per_repeat.push(start.elapsed().as_secs_f64());
    }
    Ok(Timing::from_samples(per_repeat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub detector: String,
    pub protocol: String,
    pub phi_ratio: f64,
    pub timing: Timing,
}

/// One row per detector and record, detectors outermost, then protocols and
/// records in their given order. Runs serially.
pub fn bench_suite(detectors: &[Detector], protocols: &[Protocol], repeats: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for d in detectors {
        for p in protocols {
            for rec in p.records() {
                log::info!("timing {} on {} at {}", d.name(), p.name, rec.phi_ratio);
                rows.push(BenchRow {
                    detector: d.name().into(),
                    protocol: p.name.clone(),
                    phi_ratio: rec.phi_ratio,
                    timing: time_detector(d, &rec.series, repeats)?,
                });
            }
        }
    }
    Ok(rows)
}

pub const BENCH_CSV_HEADER: [&str; 4] = ["detector", "protocol", "phi_ratio", "median_s"];

pub fn bench_csv_rows(rows: &[BenchRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.detector.clone(),
                r.protocol.clone(),
                r.phi_ratio.to_string(),
                r.timing.median_s.to_string(),
            ]
        })
        .collect()
}

/// Median of the per-record medians of one detector.
pub fn detector_median(rows: &[BenchRow], detector: &str) -> Option<f64> {
    let mut m: Vec<f64> = rows
        .iter()
        .filter(|r| r.detector == detector)
        .map(|r| r.timing.median_s)
        .collect();
    if m.is_empty() {
        return None;
    }
    Some(Timing::from_samples(std::mem::take(&mut m)).median_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    /// Threads used inside timed regions; the harness is serial.
    pub threads: usize,
    pub available_parallelism: usize,
    pub os: String,
    pub arch: String,
    pub repeats: usize,
    pub crate_version: String,
}

impl BenchEnvironment {
    pub fn capture(repeats: usize) -> Self {
        Self {
            threads: 1,
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            repeats,
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}
