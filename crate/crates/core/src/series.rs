//! Pressure time-series containers, min-max scaling, sliding windows and
//! train/validation/test splits.
//!
//! Every detector consumes data through this module: a record is scaled with
//! parameters fit on the blowout training split, cut into stride-1 windows of
//! length `t_x`, and each window is paired with the sample that follows it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when matching operating-point ratios read from manifests.
pub const RATIO_EPS: f64 = 1e-9;

pub fn ratio_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATIO_EPS
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSeries("no samples".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSeries(format!("sample {i} is not finite")));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Unhealthy,
}

impl Label {
    /// Conditions strictly below the transition are near blowout.
    pub fn for_ratio(phi_ratio: f64, transition_ratio: f64) -> Label {
        if phi_ratio < transition_ratio && !ratio_eq(phi_ratio, transition_ratio) {
            Label::Unhealthy
        } else {
            Label::Healthy
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Healthy => f.write_str("healthy"),
            Label::Unhealthy => f.write_str("unhealthy"),
        }
    }
}

/// A series recorded at one fixed operating condition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiStaticRecord {
    pub phi_ratio: f64,
    pub series: TimeSeries,
    pub label: Option<Label>,
}

impl QuasiStaticRecord {
    pub fn new(phi_ratio: f64, series: TimeSeries, label: Option<Label>) -> Result<Self> {
        if !(phi_ratio >= 1.0 && phi_ratio.is_finite()) {
            return Err(Error::InvalidProtocol(format!(
                "phi ratio {phi_ratio} is below the blowout condition"
            )));
        }
        Ok(Self {
            phi_ratio,
            series,
            label,
        })
    }

    pub fn is_blowout(&self) -> bool {
        ratio_eq(self.phi_ratio, 1.0)
    }
}

/// Records for one air-flow setting, ordered from blowout towards stable
/// operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub name: String,
    pub air_flow_slpm: f64,
    pub transition_ratio: f64,
    records: Vec<QuasiStaticRecord>,
}

impl Protocol {
    pub fn new(
        name: impl Into<String>,
        air_flow_slpm: f64,
        transition_ratio: f64,
        records: Vec<QuasiStaticRecord>,
    ) -> Result<Self> {
        let name = name.into();
        let bad = |msg: String| Error::InvalidProtocol(format!("{name}: {msg}"));
        if !(air_flow_slpm > 0.0) {
            return Err(bad(format!("air flow must be positive, got {air_flow_slpm}")));
        }
        let first = records.first().ok_or_else(|| bad("no records".into()))?;
        if first.phi_ratio != 1.0 {
            return Err(bad(format!(
                "records must start at phi ratio 1, found {}",
                first.phi_ratio
            )));
        }
        for pair in records.windows(2) {
            if pair[1].phi_ratio <= pair[0].phi_ratio {
                return Err(bad(format!(
                    "phi ratios not strictly increasing at {}",
                    pair[1].phi_ratio
                )));
            }
        }
        if !records.iter().any(|r| ratio_eq(r.phi_ratio, transition_ratio)) {
            return Err(bad(format!(
                "transition ratio {transition_ratio} is not a record ratio"
            )));
        }
        for r in &records {
            if let Some(label) = r.label {
                let expected = Label::for_ratio(r.phi_ratio, transition_ratio);
                if label != expected {
                    return Err(bad(format!(
                        "record {} labelled {label}, expected {expected}",
                        r.phi_ratio
                    )));
                }
            }
        }
        Ok(Self {
            name,
            air_flow_slpm,
            transition_ratio,
            records,
        })
    }

    pub fn records(&self) -> &[QuasiStaticRecord] {
        &self.records
    }

    pub fn blowout_record(&self) -> &QuasiStaticRecord {
        &self.records[0]
    }

    pub fn record_at(&self, phi_ratio: f64) -> Option<&QuasiStaticRecord> {
        self.records.iter().find(|r| ratio_eq(r.phi_ratio, phi_ratio))
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi_ratio).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min_val: f64,
    pub max_val: f64,
}

impl ScalingParams {
    pub fn new(min_val: f64, max_val: f64) -> Result<Self> {
        if !(max_val > min_val) || !min_val.is_finite() || !max_val.is_finite() {
            return Err(Error::ConstantSeries);
        }
        Ok(Self { min_val, max_val })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min_val) / (self.max_val - self.min_val)
    }
}

/// Fits min-max parameters on `series` and maps it onto `[0, 1]`.
pub fn minmax_scale(series: &TimeSeries) -> Result<(Vec<f64>, ScalingParams)> {
    let (lo, hi) = series
        .samples()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let params = ScalingParams::new(lo, hi)?;
    Ok((apply_scale(series, &params), params))
}

/// Applies previously fit scaling; values outside the fit range extrapolate.
pub fn apply_scale(series: &TimeSeries, params: &ScalingParams) -> Vec<f64> {
    series.samples().iter().map(|&x| params.apply(x)).collect()
}

/// Supervised next-step dataset: window `k` holds samples `k..k+t_x` and its
/// target is sample `k+t_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    t_x: usize,
    pub scaling: ScalingParams,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn t_x(&self) -> usize {
        self.t_x
    }

    pub fn window(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.t_x..(k + 1) * self.t_x]
    }

    pub fn target(&self, k: usize) -> f64 {
        self.targets[k]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs.chunks_exact(self.t_x).zip(self.targets.iter().copied())
    }

    /// New set holding the given windows, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.t_x);
        let mut targets = Vec::with_capacity(indices.len());
        for &k in indices {
            inputs.extend_from_slice(self.window(k));
            targets.push(self.targets[k]);
        }
        WindowSet {
            inputs,
            targets,
            t_x: self.t_x,
            scaling: self.scaling,
        }
    }
}

pub fn make_windows(scaled: &[f64], t_x: usize, scaling: ScalingParams) -> Result<WindowSet> {
    if t_x == 0 {
        return Err(Error::ConfigInvalid("window length must be positive".into()));
    }
    if scaled.len() < t_x + 1 {
        return Err(Error::SeriesTooShort {
            len: scaled.len(),
            needed: t_x + 1,
        });
    }
    let n = scaled.len() - t_x;
    let mut inputs = Vec::with_capacity(n * t_x);
    for k in 0..n {
        inputs.extend_from_slice(&scaled[k..k + t_x]);
    }
    Ok(WindowSet {
        inputs,
        targets: scaled[t_x..].to_vec(),
        t_x,
        scaling,
    })
}

/// Chronological split: the first `floor(train_frac * T)` samples train.
pub fn chrono_split(series: &TimeSeries, train_frac: f64) -> Result<(TimeSeries, TimeSeries)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = split_point(series.len(), train_frac);
    if n == 0 || n == series.len() {
        return Err(Error::EmptySplit);
    }
    let (head, tail) = series.samples().split_at(n);
    let rate = series.sample_rate_hz();
    Ok((
        TimeSeries::new(head.to_vec(), rate)?,
        TimeSeries::new(tail.to_vec(), rate)?,
    ))
}

fn split_point(len: usize, frac: f64) -> usize {
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    ((frac * len as f64) + 1e-9).floor() as usize
}

/// Seeded random partition of windows into (train, validation). Each side
/// keeps ascending window order.
pub fn random_split(windows: &WindowSet, val_frac: f64, seed: u64) -> Result<(WindowSet, WindowSet)> {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "validation fraction must lie in (0, 1), got {val_frac}"
        )));
    }
    let n = windows.len();
    let n_val = split_point(n, val_frac);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (val, train) = order.split_at_mut(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok((windows.select(train), windows.select(val)))
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}
