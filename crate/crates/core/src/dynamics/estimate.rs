//! Delay by average mutual information and dimension by false nearest
//! neighbors.

use serde::{Deserialize, Serialize};

use super::embed::sq_dist;
use crate::error::{Error, Result};

pub const AMI_BINS: usize = 16;
/// A lag counts as the first minimum once the next lag fails to lower the
/// AMI by more than this fraction of the lag-0 information (the entropy).
pub const AMI_FLAT_FRAC: f64 = 0.005;
pub const MIN_DELAY_SAMPLES: usize = 100;

pub const FNN_RATIO: f64 = 15.0;
/// Attractor-size criterion of the false nearest neighbor test.
pub const FNN_SIZE_RATIO: f64 = 2.0;
pub const FNN_FRACTION: f64 = 0.01;
pub const MAX_DIM: usize = 10;

/// Average mutual information (nats) between `x(t)` and `x(t + lag)` from a
/// joint histogram with `bins` equal-width bins over the series range.
pub fn average_mutual_information(samples: &[f64], lag: usize, bins: usize) -> f64 {
    let n = samples.len().saturating_sub(lag);
    if n == 0 || bins == 0 {
        return 0.0;
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return 0.0;
    }
    let bin = |x: f64| (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for i in 0..n {
        let a = bin(samples[i]);
        let b = bin(samples[i + lag]);
        joint[a * bins + b] += 1;
        pa[a] += 1;
        pb[b] += 1;
    }
    let nf = n as f64;
    let mut ami = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let p = c as f64 / nf;
                ami += p * (p * nf * nf / (pa[a] as f64 * pb[b] as f64)).ln();
            }
        }
    }
    ami
}

pub fn autocorrelation(samples: &[f64], lag: usize) -> f64 {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 || lag >= n {
        return 0.0;
    }
    let cov: f64 = (0..n - lag)
        .map(|i| (samples[i] - mean) * (samples[i + lag] - mean))
        .sum();
    cov / var
}

/// First minimum of the AMI over lags `1..=T/10`, falling back to the first
/// lag whose autocorrelation drops below `1/e`.
///
/// Differences within `AMI_FLAT_FRAC` of the entropy count as flat. The first
/// lag where the AMI stops falling opens a valley of lags that stay within that
/// tolerance; when something beyond the valley rises out of it, the valley's
/// centre is returned, otherwise its first lag. A series whose lag-1 AMI is
/// already at the histogram bias of independent samples gets lag 1.
pub fn estimate_delay(samples: &[f64]) -> Result<usize> {
    if samples.len() < MIN_DELAY_SAMPLES {
        return Err(Error::SeriesTooShort {
            len: samples.len(),
            needed: MIN_DELAY_SAMPLES,
        });
    }
    let max_lag = samples.len() / 10;
    let ami: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| average_mutual_information(samples, lag, AMI_BINS))
        .collect();
    let tol = AMI_FLAT_FRAC * ami[0];
    // histogram bias of the AMI between independent samples
    let floor = ((AMI_BINS - 1) * (AMI_BINS - 1)) as f64 / (2.0 * samples.len() as f64);
    if ami[1] <= floor + tol {
        return Ok(1);
    }
    if let Some(start) = (1..=max_lag).find(|&lag| ami[lag + 1] > ami[lag] - tol) {
        let ceiling = ami[start] + tol;
        let end = (start..=max_lag + 1)
            .take_while(|&l| ami[l] <= ceiling)
            .last()
            .unwrap_or(start);
        return Ok(if end <= max_lag { (start + end) / 2 } else { start });
    }
    let threshold = (-1.0f64).exp();
    (1..=max_lag)
        .find(|&lag| autocorrelation(samples, lag) < threshold)
        .ok_or(Error::NoDelayFound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub dim: usize,
    /// False-neighbor fraction for each tested dimension, starting at 1.
    pub fractions: Vec<f64>,
    /// True when no dimension up to the cap met the criterion.
    pub capped: bool,
}

/// Smallest dimension whose false nearest neighbor fraction falls below 1%.
///
/// At most `max_points` evenly spaced vectors enter the brute-force neighbor
/// search.
pub fn estimate_dimension(samples: &[f64], tau_d: usize, max_points: usize) -> Result<DimensionEstimate> {
    if tau_d == 0 {
        return Err(Error::ConfigInvalid("delay must be at least 1".into()));
    }
    let needed = MAX_DIM * tau_d + 2;
    if samples.len() < needed {
        return Err(Error::SeriesTooShort {
            len: samples.len(),
            needed,
        });
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let size = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
    let mut fractions = Vec::new();
    for dim in 1..=MAX_DIM {
        let frac = fnn_fraction(samples, tau_d, dim, size, max_points.max(2));
        fractions.push(frac);
        if frac < FNN_FRACTION {
            return Ok(DimensionEstimate {
                dim,
                fractions,
                capped: false,
            });
        }
    }
    log::warn!("false nearest neighbors never fell below {FNN_FRACTION}; using dimension {MAX_DIM}");
    Ok(DimensionEstimate {
        dim: MAX_DIM,
        fractions,
        capped: true,
    })
}

fn fnn_fraction(samples: &[f64], tau: usize, dim: usize, size: f64, max_points: usize) -> f64 {
    let count = samples.len() - dim * tau;
    let stride = count.div_ceil(max_points);
    let idx: Vec<usize> = (0..count).step_by(stride).collect();
    let vectors: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| (0..dim).map(|d| samples[i + d * tau]).collect())
        .collect();
    // coincident points, up to rounding, carry no neighbor information
    let dup = (1e-9 * size).powi(2);
    let mut false_nn = 0usize;
    let mut tested = 0usize;
    for a in 0..vectors.len() {
        let mut best = f64::INFINITY;
        let mut best_b = usize::MAX;
        for b in 0..vectors.len() {
            if a == b {
                continue;
            }
            let d = sq_dist(&vectors[a], &vectors[b]);
            if d > dup && d < best {
                best = d;
                best_b = b;
            }
        }
        if best_b == usize::MAX {
            continue;
        }
        tested += 1;
        let extra = (samples[idx[a] + dim * tau] - samples[idx[best_b] + dim * tau]).abs();
        let r = best.sqrt();
        let grown = (best + extra * extra).sqrt();
        if extra / r > FNN_RATIO || (size > 0.0 && grown / size > FNN_SIZE_RATIO) {
            false_nn += 1;
        }
    }
    if tested == 0 {
        0.0
    } else {
        false_nn as f64 / tested as f64
    }
}
