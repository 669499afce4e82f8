//! Translational error of delay-embedded trajectories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{delay_embed, sq_dist, PhaseSpace};
use crate::error::{Error, Result};

/// Mean displacements shorter than this make the statistic undefined.
pub const MIN_MEAN_DISPLACEMENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub tau_d: usize,
    pub dim: usize,
    pub k_neighbors: usize,
    pub n_anchors: usize,
    pub n_runs: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            tau_d: 1,
            dim: 3,
            k_neighbors: 5,
            n_anchors: 100,
            n_runs: 3,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tau_d", self.tau_d),
            ("dim", self.dim),
            ("k_neighbors", self.k_neighbors),
            ("n_anchors", self.n_anchors),
            ("n_runs", self.n_runs),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::ConfigInvalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransErrorResult {
    pub run_medians: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the run medians.
    pub std: f64,
}

/// Statistic for one anchor: the anchor and its `k` nearest admissible
/// neighbors contribute displacements `v = P(i + tau) - P(i)`, and the result
/// is `(1/(k+1)) * sum |v - v_mean|^2 / |v_mean|^2`.
///
/// Admissible neighbors have a `tau`-ahead image and lie more than `tau`
/// indices away from the anchor. Distance ties go to the smaller index.
pub fn translational_error_at(phase: &PhaseSpace, anchor: usize, k: usize) -> Result<f64> {
    let tau = phase.tau_d();
    let usable = phase.len().saturating_sub(tau);
    if anchor >= usable {
        return Err(Error::ConfigInvalid(format!("anchor {anchor} has no {tau}-step image")));
    }
    let a = phase.row(anchor);
    let mut cand: Vec<(f64, usize)> = (0..usable)
        .filter(|&j| j.abs_diff(anchor) > tau)
        .map(|j| (sq_dist(a, phase.row(j)), j))
        .collect();
    if cand.len() < k {
        return Err(Error::SeriesTooShort {
            len: phase.len(),
            needed: k + 2 * tau + 1,
        });
    }
    let by_dist = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_dist);
    }
    cand.truncate(k);
    let members: Vec<usize> = std::iter::once(anchor).chain(cand.iter().map(|c| c.1)).collect();

    let dim = phase.dim();
    let mut v = vec![0.0; members.len() * dim];
    let mut mean = vec![0.0; dim];
    for (m, &i) in members.iter().enumerate() {
        let (now, ahead) = (phase.row(i), phase.row(i + tau));
        for d in 0..dim {
            v[m * dim + d] = ahead[d] - now[d];
            mean[d] += v[m * dim + d];
        }
    }
    let count = members.len() as f64;
    mean.iter_mut().for_each(|x| *x /= count);
    let denom: f64 = mean.iter().map(|x| x * x).sum();
    if denom.sqrt() < MIN_MEAN_DISPLACEMENT {
        return Err(Error::ZeroMeanDisplacement);
    }
    let num: f64 = v.chunks_exact(dim).map(|vk| sq_dist(vk, &mean)).sum();
    Ok(num / denom / count)
}

/// Median of the statistic over anchors drawn without replacement.
///
/// Anchors with a vanishing mean displacement are replaced by the next draw.
pub fn translational_error_once(phase: &PhaseSpace, k: usize, n_anchors: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let usable = phase.len().saturating_sub(phase.tau_d());
    let mut order: Vec<usize> = (0..usable).collect();
    order.shuffle(rng);
    if usable < n_anchors {
        log::warn!("only {usable} anchors available, {n_anchors} requested");
    }
    let mut values = Vec::with_capacity(n_anchors);
    for &anchor in &order {
        if values.len() == n_anchors {
            break;
        }
        match translational_error_at(phase, anchor, k) {
            Ok(e) => values.push(e),
            Err(Error::ZeroMeanDisplacement) => continue,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::ZeroMeanDisplacement);
    }
    if values.len() < n_anchors.min(usable) {
        log::warn!("{} of {n_anchors} anchors had a usable mean displacement", values.len());
    }
    Ok(median(&mut values))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the anchor median `n_runs` times with per-run random streams.
pub fn translational_error(samples: &[f64], config: &EmbeddingConfig) -> Result<TransErrorResult> {
    config.validate()?;
    let phase = delay_embed(samples, config.tau_d, config.dim)?;
    let mut run_medians = Vec::with_capacity(config.n_runs);
    for run in 0..config.n_runs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(run as u64);
        run_medians.push(translational_error_once(
            &phase,
            config.k_neighbors,
            config.n_anchors,
            &mut rng,
        )?);
    }
    let n = run_medians.len() as f64;
    let mean = run_medians.iter().sum::<f64>() / n;
    let std = (run_medians.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(TransErrorResult { run_medians, mean, std })
}
