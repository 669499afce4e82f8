//! Baum-Welch estimation and BIC state-count selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_loglik, GaussianHmm, VARIANCE_FLOOR};
use crate::error::{Error, Result};

/// Smallest expected occupancy a state may keep before the fit is declared
/// degenerate.
pub const MASS_FLOOR: f64 = 1e-6;

/// Allowed decrease of the log-likelihood between EM iterations.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tol: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaumWelchFit {
    pub model: GaussianHmm,
    /// Log-likelihood of the data under the parameters at each E-step; the
    /// last entry belongs to `model`.
    pub loglik_history: Vec<f64>,
    pub converged: bool,
}

impl BaumWelchFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_history.last().expect("at least one E-step")
    }
}

/// Fits a Gaussian HMM to one observation sequence by expectation-maximization.
///
/// Initial means and variances come from a seeded k-means++ partition of the
/// sample values; start probabilities are uniform and transitions sticky.
pub fn fit_baum_welch(data: &[f64], n_states: usize, seed: u64, cfg: &BaumWelchConfig) -> Result<BaumWelchFit> {
    if n_states == 0 {
        return Err(Error::ConfigInvalid("HMM needs at least one state".into()));
    }
    if data.len() < 10 * n_states {
        return Err(Error::ConfigInvalid(format!(
            "{} samples are too few for {n_states} states",
            data.len()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidSeries("non-finite HMM training sample".into()));
    }
    let mut model = initial_model(data, n_states, seed);
    let mut history = Vec::new();
    let mut converged = false;
    let mut stats = EStats::new(n_states, data.len());
    for _ in 0..cfg.max_iters.max(1) {
        let ll = stats.expectation(&model, data);
        if !ll.is_finite() {
            return Err(Error::DegenerateFit("log-likelihood is not finite".into()));
        }
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            history.push(ll);
            if (ll - prev) / prev.abs().max(1e-300) < cfg.tol {
                converged = true;
                break;
            }
        } else {
            history.push(ll);
        }
        model = stats.maximization(data)?;
    }
    if !converged {
        // The loop ended on an M-step: score the final parameters.
        let ll = stats.expectation(&model, data);
        history.push(ll);
    }
    Ok(BaumWelchFit {
        model,
        loglik_history: history,
        converged,
    })
}

fn initial_model(data: &[f64], n: usize, seed: u64) -> GaussianHmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_1d(data, n, &mut rng);
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut count = vec![0usize; n];
    for &x in data {
        let k = nearest(&centers, x);
        sum[k] += x;
        sq[k] += x * x;
        count[k] += 1;
    }
    let mean_all = data.iter().sum::<f64>() / data.len() as f64;
    let var_all = data.iter().map(|x| (x - mean_all).powi(2)).sum::<f64>() / data.len() as f64;
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for k in 0..n {
        if count[k] > 1 {
            let m = sum[k] / count[k] as f64;
            means.push(m);
            vars.push((sq[k] / count[k] as f64 - m * m).max(VARIANCE_FLOOR));
        } else {
            means.push(centers[k]);
            vars.push(var_all.max(VARIANCE_FLOOR));
        }
    }
    let stay = if n == 1 { 1.0 } else { 0.8 };
    let leave = if n == 1 { 0.0 } else { 0.2 / (n - 1) as f64 };
    let mut trans = vec![leave; n * n];
    for i in 0..n {
        trans[i * n + i] = stay;
    }
    GaussianHmm::from_parts(vec![1.0 / n as f64; n], trans, means, vars)
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (k, c) in centers.iter().enumerate() {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = k;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations; centers come back sorted.
fn kmeans_1d<R: Rng>(data: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![data[rng.gen_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            data[pick]
        } else {
            data[rng.gen_range(0..data.len())]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min((x - next).powi(2));
        }
    }
    for _ in 0..50 {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for &x in data {
            let c = nearest(&centers, x);
            sum[c] += x;
            count[c] += 1;
        }
        let mut moved = false;
        for c in 0..k {
            if count[c] > 0 {
                let m = sum[c] / count[c] as f64;
                moved |= m != centers[c];
                centers[c] = m;
            }
        }
        if !moved {
            break;
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

/// Sufficient statistics gathered by one forward-backward pass.
struct EStats {
    n: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    b: Vec<f64>,
    scale: Vec<f64>,
    gamma0: Vec<f64>,
    /// Predicted state mass before the emission at the current step.
    pred: Vec<f64>,
    gamma_sum: Vec<f64>,
    gamma_sum_head: Vec<f64>,
    gamma_x: Vec<f64>,
    gamma: Vec<f64>,
    xi_sum: Vec<f64>,
    trans: Vec<f64>,
}

impl EStats {
    fn new(n: usize, len: usize) -> Self {
        Self {
            n,
            alpha: vec![0.0; len * n],
            beta: vec![0.0; len * n],
            b: vec![0.0; len * n],
            scale: vec![0.0; len],
            gamma0: vec![0.0; n],
            pred: vec![0.0; n],
            gamma_sum: vec![0.0; n],
            gamma_sum_head: vec![0.0; n],
            gamma_x: vec![0.0; n],
            gamma: vec![0.0; len * n],
            xi_sum: vec![0.0; n * n],
            trans: Vec::new(),
        }
    }

    /// Runs forward-backward under `hmm` and returns `log P(data)`.
    fn expectation(&mut self, hmm: &GaussianHmm, data: &[f64]) -> f64 {
        let n = self.n;
        let len = data.len();
        let emission = hmm.emission_consts();
        let a = hmm.trans();
        let mut ll = 0.0;
        for t in 0..len {
            let b = &mut self.b[t * n..(t + 1) * n];
            let mut shift = emission.shifted(data[t], b);
            let (prev, cur) = self.alpha.split_at_mut(t * n);
            let cur = &mut cur[..n];
            if t == 0 {
                cur.copy_from_slice(hmm.start());
            } else {
                let prev = &prev[(t - 1) * n..];
                cur.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    for j in 0..n {
                        cur[j] += prev[i] * a[i * n + j];
                    }
                }
            }
            self.pred.copy_from_slice(cur);
            for j in 0..n {
                cur[j] *= b[j];
            }
            let mut c: f64 = cur.iter().sum();
            if !(c > 0.0) {
                shift = emission.reshifted(data[t], &self.pred, b);
                if shift == f64::NEG_INFINITY {
                    return shift;
                }
                for j in 0..n {
                    cur[j] = self.pred[j] * b[j];
                }
                c = cur.iter().sum();
            }
            cur.iter_mut().for_each(|v| *v /= c);
            self.scale[t] = c;
            ll += c.ln() + shift;
        }

        self.beta[(len - 1) * n..].iter_mut().for_each(|v| *v = 1.0);
        for t in (0..len - 1).rev() {
            let (cur, next) = self.beta.split_at_mut((t + 1) * n);
            let cur = &mut cur[t * n..];
            let next = &next[..n];
            let bn = &self.b[(t + 1) * n..(t + 2) * n];
            let c = self.scale[t + 1];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += a[i * n + j] * bn[j] * next[j];
                }
                cur[i] = s / c;
            }
        }

        self.gamma_sum.iter_mut().for_each(|v| *v = 0.0);
        self.gamma_sum_head.iter_mut().for_each(|v| *v = 0.0);
        self.gamma_x.iter_mut().for_each(|v| *v = 0.0);
        self.xi_sum.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..len {
            let g = &mut self.gamma[t * n..(t + 1) * n];
            let mut norm = 0.0;
            for j in 0..n {
                g[j] = self.alpha[t * n + j] * self.beta[t * n + j];
                norm += g[j];
            }
            for j in 0..n {
                g[j] /= norm;
                self.gamma_sum[j] += g[j];
                self.gamma_x[j] += g[j] * data[t];
                if t + 1 < len {
                    self.gamma_sum_head[j] += g[j];
                }
            }
            if t == 0 {
                self.gamma0.copy_from_slice(g);
            }
            if t + 1 < len {
                let c = self.scale[t + 1];
                let bn = &self.b[(t + 1) * n..(t + 2) * n];
                let bt = &self.beta[(t + 1) * n..(t + 2) * n];
                for i in 0..n {
                    let ai = self.alpha[t * n + i] / c;
                    for j in 0..n {
                        self.xi_sum[i * n + j] += ai * a[i * n + j] * bn[j] * bt[j];
                    }
                }
            }
        }
        self.trans = a.to_vec();
        ll
    }

    fn maximization(&self, data: &[f64]) -> Result<GaussianHmm> {
        let n = self.n;
        for j in 0..n {
            if self.gamma_sum[j] < MASS_FLOOR || (n > 1 && self.gamma_sum_head[j] < MASS_FLOOR) {
                return Err(Error::DegenerateFit(format!(
                    "state {j} keeps only {:.3e} expected samples",
                    self.gamma_sum[j]
                )));
            }
        }
        let start: Vec<f64> = {
            let s: f64 = self.gamma0.iter().sum();
            self.gamma0.iter().map(|g| g / s).collect()
        };
        let mut trans = vec![0.0; n * n];
        for i in 0..n {
            let row = &self.xi_sum[i * n..(i + 1) * n];
            let total: f64 = row.iter().sum();
            for j in 0..n {
                trans[i * n + j] = if total > 0.0 {
                    row[j] / total
                } else {
                    self.trans[i * n + j]
                };
            }
        }
        let means: Vec<f64> = (0..n).map(|j| self.gamma_x[j] / self.gamma_sum[j]).collect();
        let mut vars = vec![0.0; n];
        for (t, &x) in data.iter().enumerate() {
            for j in 0..n {
                let d = x - means[j];
                vars[j] += self.gamma[t * n + j] * d * d;
            }
        }
        for j in 0..n {
            vars[j] = (vars[j] / self.gamma_sum[j]).max(VARIANCE_FLOOR);
        }
        Ok(GaussianHmm::from_parts(start, trans, means, vars))
    }
}

/// Free parameters: start (N-1), transitions N(N-1), mean and variance per state.
pub fn free_parameters(n_states: usize) -> usize {
    (n_states - 1) + n_states * (n_states - 1) + 2 * n_states
}

pub fn bic_from_loglik(loglik: f64, n_states: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + free_parameters(n_states) as f64 * (n_obs as f64).ln()
}

/// `-2 log L + κ ln(n)` with the likelihood of `data` as one sequence.
pub fn bic(hmm: &GaussianHmm, data: &[f64]) -> f64 {
    bic_from_loglik(forward_loglik(hmm, data), hmm.n_states(), data.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub n_states: usize,
    pub loglik: f64,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct BicSelection {
    pub best: GaussianHmm,
    pub table: Vec<BicRow>,
    /// State counts whose fit failed, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Fits every state count in `n_min..=n_max` and keeps the lowest BIC; ties
/// go to the smaller count. Degenerate fits are skipped.
pub fn select_states_bic(
    data: &[f64],
    n_min: usize,
    n_max: usize,
    seed: u64,
    cfg: &BaumWelchConfig,
) -> Result<BicSelection> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::ConfigInvalid(format!("invalid state range {n_min}..={n_max}")));
    }
    let mut best: Option<(f64, GaussianHmm)> = None;
    let mut table = Vec::new();
    let mut skipped = Vec::new();
    for n in n_min..=n_max {
        match fit_baum_welch(data, n, seed, cfg) {
            Ok(fit) => {
                let loglik = fit.loglik();
                let score = bic_from_loglik(loglik, n, data.len());
                table.push(BicRow {
                    n_states: n,
                    loglik,
                    bic: score,
                });
                if best.as_ref().map_or(true, |(b, _)| score < *b) {
                    best = Some((score, fit.model));
                }
            }
            Err(e @ (Error::DegenerateFit(_) | Error::ConfigInvalid(_))) => {
                log::warn!("skipping {n}-state HMM: {e}");
                skipped.push((n, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((_, best)) => Ok(BicSelection { best, table, skipped }),
        None => Err(Error::DegenerateFit(format!(
            "no state count in {n_min}..={n_max} produced a usable fit"
        ))),
    }
}
