use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Lower bound on every emission variance (scaled units).
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Hidden Markov model with one univariate Gaussian emission per state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHmm {
    start: Vec<f64>,
    /// Row-major `N x N`; row `i` holds `P(next = j | current = i)`.
    trans: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
}

const STOCHASTIC_TOL: f64 = 1e-9;

impl GaussianHmm {
    pub fn new(start: Vec<f64>, trans: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        let n = start.len();
        let bad = |m: String| Err(Error::ConfigInvalid(format!("HMM: {m}")));
        if n == 0 {
            return bad("at least one state is required".into());
        }
        if trans.len() != n * n || means.len() != n || vars.len() != n {
            return bad(format!("inconsistent shapes for {n} states"));
        }
        let all = start.iter().chain(&trans).chain(&means).chain(&vars);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if start.iter().chain(&trans).any(|&p| p < 0.0) {
            return bad("negative probability".into());
        }
        if (start.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return bad("start probabilities do not sum to 1".into());
        }
        for (i, row) in trans.chunks_exact(n).enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
                return bad(format!("transition row {i} does not sum to 1"));
            }
        }
        if let Some(v) = vars.iter().find(|&&v| v < VARIANCE_FLOOR) {
            return bad(format!("variance {v} below floor {VARIANCE_FLOOR}"));
        }
        Ok(Self {
            start,
            trans,
            means,
            vars,
        })
    }

    /// Skips validation; EM output is normalized by construction.
    pub(crate) fn from_parts(start: Vec<f64>, trans: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Self {
        Self {
            start,
            trans,
            means,
            vars,
        }
    }

    pub fn n_states(&self) -> usize {
        self.start.len()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn trans(&self) -> &[f64] {
        &self.trans
    }

    pub fn trans_row(&self, i: usize) -> &[f64] {
        let n = self.n_states();
        &self.trans[i * n..(i + 1) * n]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    /// Gaussian log-density of `x` under state `j`.
    pub fn log_emission(&self, j: usize, x: f64) -> f64 {
        let d = x - self.means[j];
        -0.5 * (2.0 * PI * self.vars[j]).ln() - d * d / (2.0 * self.vars[j])
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_states();
        assert_eq!(perm.len(), n);
        let mut trans = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                trans[a * n + b] = self.trans[perm[a] * n + perm[b]];
            }
        }
        Self {
            start: perm.iter().map(|&k| self.start[k]).collect(),
            trans,
            means: perm.iter().map(|&k| self.means[k]).collect(),
            vars: perm.iter().map(|&k| self.vars[k]).collect(),
        }
    }

    pub(crate) fn emission_consts(&self) -> Emission {
        Emission {
            means: self.means.clone(),
            log_norm: self.vars.iter().map(|v| -0.5 * (2.0 * PI * v).ln()).collect(),
            inv_two_var: self.vars.iter().map(|v| 0.5 / v).collect(),
        }
    }
}

/// Per-state constants of the Gaussian log-density.
pub(crate) struct Emission {
    means: Vec<f64>,
    log_norm: Vec<f64>,
    inv_two_var: Vec<f64>,
}

impl Emission {
    /// Writes `exp(log b_j(x) - max_j log b_j(x))` into `out` and returns the
    /// subtracted maximum.
    #[inline]
    pub(crate) fn shifted(&self, x: f64, out: &mut [f64]) -> f64 {
        let mut mx = f64::NEG_INFINITY;
        for (j, o) in out.iter_mut().enumerate() {
            let d = x - self.means[j];
            *o = self.log_norm[j] - d * d * self.inv_two_var[j];
            mx = mx.max(*o);
        }
        for o in out.iter_mut() {
            *o = (*o - mx).exp();
        }
        mx
    }

    #[inline]
    fn log_density(&self, j: usize, x: f64) -> f64 {
        let d = x - self.means[j];
        self.log_norm[j] - d * d * self.inv_two_var[j]
    }

    /// Fallback for a step where every state holding predicted mass
    /// underflowed under [`Emission::shifted`]: shifts by the largest
    /// `log pred_j + log b_j(x)` instead. Returns the shift, or `-inf` when no
    /// state holds mass.
    pub(crate) fn reshifted(&self, x: f64, pred: &[f64], out: &mut [f64]) -> f64 {
        let shift = pred
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, &p)| p.ln() + self.log_density(j, x))
            .fold(f64::NEG_INFINITY, f64::max);
        // States without mass get zero emission: no path through them
        // carries probability, and large values would overflow the backward
        // pass.
        for (j, o) in out.iter_mut().enumerate() {
            *o = if pred[j] > 0.0 {
                (self.log_density(j, x) - shift).min(MAX_EXP).exp()
            } else {
                0.0
            };
        }
        shift
    }
}

/// Largest exponent taken in the fallback.
const MAX_EXP: f64 = 700.0;

/// `log P(window | hmm)` by the scaled forward recursion.
///
/// Emissions are shifted by their per-step maximum before exponentiation
/// and the forward vector is renormalized each step, so long windows and
/// far-out samples do not underflow.
pub fn forward_loglik(hmm: &GaussianHmm, window: &[f64]) -> f64 {
    let emission = hmm.emission_consts();
    forward_with(hmm, &emission, window, &mut Scratch::new(hmm.n_states()))
}

pub(crate) struct Scratch {
    alpha: Vec<f64>,
    next: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            next: vec![0.0; n],
            b: vec![0.0; n],
        }
    }
}

pub(crate) fn forward_with(hmm: &GaussianHmm, emission: &Emission, window: &[f64], s: &mut Scratch) -> f64 {
    let n = hmm.n_states();
    let mut ll = 0.0;
    for (t, &x) in window.iter().enumerate() {
        let shift = emission.shifted(x, &mut s.b);
        if t == 0 {
            for j in 0..n {
                s.alpha[j] = hmm.start[j] * s.b[j];
            }
        } else {
            s.next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &a) in s.alpha.iter().enumerate() {
                let row = &hmm.trans[i * n..(i + 1) * n];
                for (nx, &p) in s.next.iter_mut().zip(row) {
                    *nx += a * p;
                }
            }
            for j in 0..n {
                s.alpha[j] = s.next[j] * s.b[j];
            }
        }
        let mut c: f64 = s.alpha.iter().sum();
        let mut shift = shift;
        if !(c > 0.0) {
            let pred = if t == 0 { &hmm.start } else { &s.next };
            shift = emission.reshifted(x, pred, &mut s.b);
            if shift == f64::NEG_INFINITY {
                return shift;
            }
            for j in 0..n {
                s.alpha[j] = pred[j] * s.b[j];
            }
            c = s.alpha.iter().sum();
        }
        s.alpha.iter_mut().for_each(|v| *v /= c);
        ll += c.ln() + shift;
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state() -> GaussianHmm {
        GaussianHmm::new(
            vec![0.6, 0.4],
            vec![0.7, 0.3, 0.2, 0.8],
            vec![-1.0, 1.5],
            vec![0.5, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn unreachable_best_state_does_not_underflow() {
        // state 1 fits the sample far better but cannot be entered
        let h = GaussianHmm::new(
            vec![1.0, 0.0],
            vec![1.0, 0.0, 0.5, 0.5],
            vec![0.0, 1.0],
            vec![1e-4, 1e-4],
        )
        .unwrap();
        let ll = forward_loglik(&h, &[0.0, 1.0]);
        let expect = 2.0 * (-0.5 * (2.0 * PI * 1e-4).ln()) - 1.0 / 2e-4;
        assert!(ll.is_finite());
        assert_abs_diff_eq!(ll, expect, epsilon = 1e-9);
    }

    #[test]
    fn single_gaussian_density() {
        let h = GaussianHmm::new(vec![1.0], vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(forward_loglik(&h, &[0.0]), -(2.0 * PI).sqrt().ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(forward_loglik(&h, &[0.0]), -0.9189, epsilon = 1e-4);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(GaussianHmm::new(vec![0.5, 0.4], vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(GaussianHmm::new(vec![0.5, 0.5], vec![0.9, 0.0, 0.0, 1.0], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(GaussianHmm::new(vec![1.0], vec![1.0], vec![0.0], vec![1e-9]).is_err());
        assert!(GaussianHmm::new(vec![1.0], vec![1.0, 0.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn bounded_by_best_emission_path() {
        let h = two_state();
        let w = [0.3, -2.0, 4.0, 1.1];
        let bound: f64 = w
            .iter()
            .map(|&x| (0..2).map(|j| h.log_emission(j, x)).fold(f64::NEG_INFINITY, f64::max))
            .sum();
        assert!(forward_loglik(&h, &w) <= bound);
    }

    #[test]
    fn far_outliers_do_not_underflow() {
        let h = two_state();
        let ll = forward_loglik(&h, &[1e3, -1e3, 5e2]);
        assert!(ll.is_finite());
    }

    #[test]
    fn permutation_leaves_likelihood_unchanged() {
        let h = two_state();
        let p = h.permuted(&[1, 0]);
        let w = [0.1, 0.9, -1.2, 2.0, 0.0];
        assert_abs_diff_eq!(forward_loglik(&h, &w), forward_loglik(&p, &w), epsilon = 1e-10);
    }
}
