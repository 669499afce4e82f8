//! Closest-log-likelihood-window forecasting and the HMM checkpoint.

use serde::{Deserialize, Serialize};

use super::model::{forward_with, GaussianHmm, Scratch};
use crate::error::{Error, Result};
use crate::series::{apply_scale, make_windows, rmse, ScalingParams, TimeSeries, WindowSet};

/// Log-likelihood of every training window together with the sample that
/// ends it and the sample that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTable {
    pub loglik: Vec<f64>,
    pub last: Vec<f64>,
    pub next: Vec<f64>,
}

impl LikelihoodTable {
    pub fn len(&self) -> usize {
        self.loglik.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loglik.is_empty()
    }

    /// Index of the entry closest to `ll`; ties go to the smallest index.
    pub fn closest(&self, ll: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &l) in self.loglik.iter().enumerate() {
            let d = (l - ll).abs();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    /// Stored change `next - last` of entry `j`.
    pub fn change(&self, j: usize) -> f64 {
        self.next[j] - self.last[j]
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty);
        }
        if self.last.len() != self.len() || self.next.len() != self.len() {
            return Err(Error::ShapeMismatch("likelihood table columns differ in length".into()));
        }
        if self
            .loglik
            .iter()
            .chain(&self.last)
            .chain(&self.next)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidSeries("non-finite likelihood table entry".into()));
        }
        Ok(())
    }
}

pub fn build_table(hmm: &GaussianHmm, windows: &WindowSet) -> LikelihoodTable {
    let emission = hmm.emission_consts();
    let mut scratch = Scratch::new(hmm.n_states());
    let mut table = LikelihoodTable {
        loglik: Vec::with_capacity(windows.len()),
        last: Vec::with_capacity(windows.len()),
        next: Vec::with_capacity(windows.len()),
    };
    for (w, y) in windows.iter() {
        table.loglik.push(forward_with(hmm, &emission, w, &mut scratch));
        table.last.push(w[w.len() - 1]);
        table.next.push(y);
    }
    table
}

/// Predicts the sample after `window` by borrowing the change of the
/// training window whose log-likelihood is closest.
pub fn hmm_forecast(hmm: &GaussianHmm, table: &LikelihoodTable, window: &[f64]) -> Result<f64> {
    Forecaster::new(hmm, table)?.forecast(window)
}

/// Reusable forecaster that caches emission constants and scratch buffers.
pub struct Forecaster<'a> {
    hmm: &'a GaussianHmm,
    table: &'a LikelihoodTable,
    emission: super::model::Emission,
    scratch: Scratch,
}

impl<'a> Forecaster<'a> {
    pub fn new(hmm: &'a GaussianHmm, table: &'a LikelihoodTable) -> Result<Self> {
        table.validate()?;
        Ok(Self {
            hmm,
            table,
            emission: hmm.emission_consts(),
            scratch: Scratch::new(hmm.n_states()),
        })
    }

    pub fn forecast(&mut self, window: &[f64]) -> Result<f64> {
        if window.is_empty() {
            return Err(Error::Empty);
        }
        let ll = forward_with(self.hmm, &self.emission, window, &mut self.scratch);
        let j = self.table.closest(ll);
        Ok(window[window.len() - 1] + self.table.change(j))
    }
}

pub fn hmm_window_predictions(hmm: &GaussianHmm, table: &LikelihoodTable, windows: &WindowSet) -> Result<Vec<f64>> {
    let mut f = Forecaster::new(hmm, table)?;
    windows.iter().map(|(w, _)| f.forecast(w)).collect()
}

/// RMSE of the forecaster over every stride-1 window of `series` after
/// applying `scaling`.
pub fn hmm_predict_rmse(
    hmm: &GaussianHmm,
    table: &LikelihoodTable,
    series: &TimeSeries,
    scaling: &ScalingParams,
    t_x: usize,
) -> Result<f64> {
    let scaled = apply_scale(series, scaling);
    let windows = make_windows(&scaled, t_x, *scaling)?;
    let predictions = hmm_window_predictions(hmm, table, &windows)?;
    rmse(&predictions, windows.targets())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HmmKind {
    Hmm,
}

/// Fitted HMM, its likelihood table, and the scaling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmCheckpoint {
    pub kind: HmmKind,
    pub t_x: usize,
    pub scaling: ScalingParams,
    pub n_states: usize,
    pub start: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub table: LikelihoodTable,
}

impl HmmCheckpoint {
    pub fn new(hmm: &GaussianHmm, table: LikelihoodTable, scaling: ScalingParams, t_x: usize) -> Self {
        let n = hmm.n_states();
        Self {
            kind: HmmKind::Hmm,
            t_x,
            scaling,
            n_states: n,
            start: hmm.start().to_vec(),
            trans: (0..n).map(|i| hmm.trans_row(i).to_vec()).collect(),
            means: hmm.means().to_vec(),
            vars: hmm.vars().to_vec(),
            table,
        }
    }

    pub fn into_parts(self) -> Result<(GaussianHmm, LikelihoodTable, ScalingParams, usize)> {
        if self.n_states != self.start.len() || self.trans.iter().any(|r| r.len() != self.n_states) {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint declares {} states but stores {}",
                self.n_states,
                self.start.len()
            )));
        }
        if self.t_x == 0 {
            return Err(Error::ConfigInvalid("t_x must be positive".into()));
        }
        let hmm = GaussianHmm::new(self.start, self.trans.concat(), self.means, self.vars)?;
        self.table.validate()?;
        let scaling = ScalingParams::new(self.scaling.min_val, self.scaling.max_val)?;
        Ok((hmm, self.table, scaling, self.t_x))
    }
}
