//! Gaussian hidden Markov model baseline.

mod fit;
mod forecast;
mod model;

pub use fit::{
    bic, bic_from_loglik, fit_baum_welch, free_parameters, select_states_bic, BaumWelchConfig, BaumWelchFit, BicRow,
    BicSelection, MASS_FLOOR, MONOTONE_SLACK,
};
pub use forecast::{
    build_table, hmm_forecast, hmm_predict_rmse, hmm_window_predictions, Forecaster, HmmCheckpoint, HmmKind,
    LikelihoodTable,
};
pub use model::{forward_loglik, GaussianHmm, VARIANCE_FLOOR};
