//! Delay-embedding baseline: phase-space reconstruction, delay and
//! dimension estimates, and the translational error statistic.

mod embed;
mod estimate;
mod trans_error;

pub use embed::{delay_embed, PhaseSpace};
pub use estimate::{
    autocorrelation, average_mutual_information, estimate_delay, estimate_dimension, DimensionEstimate, AMI_BINS,
    AMI_FLAT_FRAC, FNN_FRACTION, FNN_RATIO, FNN_SIZE_RATIO, MAX_DIM, MIN_DELAY_SAMPLES,
};
pub use trans_error::{
    translational_error, translational_error_at, translational_error_once, EmbeddingConfig, TransErrorResult,
    MIN_MEAN_DISPLACEMENT,
};
