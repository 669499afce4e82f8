//! Two-layer LSTM and RNN next-step predictors trained from scratch with
//! backpropagation through time and Adam.

mod adam;
mod checkpoint;
mod layers;
mod model;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{HeadJson, LayerJson, ModelCheckpoint};
pub use layers::{
    lstm_cell_forward, rnn_cell_forward, DenseHeadParams, Gate, LayerParams, LayerTape, LstmLayerParams, ModelKind,
    RnnLayerParams,
};
pub use model::{mse_loss, Gradients, Parameters, SequenceModel, Tape};
pub use train::{predict_rmse, train, window_mse, window_predictions, EpochLoss, TrainConfig, TrainOutcome};
