use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layers::ModelKind;
use super::model::SequenceModel;
use crate::error::{Error, Result};
use crate::series::{apply_scale, make_windows, rmse, ScalingParams, TimeSeries, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First recurrent layer width (m).
    pub hidden1: usize,
    /// Second recurrent layer width (n).
    pub hidden2: usize,
    /// Dense head width (p).
    pub dense: usize,
    /// Rescale the batch gradient when its norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Return the parameters with the lowest validation loss instead of the
    /// final epoch.
    pub keep_best_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 512,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden1: 32,
            hidden2: 32,
            dense: 16,
            clip_norm: None,
            keep_best_val: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 || self.dense == 0 {
            return bad("layer sizes must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip norm must be positive");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SequenceModel,
    pub history: Vec<EpochLoss>,
    /// Full-pass training loss of the freshly initialized model.
    pub initial_train_loss: f64,
}

/// Mean squared next-step error of `model` over every window.
pub fn window_mse(model: &SequenceModel, windows: &WindowSet) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty);
    }
    let mut sse = 0.0;
    for (w, y) in windows.iter() {
        let r = model.predict(w)? - y;
        sse += r * r;
    }
    Ok(sse / windows.len() as f64)
}

pub fn window_predictions(model: &SequenceModel, windows: &WindowSet) -> Result<Vec<f64>> {
    windows.iter().map(|(w, _)| model.predict(w)).collect()
}

/// Trains a predictor with Adam on shuffled minibatches.
///
/// Initialization draws from stream 0 of a ChaCha generator seeded with
/// `config.seed`; epoch `e` shuffles with stream `e + 1`, so the whole run is
/// a function of the seed. The last partial batch is used as-is.
pub fn train(
    kind: ModelKind,
    train_set: &WindowSet,
    val_set: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::ConfigInvalid(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if train_set.t_x() != val_set.t_x() {
        return Err(Error::ShapeMismatch(
            "train and validation window lengths differ".into(),
        ));
    }
    let t_x = train_set.t_x();
    let mut model = SequenceModel::new(kind, t_x, config.hidden1, config.hidden2, config.dense)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    model.params.init_uniform(&mut rng);

    let adam = config.adam();
    let mut state = AdamState::new(&model.params);
    let initial_train_loss = window_mse(&model, train_set)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, SequenceModel)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        for batch in order.chunks(config.batch_size) {
            let items = batch.iter().map(|&k| (train_set.window(k), train_set.target(k)));
            let (_, mut grads) = model.loss_and_gradient(items, batch.len())?;
            if let Some(limit) = config.clip_norm {
                let norm = grads.l2_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            step += 1;
            adam_step(&mut model.params, &grads, &mut state, &adam, step);
        }

        let train_loss = window_mse(&model, train_set)?;
        let val_loss = window_mse(&model, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() || !model.params.is_finite() {
            return Err(Error::TrainingFailed(format!("non-finite loss at epoch {}", epoch + 1)));
        }
        log::debug!("epoch {} train {train_loss:.6e} val {val_loss:.6e}", epoch + 1);
        history.push(EpochLoss {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
        if config.keep_best_val && best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }

    if let Some((_, m)) = best {
        model = m;
    }
    Ok(TrainOutcome {
        model,
        history,
        initial_train_loss,
    })
}

/// RMSE of next-step predictions over every window of `series`, after
/// applying the training scaling.
pub fn predict_rmse(model: &SequenceModel, series: &TimeSeries, scaling: &ScalingParams) -> Result<f64> {
    let scaled = apply_scale(series, scaling);
    let windows = make_windows(&scaled, model.t_x, *scaling)?;
    let predictions = window_predictions(model, &windows)?;
    rmse(&predictions, windows.targets())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{chrono_split, minmax_scale, random_split};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sine_windows(n: usize, noise: f64, t_x: usize, seed: u64) -> WindowSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.35).sin() + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = TimeSeries::new(raw, 1.0).unwrap();
        let (scaled, p) = minmax_scale(&s).unwrap();
        make_windows(&scaled, t_x, p).unwrap()
    }

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed,
            hidden1: 4,
            hidden2: 4,
            dense: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let p = ScalingParams::new(0.0, 1.0).unwrap();
        let w = make_windows(&[0.4; 200], 5, p).unwrap();
        let (tr, va) = random_split(&w, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 150,
            ..small_config(1)
        };
        for kind in [ModelKind::Lstm, ModelKind::Rnn] {
            let out = train(kind, &tr, &va, &cfg).unwrap();
            assert!(out.history.last().unwrap().train_loss < 1e-6, "{kind}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let w = sine_windows(300, 0.05, 6, 3);
        let (tr, va) = random_split(&w, 0.2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..small_config(42)
        };
        let a = train(ModelKind::Lstm, &tr, &va, &cfg).unwrap();
        let b = train(ModelKind::Lstm, &tr, &va, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let c = train(ModelKind::Lstm, &tr, &va, &TrainConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn beats_last_value_baseline_on_noisy_sine() {
        let w = sine_windows(1200, 0.05, 8, 5);
        let (tr, va) = random_split(&w, 0.2, 5).unwrap();
        for kind in [ModelKind::Lstm, ModelKind::Rnn] {
            let out = train(kind, &tr, &va, &small_config(7)).unwrap();
            let naive: Vec<f64> = va.iter().map(|(x, _)| x[x.len() - 1]).collect();
            let naive_rmse = rmse(&naive, va.targets()).unwrap();
            let val_rmse = out.history.last().unwrap().val_loss.sqrt();
            assert!(val_rmse < naive_rmse, "{kind}: {val_rmse} vs naive {naive_rmse}");
            assert!(out.history.last().unwrap().train_loss < out.initial_train_loss);
        }
    }

    #[test]
    fn rmse_on_training_split_matches_history() {
        let w = sine_windows(400, 0.05, 6, 8);
        let cfg = TrainConfig {
            epochs: 4,
            ..small_config(8)
        };
        let (tr, va) = random_split(&w, 0.2, 8).unwrap();
        let out = train(ModelKind::Rnn, &tr, &va, &cfg).unwrap();
        let preds = window_predictions(&out.model, &tr).unwrap();
        let r = rmse(&preds, tr.targets()).unwrap();
        assert_abs_diff_eq!(r, out.history.last().unwrap().train_loss.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn predict_rmse_uses_every_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = TimeSeries::new(raw, 1.0).unwrap();
        let (train_part, _) = chrono_split(&s, 0.9).unwrap();
        let (_, scaling) = minmax_scale(&train_part).unwrap();
        let mut m = SequenceModel::new(ModelKind::Lstm, 10, 2, 2, 2).unwrap();
        m.params.head.b_y = 0.5;
        let got = predict_rmse(&m, &s, &scaling).unwrap();
        let scaled = apply_scale(&s, &scaling);
        let expected = rmse(&vec![0.5; 110], &scaled[10..]).unwrap();
        assert_eq!(got, expected);
        let short = TimeSeries::new(vec![0.0; 10], 1.0).unwrap();
        assert!(matches!(
            predict_rmse(&m, &short, &scaling),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn keep_best_returns_lowest_validation_model() {
        let w = sine_windows(300, 0.3, 6, 9);
        let (tr, va) = random_split(&w, 0.2, 9).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            keep_best_val: true,
            learning_rate: 0.05,
            ..small_config(9)
        };
        let out = train(ModelKind::Rnn, &tr, &va, &cfg).unwrap();
        let best = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(window_mse(&out.model, &va).unwrap(), best, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_config() {
        let w = sine_windows(100, 0.0, 4, 1);
        let (tr, va) = random_split(&w, 0.2, 1).unwrap();
        for cfg in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta1: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epsilon: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train(ModelKind::Rnn, &tr, &va, &cfg),
                Err(Error::ConfigInvalid(_))
            ));
        }
    }
}
