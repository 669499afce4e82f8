//! End-to-end glue: reference preparation, detector fitting, metric curves,
//! calibration and evaluation across protocols.

use serde::{Deserialize, Serialize};

use crate::datagen::SynthConfig;
use crate::detection::{
    aggregate_confusion, calibrate, evaluate_protocol, ConfusionMatrix, CurvePoint, Direction, MetricCurve,
    ProtocolEvaluation, TransitionThreshold,
};
use crate::dynamics::{estimate_delay, estimate_dimension, translational_error, DimensionEstimate, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::hmm::{
    build_table, hmm_predict_rmse, select_states_bic, BaumWelchConfig, BicRow, GaussianHmm, HmmCheckpoint,
    LikelihoodTable,
};
use crate::neural::{predict_rmse, train, EpochLoss, ModelCheckpoint, ModelKind, SequenceModel, TrainConfig};
use crate::series::{
    apply_scale, chrono_split, make_windows, minmax_scale, random_split, Protocol, ScalingParams, TimeSeries, WindowSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub t_x: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            t_x: 32,
            train_frac: 0.9,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

/// The blowout record of the reference protocol, split and windowed.
#[derive(Debug, Clone)]
pub struct ReferenceData {
    pub scaling: ScalingParams,
    pub train: TimeSeries,
    /// Chronological tail held out from training.
    pub holdout: TimeSeries,
    /// Every window of the training split.
    pub windows: WindowSet,
    pub fit: WindowSet,
    pub val: WindowSet,
}

pub fn prepare_reference(protocol: &Protocol, split: &SplitConfig) -> Result<ReferenceData> {
    let record = protocol.blowout_record();
    let (train, holdout) = chrono_split(&record.series, split.train_frac)?;
    if train.len() < split.t_x + 2 || holdout.len() < split.t_x + 1 {
        return Err(Error::EmptySplit);
    }
    let (scaled, scaling) = minmax_scale(&train)?;
    let windows = make_windows(&scaled, split.t_x, scaling)?;
    let (fit, val) = random_split(&windows, split.val_frac, split.seed)?;
    Ok(ReferenceData {
        scaling,
        train,
        holdout,
        windows,
        fit,
        val,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        let bw = BaumWelchConfig::default();
        Self {
            n_min: 2,
            n_max: 10,
            max_iters: bw.max_iters,
            tol: bw.tol,
            seed: 0,
        }
    }
}

/// Translational-error settings; a missing delay or dimension is estimated
/// from the reference training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransErrorConfig {
    pub tau_d: Option<usize>,
    pub dim: Option<usize>,
    pub k_neighbors: usize,
    pub n_anchors: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Cap on vectors entering the false-nearest-neighbor search.
    pub fnn_max_points: usize,
}

impl Default for TransErrorConfig {
    fn default() -> Self {
        let e = EmbeddingConfig::default();
        Self {
            tau_d: None,
            dim: None,
            k_neighbors: e.k_neighbors,
            n_anchors: e.n_anchors,
            n_runs: e.n_runs,
            seed: 0,
            fnn_max_points: 4000,
        }
    }
}

/// Settings for every stage, as read from a JSON config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub hmm: HmmConfig,
    pub trans_error: TransErrorConfig,
}

#[derive(Debug, Clone)]
pub enum Detector {
    Neural {
        model: SequenceModel,
        scaling: ScalingParams,
    },
    Hmm {
        hmm: GaussianHmm,
        table: LikelihoodTable,
        scaling: ScalingParams,
        t_x: usize,
    },
    TransError {
        config: EmbeddingConfig,
        scaling: ScalingParams,
    },
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Neural { model, .. } => match model.kind {
                ModelKind::Lstm => "lstm",
                ModelKind::Rnn => "rnn",
            },
            Detector::Hmm { .. } => "hmm",
            Detector::TransError { .. } => "trans_error",
        }
    }

    /// Prediction-error detectors trained at blowout read low values as
    /// unhealthy; the translational error reads high values as unhealthy.
    pub fn direction(&self) -> Direction {
        match self {
            Detector::TransError { .. } => Direction::AboveIsUnhealthy,
            _ => Direction::BelowIsUnhealthy,
        }
    }

    pub fn metric(&self, series: &TimeSeries) -> Result<f64> {
        match self {
            Detector::Neural { model, scaling } => predict_rmse(model, series, scaling),
            Detector::Hmm {
                hmm,
                table,
                scaling,
                t_x,
            } => hmm_predict_rmse(hmm, table, series, scaling, *t_x),
            Detector::TransError { config, scaling } => {
                Ok(translational_error(&apply_scale(series, scaling), config)?.mean)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransErrorKind {
    TransError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransErrorCheckpoint {
    pub kind: TransErrorKind,
    pub scaling: ScalingParams,
    pub embedding: EmbeddingConfig,
}

/// Any saved detector; the `kind` field tells the variants apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectorCheckpoint {
    Neural(ModelCheckpoint),
    Hmm(HmmCheckpoint),
    TransError(TransErrorCheckpoint),
}

impl DetectorCheckpoint {
    pub fn from_detector(detector: &Detector) -> Self {
        match detector {
            Detector::Neural { model, scaling } => Self::Neural(ModelCheckpoint::from_model(model, *scaling)),
            Detector::Hmm {
                hmm,
                table,
                scaling,
                t_x,
            } => Self::Hmm(HmmCheckpoint::new(hmm, table.clone(), *scaling, *t_x)),
            Detector::TransError { config, scaling } => Self::TransError(TransErrorCheckpoint {
                kind: TransErrorKind::TransError,
                scaling: *scaling,
                embedding: *config,
            }),
        }
    }

    pub fn into_detector(self) -> Result<Detector> {
        Ok(match self {
            Self::Neural(c) => {
                let (model, scaling) = c.into_model()?;
                Detector::Neural { model, scaling }
            }
            Self::Hmm(c) => {
                let (hmm, table, scaling, t_x) = c.into_parts()?;
                Detector::Hmm {
                    hmm,
                    table,
                    scaling,
                    t_x,
                }
            }
            Self::TransError(c) => {
                c.embedding.validate()?;
                let scaling = ScalingParams::new(c.scaling.min_val, c.scaling.max_val)?;
                Detector::TransError {
                    config: c.embedding,
                    scaling,
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct NeuralFit {
    pub detector: Detector,
    pub history: Vec<EpochLoss>,
}

pub fn fit_neural(kind: ModelKind, reference: &ReferenceData, config: &TrainConfig) -> Result<NeuralFit> {
    let outcome = train(kind, &reference.fit, &reference.val, config)?;
    Ok(NeuralFit {
        detector: Detector::Neural {
            model: outcome.model,
            scaling: reference.scaling,
        },
        history: outcome.history,
    })
}

#[derive(Debug, Clone)]
pub struct HmmFit {
    pub detector: Detector,
    pub bic: Vec<BicRow>,
    pub skipped: Vec<(usize, String)>,
}

/// Fits every state count on the scaled training split, keeps the BIC
/// winner and tabulates the log-likelihood of every training window.
pub fn fit_hmm(reference: &ReferenceData, config: &HmmConfig) -> Result<HmmFit> {
    let scaled = apply_scale(&reference.train, &reference.scaling);
    let bw = BaumWelchConfig {
        max_iters: config.max_iters,
        tol: config.tol,
    };
    let sel = select_states_bic(&scaled, config.n_min, config.n_max, config.seed, &bw)?;
    let table = build_table(&sel.best, &reference.windows);
    Ok(HmmFit {
        detector: Detector::Hmm {
            hmm: sel.best,
            table,
            scaling: reference.scaling,
            t_x: reference.windows.t_x(),
        },
        bic: sel.table,
        skipped: sel.skipped,
    })
}

#[derive(Debug, Clone)]
pub struct TransErrorFit {
    pub detector: Detector,
    pub dimension: Option<DimensionEstimate>,
}

pub fn fit_trans_error(reference: &ReferenceData, config: &TransErrorConfig) -> Result<TransErrorFit> {
    let scaled = apply_scale(&reference.train, &reference.scaling);
    let tau_d = match config.tau_d {
        Some(t) => t,
        None => estimate_delay(&scaled)?,
    };
    let (dim, dimension) = match config.dim {
        Some(d) => (d, None),
        None => {
            let est = estimate_dimension(&scaled, tau_d, config.fnn_max_points)?;
            (est.dim, Some(est))
        }
    };
    let embedding = EmbeddingConfig {
        tau_d,
        dim,
        k_neighbors: config.k_neighbors,
        n_anchors: config.n_anchors,
        n_runs: config.n_runs,
        seed: config.seed,
    };
    embedding.validate()?;
    Ok(TransErrorFit {
        detector: Detector::TransError {
            config: embedding,
            scaling: reference.scaling,
        },
        dimension,
    })
}

/// Metric at every record of `protocol`. When `holdout` is given it stands
/// in for the blowout record, whose leading part trained the detector.
pub fn metric_curve(detector: &Detector, protocol: &Protocol, holdout: Option<&TimeSeries>) -> Result<MetricCurve> {
    let points = protocol
        .records()
        .iter()
        .map(|rec| {
            let series = match holdout {
                Some(h) if rec.is_blowout() => h,
                _ => &rec.series,
            };
            Ok(CurvePoint {
                phi_ratio: rec.phi_ratio,
                value: detector.metric(series)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricCurve::new(detector.name(), points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub detector: String,
    pub threshold: TransitionThreshold,
    pub per_protocol: Vec<ProtocolEvaluation>,
    pub overall_confusion: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
}

/// Calibrates on the reference curve and scores every test protocol.
pub fn evaluate_detector(
    detector: &Detector,
    reference: &Protocol,
    reference_curve: &MetricCurve,
    tests: &[Protocol],
) -> Result<DetectorReport> {
    let threshold = calibrate(reference_curve, reference.transition_ratio, detector.direction())?;
    let per_protocol = tests
        .iter()
        .map(|p| evaluate_protocol(p, &metric_curve(detector, p, None)?, &threshold))
        .collect::<Result<Vec<_>>>()?;
    let overall = aggregate_confusion(&per_protocol.iter().map(|e| e.confusion).collect::<Vec<_>>())?;
    Ok(DetectorReport {
        detector: detector.name().into(),
        threshold,
        per_protocol,
        overall_confusion: overall,
        overall_accuracy: overall.accuracy(),
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty);
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_protocol, SynthConfig};

    #[test]
    fn checkpoints_tell_kinds_apart() {
        let scaling = ScalingParams::new(-1.0, 2.0).unwrap();
        let te = Detector::TransError {
            config: EmbeddingConfig::default(),
            scaling,
        };
        let json = serde_json::to_string(&DetectorCheckpoint::from_detector(&te)).unwrap();
        assert!(json.contains("\"trans_error\""));
        let back: DetectorCheckpoint = serde_json::from_str(&json).unwrap();
        assert!(matches!(back.into_detector().unwrap(), Detector::TransError { .. }));

        let model = SequenceModel::new(ModelKind::Rnn, 4, 2, 2, 2).unwrap();
        let nn = Detector::Neural { model, scaling };
        let json = serde_json::to_string(&DetectorCheckpoint::from_detector(&nn)).unwrap();
        let back: DetectorCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_detector().unwrap().name(), "rnn");
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // ranks [1, 2.5, 2.5, 4] against [1, 2, 3, 4]
        let r = spearman(&[0.0, 5.0, 5.0, 9.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn reference_split_shapes() {
        let cfg = SynthConfig {
            samples_per_record: 1000,
            ..SynthConfig::default()
        };
        let p = synth_protocol(&cfg).unwrap();
        let split = SplitConfig {
            t_x: 8,
            ..SplitConfig::default()
        };
        let r = prepare_reference(&p, &split).unwrap();
        assert_eq!(r.train.len(), 900);
        assert_eq!(r.holdout.len(), 100);
        assert_eq!(r.windows.len(), 892);
        assert_eq!(r.val.len(), 178);
        assert_eq!(r.fit.len() + r.val.len(), r.windows.len());
        let scaled = apply_scale(&r.train, &r.scaling);
        assert!(scaled.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn trans_error_curve_uses_holdout_for_blowout() {
        let cfg = SynthConfig {
            samples_per_record: 1200,
            ..SynthConfig::default()
        };
        let p = synth_protocol(&cfg).unwrap();
        let r = prepare_reference(&p, &SplitConfig::default()).unwrap();
        let fit = fit_trans_error(
            &r,
            &TransErrorConfig {
                tau_d: Some(3),
                dim: Some(3),
                n_anchors: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let c = metric_curve(&fit.detector, &p, Some(&r.holdout)).unwrap();
        assert_eq!(c.points().len(), 11);
        assert_eq!(c.points()[0].value, fit.detector.metric(&r.holdout).unwrap());
        assert_eq!(fit.detector.direction(), Direction::AboveIsUnhealthy);
    }
}
