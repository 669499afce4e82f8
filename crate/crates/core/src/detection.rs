//! Threshold calibration, classification and confusion-matrix scoring.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{ratio_eq, Label, Protocol};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub phi_ratio: f64,
    pub value: f64,
}

/// Detector metric evaluated at each operating point of one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub detector: String,
    points: Vec<CurvePoint>,
}

impl MetricCurve {
    pub fn new(detector: impl Into<String>, points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(p) = points.iter().find(|p| !p.value.is_finite() || !p.phi_ratio.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite curve point at {}",
                p.phi_ratio
            )));
        }
        if points.windows(2).any(|w| w[1].phi_ratio <= w[0].phi_ratio) {
            return Err(Error::InvalidSeries("curve ratios must be strictly increasing".into()));
        }
        Ok(Self {
            detector: detector.into(),
            points,
        })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn value_at(&self, phi_ratio: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| ratio_eq(p.phi_ratio, phi_ratio))
            .map(|p| p.value)
    }

    /// Ratio of the largest metric value; ties go to the lower ratio.
    pub fn argmax(&self) -> f64 {
        let mut best = self.points[0];
        for p in &self.points[1..] {
            if p.value > best.value {
                best = *p;
            }
        }
        best.phi_ratio
    }

    /// Ratio of the smallest metric value; ties go to the lower ratio.
    pub fn argmin(&self) -> f64 {
        let mut best = self.points[0];
        for p in &self.points[1..] {
            if p.value < best.value {
                best = *p;
            }
        }
        best.phi_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Metric values under the threshold mean the flame is near blowout.
    BelowIsUnhealthy,
    AboveIsUnhealthy,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::BelowIsUnhealthy => "below_is_unhealthy",
            Direction::AboveIsUnhealthy => "above_is_unhealthy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionThreshold {
    pub value: f64,
    pub direction: Direction,
    pub source_ratio: f64,
}

/// Takes the metric at the annotated transition as the decision threshold.
pub fn calibrate(curve: &MetricCurve, transition_ratio: f64, direction: Direction) -> Result<TransitionThreshold> {
    let value = curve
        .value_at(transition_ratio)
        .ok_or(Error::RatioNotFound(transition_ratio))?;
    Ok(TransitionThreshold {
        value,
        direction,
        source_ratio: transition_ratio,
    })
}

/// A metric exactly at the threshold is healthy in either direction.
pub fn classify(metric: f64, threshold: &TransitionThreshold) -> Label {
    let unhealthy = match threshold.direction {
        Direction::BelowIsUnhealthy => metric < threshold.value,
        Direction::AboveIsUnhealthy => metric > threshold.value,
    };
    if unhealthy {
        Label::Unhealthy
    } else {
        Label::Healthy
    }
}

/// Two-class tallies with unhealthy as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Unhealthy, Label::Unhealthy) => self.tp += 1,
            (Label::Healthy, Label::Unhealthy) => self.fp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Unhealthy, Label::Healthy) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (self.tp + self.tn) as f64 / total as f64)
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn aggregate_confusion(matrices: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    if matrices.is_empty() {
        return Err(Error::Empty);
    }
    Ok(matrices.iter().fold(ConfusionMatrix::default(), |acc, m| acc + *m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub phi_ratio: f64,
    pub value: f64,
    pub actual: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEvaluation {
    pub name: String,
    pub curve: MetricCurve,
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
}

/// Classifies every record of `protocol` from its curve value and tallies the
/// result against the record labels.
pub fn evaluate_protocol(
    protocol: &Protocol,
    curve: &MetricCurve,
    threshold: &TransitionThreshold,
) -> Result<ProtocolEvaluation> {
    let mut confusion = ConfusionMatrix::default();
    let mut predictions = Vec::with_capacity(protocol.records().len());
    for rec in protocol.records() {
        let actual = rec.label.ok_or(Error::LabelMissing(rec.phi_ratio))?;
        let value = curve
            .value_at(rec.phi_ratio)
            .ok_or(Error::RatioNotFound(rec.phi_ratio))?;
        let predicted = classify(value, threshold);
        confusion.record(actual, predicted);
        predictions.push(Prediction {
            phi_ratio: rec.phi_ratio,
            value,
            actual,
            predicted,
        });
    }
    Ok(ProtocolEvaluation {
        name: protocol.name.clone(),
        curve: curve.clone(),
        predictions,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{QuasiStaticRecord, TimeSeries};
    use proptest::prelude::*;

    const GRID: [f64; 11] = [1.0, 1.142, 1.214, 1.285, 1.357, 1.428, 1.5, 1.571, 1.642, 1.714, 1.785];

    fn curve(values: &[f64]) -> MetricCurve {
        let points = GRID
            .iter()
            .zip(values)
            .map(|(&phi_ratio, &value)| CurvePoint { phi_ratio, value })
            .collect();
        MetricCurve::new("test", points).unwrap()
    }

    fn protocol(ratios: &[f64], transition: f64) -> Protocol {
        let records = ratios
            .iter()
            .map(|&r| {
                let s = TimeSeries::new(vec![0.0, 1.0], 1.0).unwrap();
                QuasiStaticRecord::new(r, s, Some(Label::for_ratio(r, transition))).unwrap()
            })
            .collect();
        Protocol::new("p", 90.0, transition, records).unwrap()
    }

    fn rising() -> MetricCurve {
        curve(&[0.02, 0.03, 0.04, 0.05, 0.06, 0.0793, 0.09, 0.1, 0.11, 0.12, 0.13])
    }

    #[test]
    fn calibrates_at_transition() {
        let t = calibrate(&rising(), 1.428, Direction::BelowIsUnhealthy).unwrap();
        assert_eq!(t.value, 0.0793);
        assert_eq!(t.source_ratio, 1.428);
        let c = curve(&[0.3, 0.28, 0.25, 0.2, 0.15, 0.1119, 0.1, 0.09, 0.08, 0.07, 0.06]);
        let t = calibrate(&c, 1.428, Direction::AboveIsUnhealthy).unwrap();
        assert_eq!(t.value, 0.1119);
        assert!(matches!(
            calibrate(&c, 1.45, Direction::AboveIsUnhealthy),
            Err(Error::RatioNotFound(_))
        ));
    }

    #[test]
    fn classification_rule() {
        let t = TransitionThreshold {
            value: 0.0793,
            direction: Direction::BelowIsUnhealthy,
            source_ratio: 1.428,
        };
        assert_eq!(classify(0.09, &t), Label::Healthy);
        assert_eq!(classify(0.05, &t), Label::Unhealthy);
        assert_eq!(classify(0.0793, &t), Label::Healthy);
        let t = TransitionThreshold {
            direction: Direction::AboveIsUnhealthy,
            ..t
        };
        assert_eq!(classify(0.09, &t), Label::Unhealthy);
        assert_eq!(classify(0.05, &t), Label::Healthy);
        assert_eq!(classify(0.0793, &t), Label::Healthy);
    }

    #[test]
    fn perfect_protocol() {
        let p = protocol(&GRID, 1.428);
        let c = rising();
        let t = calibrate(&c, 1.428, Direction::BelowIsUnhealthy).unwrap();
        let e = evaluate_protocol(&p, &c, &t).unwrap();
        assert_eq!(
            e.confusion,
            ConfusionMatrix {
                tp: 5,
                fp: 0,
                tn: 6,
                fn_: 0
            }
        );
        assert_eq!(e.confusion.accuracy(), Some(1.0));
    }

    #[test]
    fn all_healthy_predictor() {
        let p = protocol(&GRID, 1.428);
        let t = TransitionThreshold {
            value: f64::NEG_INFINITY,
            direction: Direction::BelowIsUnhealthy,
            source_ratio: 1.428,
        };
        let e = evaluate_protocol(&p, &rising(), &t).unwrap();
        assert_eq!(
            (e.confusion.fn_, e.confusion.tn, e.confusion.tp, e.confusion.fp),
            (5, 6, 0, 0)
        );
    }

    #[test]
    fn three_record_hand_tally() {
        // ratios 1, 1.2, 1.4 with transition 1.2: actual U, H, H
        // values 0.1, 0.05, 0.3 against 0.05 (below unhealthy): H, H, H
        let p = protocol(&[1.0, 1.2, 1.4], 1.2);
        let pts = [(1.0, 0.1), (1.2, 0.05), (1.4, 0.3)]
            .iter()
            .map(|&(phi_ratio, value)| CurvePoint { phi_ratio, value })
            .collect();
        let c = MetricCurve::new("hand", pts).unwrap();
        let t = calibrate(&c, 1.2, Direction::BelowIsUnhealthy).unwrap();
        let e = evaluate_protocol(&p, &c, &t).unwrap();
        assert_eq!(
            e.confusion,
            ConfusionMatrix {
                tp: 0,
                fp: 0,
                tn: 2,
                fn_: 1
            }
        );
        assert!((e.confusion.accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_label_or_ratio() {
        let s = TimeSeries::new(vec![0.0, 1.0], 1.0).unwrap();
        let recs = vec![
            QuasiStaticRecord::new(1.0, s.clone(), None).unwrap(),
            QuasiStaticRecord::new(1.2, s, None).unwrap(),
        ];
        let p = Protocol::new("p", 90.0, 1.2, recs).unwrap();
        let pts = vec![
            CurvePoint {
                phi_ratio: 1.0,
                value: 0.0,
            },
            CurvePoint {
                phi_ratio: 1.2,
                value: 1.0,
            },
        ];
        let c = MetricCurve::new("x", pts).unwrap();
        let t = calibrate(&c, 1.2, Direction::BelowIsUnhealthy).unwrap();
        assert!(matches!(evaluate_protocol(&p, &c, &t), Err(Error::LabelMissing(_))));

        let p = protocol(&[1.0, 1.2, 1.4], 1.2);
        assert!(matches!(evaluate_protocol(&p, &c, &t), Err(Error::RatioNotFound(_))));
    }

    #[test]
    fn aggregation() {
        let perfect = ConfusionMatrix {
            tp: 5,
            fp: 0,
            tn: 6,
            fn_: 0,
        };
        let sum = aggregate_confusion(&[perfect, perfect]).unwrap();
        assert_eq!(sum.total(), 22);
        assert_eq!(sum.accuracy(), Some(1.0));
        assert_eq!(aggregate_confusion(&[perfect]).unwrap(), perfect);
        assert!(aggregate_confusion(&[]).is_err());
        assert_eq!(ConfusionMatrix::default().accuracy(), None);
    }

    #[test]
    fn curve_validation() {
        let p = |r, v| CurvePoint { phi_ratio: r, value: v };
        assert!(MetricCurve::new("x", vec![p(1.0, 0.0), p(1.0, 1.0)]).is_err());
        assert!(MetricCurve::new("x", vec![p(1.0, f64::NAN)]).is_err());
        assert!(MetricCurve::new("x", vec![]).is_err());
        let c = MetricCurve::new("x", vec![p(1.0, 2.0), p(1.1, 2.0), p(1.2, 1.0)]).unwrap();
        assert_eq!(c.argmax(), 1.0);
        assert_eq!(c.argmin(), 1.2);
    }

    #[test]
    fn confusion_serializes_fn_field() {
        let json = serde_json::to_string(&ConfusionMatrix::default()).unwrap();
        assert_eq!(json, r#"{"tp":0,"fp":0,"tn":0,"fn":0}"#);
        assert_eq!(
            serde_json::to_string(&Direction::AboveIsUnhealthy).unwrap(),
            "\"above_is_unhealthy\""
        );
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        (0usize..50, 0usize..50, 0usize..50, 0usize..50).prop_map(|(tp, fp, tn, fn_)| ConfusionMatrix {
            tp,
            fp,
            tn,
            fn_,
        })
    }

    proptest! {
        #[test]
        fn classify_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, v in -10.0f64..10.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let below = TransitionThreshold { value: v, direction: Direction::BelowIsUnhealthy, source_ratio: 1.4 };
            if classify(hi, &below) == Label::Unhealthy {
                prop_assert_eq!(classify(lo, &below), Label::Unhealthy);
            }
            let above = TransitionThreshold { direction: Direction::AboveIsUnhealthy, ..below };
            if classify(lo, &above) == Label::Unhealthy {
                prop_assert_eq!(classify(hi, &above), Label::Unhealthy);
            }
        }

        #[test]
        fn aggregation_is_associative_and_commutative(a in matrix(), b in matrix(), c in matrix()) {
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a + b, b + a);
            let agg = aggregate_confusion(&[a, b, c]).unwrap();
            prop_assert_eq!(agg.total(), a.total() + b.total() + c.total());
            if let Some(acc) = agg.accuracy() {
                prop_assert!((0.0..=1.0).contains(&acc));
            }
        }

        #[test]
        fn monotone_reference_curve_is_self_consistent(start in 0.0f64..1.0, steps in prop::collection::vec(1e-3f64..0.1, 10)) {
            // strictly rising metric: everything below the transition is unhealthy
            let mut values = vec![start];
            for s in &steps {
                values.push(values.last().unwrap() + s);
            }
            let c = curve(&values);
            let t = calibrate(&c, 1.428, Direction::BelowIsUnhealthy).unwrap();
            let e = evaluate_protocol(&protocol(&GRID, 1.428), &c, &t).unwrap();
            prop_assert_eq!(e.confusion.accuracy(), Some(1.0));
            prop_assert_eq!(e.confusion.total(), GRID.len());
        }
    }
}
