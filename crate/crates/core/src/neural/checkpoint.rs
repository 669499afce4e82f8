//! JSON checkpoints for trained sequence models.
//!
//! Matrices are written as nested row lists. Floats use the shortest decimal
//! form that parses back to the same bits, so a save/load cycle is exact.

use serde::{Deserialize, Serialize};

use super::layers::{DenseHeadParams, LayerParams, ModelKind};
use super::model::{Parameters, SequenceModel};
use crate::error::{Error, Result};
use crate::series::ScalingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadJson {
    pub w_d: Vec<Vec<f64>>,
    pub b_d: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub t_x: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub scaling: ScalingParams,
    pub layer1: LayerJson,
    pub layer2: LayerJson,
    pub head: HeadJson,
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks_exact(width).map(<[f64]>::to_vec).collect()
}

fn flatten(rows: &[Vec<f64>], n_rows: usize, width: usize, what: &str) -> Result<Vec<f64>> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != width) {
        return Err(Error::ShapeMismatch(format!("{what} must be {n_rows}x{width}")));
    }
    Ok(rows.concat())
}

impl ModelCheckpoint {
    pub fn from_model(model: &SequenceModel, scaling: ScalingParams) -> Self {
        let p = &model.params;
        let layer = |l: &LayerParams| LayerJson {
            weights: rows(&l.weights, l.width()),
            bias: l.bias.clone(),
        };
        Self {
            kind: model.kind,
            t_x: model.t_x,
            m: model.hidden1(),
            n: model.hidden2(),
            p: model.dense(),
            scaling,
            layer1: layer(&p.layer1),
            layer2: layer(&p.layer2),
            head: HeadJson {
                w_d: rows(&p.head.w_d, p.head.width),
                b_d: p.head.b_d.clone(),
                w_y: p.head.w_y.clone(),
                b_y: p.head.b_y,
            },
        }
    }

    pub fn into_model(self) -> Result<(SequenceModel, ScalingParams)> {
        let mut model = SequenceModel::new(self.kind, self.t_x, self.m, self.n, self.p)?;
        let Parameters { layer1, layer2, head } = &mut model.params;
        let fill = |dst: &mut LayerParams, src: &LayerJson, what: &str| -> Result<()> {
            dst.weights = flatten(&src.weights, dst.rows(), dst.width(), what)?;
            if src.bias.len() != dst.width() {
                return Err(Error::ShapeMismatch(format!(
                    "{what} bias must have {} entries",
                    dst.width()
                )));
            }
            dst.bias = src.bias.clone();
            Ok(())
        };
        fill(layer1, &self.layer1, "layer1")?;
        fill(layer2, &self.layer2, "layer2")?;
        let DenseHeadParams { input_size, width, .. } = *head;
        head.w_d = flatten(&self.head.w_d, input_size, width, "w_d")?;
        if self.head.b_d.len() != width || self.head.w_y.len() != width {
            return Err(Error::ShapeMismatch(format!("head vectors must have {width} entries")));
        }
        head.b_d = self.head.b_d;
        head.w_y = self.head.w_y;
        head.b_y = self.head.b_y;
        if !model.params.is_finite() {
            return Err(Error::ShapeMismatch("checkpoint holds non-finite parameters".into()));
        }
        ScalingParams::new(self.scaling.min_val, self.scaling.max_val)?;
        Ok((model, self.scaling))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        for kind in [ModelKind::Lstm, ModelKind::Rnn] {
            let mut m = SequenceModel::new(kind, 7, 3, 4, 2).unwrap();
            m.params.init_uniform(&mut ChaCha8Rng::seed_from_u64(5));
            m.params.head.b_y = 1.0 / 3.0;
            let scaling = ScalingParams::new(-0.1, 2.0 / 7.0).unwrap();
            let text = serde_json::to_string(&ModelCheckpoint::from_model(&m, scaling)).unwrap();
            let back: ModelCheckpoint = serde_json::from_str(&text).unwrap();
            let (m2, s2) = back.into_model().unwrap();
            assert_eq!(m, m2);
            assert_eq!(scaling, s2);
        }
    }

    #[test]
    fn malformed_shapes_are_rejected() {
        let m = SequenceModel::new(ModelKind::Rnn, 3, 2, 2, 2).unwrap();
        let mut ck = ModelCheckpoint::from_model(&m, ScalingParams::new(0.0, 1.0).unwrap());
        ck.layer2.weights.pop();
        assert!(matches!(ck.into_model(), Err(Error::ShapeMismatch(_))));
    }
}
