use rand::Rng;

use super::layers::{DenseHeadParams, LayerParams, LayerTape, ModelKind};
use crate::error::{Error, Result};

/// All trainable parameters of a two-layer recurrent predictor. Gradients
/// share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layer1: LayerParams,
    pub layer2: LayerParams,
    pub head: DenseHeadParams,
}

pub type Gradients = Parameters;

impl Parameters {
    pub fn zeros(kind: ModelKind, hidden1: usize, hidden2: usize, dense: usize) -> Self {
        Self {
            layer1: LayerParams::zeros(kind, 1, hidden1),
            layer2: LayerParams::zeros(kind, hidden1, hidden2),
            head: DenseHeadParams::zeros(hidden2, dense),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.layer1.kind,
            self.layer1.hidden_size,
            self.layer2.hidden_size,
            self.head.width,
        )
    }

    /// Parameter blocks in a fixed order.
    pub fn slices(&self) -> [&[f64]; 8] {
        [
            &self.layer1.weights,
            &self.layer1.bias,
            &self.layer2.weights,
            &self.layer2.bias,
            &self.head.w_d,
            &self.head.b_d,
            &self.head.w_y,
            std::slice::from_ref(&self.head.b_y),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.layer1.weights,
            &mut self.layer1.bias,
            &mut self.layer2.weights,
            &mut self.layer2.bias,
            &mut self.head.w_d,
            &mut self.head.b_d,
            &mut self.head.w_y,
            std::slice::from_mut(&mut self.head.b_y),
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        };
        let rows1 = self.layer1.rows();
        let rows2 = self.layer2.rows();
        fill(&mut self.layer1.weights, rows1, rng);
        fill(&mut self.layer2.weights, rows2, rng);
        fill(&mut self.head.w_d, self.head.input_size, rng);
        fill(&mut self.head.w_y, self.head.width, rng);
        self.layer1.bias.iter_mut().for_each(|v| *v = 0.0);
        self.layer2.bias.iter_mut().for_each(|v| *v = 0.0);
        self.head.b_d.iter_mut().for_each(|v| *v = 0.0);
        self.head.b_y = 0.0;
    }
}

/// Two stacked recurrent layers read the window; the last hidden state of
/// the second layer feeds a ReLU dense layer and a linear scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub kind: ModelKind,
    pub t_x: usize,
    pub params: Parameters,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub window: Vec<f64>,
    pub layer1: LayerTape,
    pub layer2: LayerTape,
    pub dense_pre: Vec<f64>,
    pub dense: Vec<f64>,
    pub output: f64,
}

impl SequenceModel {
    pub fn new(kind: ModelKind, t_x: usize, hidden1: usize, hidden2: usize, dense: usize) -> Result<Self> {
        if t_x == 0 || hidden1 == 0 || hidden2 == 0 || dense == 0 {
            return Err(Error::ConfigInvalid(
                "window length and layer sizes must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            t_x,
            params: Parameters::zeros(kind, hidden1, hidden2, dense),
        })
    }

    pub fn hidden1(&self) -> usize {
        self.params.layer1.hidden_size
    }

    pub fn hidden2(&self) -> usize {
        self.params.layer2.hidden_size
    }

    pub fn dense(&self) -> usize {
        self.params.head.width
    }

    pub fn forward(&self, window: &[f64]) -> Result<(f64, Tape)> {
        if window.len() != self.t_x {
            return Err(Error::ShapeMismatch(format!(
                "window length {} does not match model input length {}",
                window.len(),
                self.t_x
            )));
        }
        let p = &self.params;
        let layer1 = p.layer1.run(window);
        let layer2 = p.layer2.run(layer1.outputs(p.layer1.hidden_size));
        let n = p.layer2.hidden_size;
        let (dense_pre, dense, output) = p.head.run(layer2.hidden_at(self.t_x, n));
        Ok((
            output,
            Tape {
                window: window.to_vec(),
                layer1,
                layer2,
                dense_pre,
                dense,
                output,
            },
        ))
    }

    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        self.forward(window).map(|(y, _)| y)
    }

    /// Adds the gradient of `d_output * ŷ` for one tape into `grads`.
    pub fn accumulate_gradient(&self, tape: &Tape, d_output: f64, grads: &mut Gradients) {
        let p = &self.params;
        let (m, n) = (p.layer1.hidden_size, p.layer2.hidden_size);
        let t_x = self.t_x;
        let h_last = tape.layer2.hidden_at(t_x, n);
        let dh_last = p
            .head
            .backprop(h_last, &tape.dense_pre, &tape.dense, d_output, &mut grads.head);

        let mut d_out2 = vec![0.0; t_x * n];
        d_out2[(t_x - 1) * n..].copy_from_slice(&dh_last);
        let mut d_a = vec![0.0; t_x * m];
        let a_seq = tape.layer1.outputs(m);
        p.layer2
            .backprop(a_seq, &tape.layer2, &d_out2, &mut grads.layer2, Some(&mut d_a));
        p.layer1
            .backprop(&tape.window, &tape.layer1, &d_a, &mut grads.layer1, None);
    }

    /// Gradient of [`mse_loss`] over the batch for tapes from [`forward`].
    ///
    /// [`forward`]: SequenceModel::forward
    pub fn backward(&self, tapes: &[Tape], targets: &[f64]) -> Result<Gradients> {
        if tapes.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: tapes.len(),
                right: targets.len(),
            });
        }
        let mut grads = self.params.zeros_like();
        let scale = 2.0 / tapes.len() as f64;
        for (tape, &y) in tapes.iter().zip(targets) {
            self.accumulate_gradient(tape, scale * (tape.output - y), &mut grads);
        }
        Ok(grads)
    }

    /// Forward and backward over a batch without keeping every tape alive.
    /// Returns `(loss, gradients)`; windows are visited in the given order so
    /// the summation order is fixed.
    pub fn loss_and_gradient<'a, I>(&self, batch: I, len: usize) -> Result<(f64, Gradients)>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        if len == 0 {
            return Err(Error::Empty);
        }
        let mut grads = self.params.zeros_like();
        let scale = 2.0 / len as f64;
        let mut sse = 0.0;
        for (window, y) in batch {
            let (out, tape) = self.forward(window)?;
            let r = out - y;
            sse += r * r;
            self.accumulate_gradient(&tape, scale * r, &mut grads);
        }
        Ok((sse / len as f64, grads))
    }
}

/// Mean squared error.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / predictions.len() as f64)
}
