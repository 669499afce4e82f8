//! Recurrent cells and the dense output head.
//!
//! Weight matrices are stored row-major with shape `(hidden + input) x width`,
//! where rows `0..hidden` multiply the previous hidden state and the remaining
//! rows multiply the input. `width` is `hidden` for a vanilla RNN cell and
//! `4 * hidden` for an LSTM cell, with gate blocks ordered input, forget,
//! output, candidate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Rnn,
}

impl ModelKind {
    pub fn gates(self) -> usize {
        match self {
            ModelKind::Lstm => 4,
            ModelKind::Rnn => 1,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Rnn => "rnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "rnn" => Ok(ModelKind::Rnn),
            other => Err(Error::ConfigInvalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

/// Parameters of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: ModelKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters of a vanilla `tanh` layer.
pub type RnnLayerParams = LayerParams;
/// Parameters of a four-gate LSTM layer.
pub type LstmLayerParams = LayerParams;

impl LayerParams {
    pub fn zeros(kind: ModelKind, input_size: usize, hidden_size: usize) -> Self {
        let width = kind.gates() * hidden_size;
        Self {
            kind,
            input_size,
            hidden_size,
            weights: vec![0.0; (hidden_size + input_size) * width],
            bias: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.kind.gates() * self.hidden_size
    }

    pub fn rows(&self) -> usize {
        self.hidden_size + self.input_size
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width() + col]
    }

    pub fn weight_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        let w = self.width();
        &mut self.weights[row * w + col]
    }

    /// Column offset of `gate` within the LSTM weight/bias blocks.
    pub fn gate_offset(&self, gate: Gate) -> usize {
        debug_assert_eq!(self.kind, ModelKind::Lstm);
        gate as usize * self.hidden_size
    }

    fn check_shapes(&self) -> Result<()> {
        if self.weights.len() != self.rows() * self.width() || self.bias.len() != self.width() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {}x{} weights and {} biases",
                self.rows(),
                self.width(),
                self.width()
            )));
        }
        Ok(())
    }

    fn check_step(&self, h_prev: &[f64], x_in: &[f64]) -> Result<()> {
        self.check_shapes()?;
        if h_prev.len() != self.hidden_size || x_in.len() != self.input_size {
            return Err(Error::ShapeMismatch(format!(
                "layer expects hidden {} and input {}, got {} and {}",
                self.hidden_size,
                self.input_size,
                h_prev.len(),
                x_in.len()
            )));
        }
        Ok(())
    }

    /// `z = W^T [h_prev; x] + b`, written into `z` (length `width`).
    #[inline]
    fn affine(&self, h_prev: &[f64], x_in: &[f64], z: &mut [f64]) {
        let width = self.width();
        z.copy_from_slice(&self.bias);
        let rows = self.weights.chunks_exact(width);
        for (&v, row) in h_prev.iter().chain(x_in).zip(rows) {
            if v != 0.0 {
                for (zc, &w) in z.iter_mut().zip(row) {
                    *zc += v * w;
                }
            }
        }
    }

    /// `out = W [dz]` restricted to the rows, i.e. gradient w.r.t. `[h_prev; x]`.
    #[inline]
    fn back_affine(&self, dz: &[f64], out: &mut [f64]) {
        let width = self.width();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(width)) {
            *o = row.iter().zip(dz).map(|(w, d)| w * d).sum();
        }
    }

    /// Accumulates `concat ⊗ dz` into this gradient block.
    #[inline]
    fn accumulate(&mut self, h_prev: &[f64], x_in: &[f64], dz: &[f64]) {
        let width = self.width();
        for (b, d) in self.bias.iter_mut().zip(dz) {
            *b += d;
        }
        let rows = self.weights.chunks_exact_mut(width);
        for (&v, row) in h_prev.iter().chain(x_in).zip(rows) {
            if v != 0.0 {
                for (g, &d) in row.iter_mut().zip(dz) {
                    *g += v * d;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh(W^T [h_prev; x_in] + b)`.
pub fn rnn_cell_forward(params: &RnnLayerParams, h_prev: &[f64], x_in: &[f64]) -> Result<Vec<f64>> {
    if params.kind != ModelKind::Rnn {
        return Err(Error::ShapeMismatch("expected RNN layer parameters".into()));
    }
    params.check_step(h_prev, x_in)?;
    let mut z = vec![0.0; params.width()];
    params.affine(h_prev, x_in, &mut z);
    z.iter_mut().for_each(|v| *v = v.tanh());
    Ok(z)
}

/// Standard four-gate LSTM step; returns `(h_new, c_new)`.
pub fn lstm_cell_forward(
    params: &LstmLayerParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x_in: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.kind != ModelKind::Lstm {
        return Err(Error::ShapeMismatch("expected LSTM layer parameters".into()));
    }
    params.check_step(h_prev, x_in)?;
    if c_prev.len() != params.hidden_size {
        return Err(Error::ShapeMismatch("cell state has wrong length".into()));
    }
    let h = params.hidden_size;
    let mut z = vec![0.0; params.width()];
    params.affine(h_prev, x_in, &mut z);
    lstm_activate(&mut z, h);
    let mut c_new = vec![0.0; h];
    let mut h_new = vec![0.0; h];
    for j in 0..h {
        let (i, f, o, g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
        c_new[j] = f * c_prev[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

#[inline]
fn lstm_activate(z: &mut [f64], h: usize) {
    let (sig, cand) = z.split_at_mut(3 * h);
    sig.iter_mut().for_each(|v| *v = sigmoid(*v));
    cand.iter_mut().for_each(|v| *v = v.tanh());
}

/// Activations cached by [`LayerParams::run`] for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct LayerTape {
    /// `(T + 1) x hidden`; row 0 is the zero initial state.
    pub hidden: Vec<f64>,
    /// `(T + 1) x hidden` cell states (LSTM only).
    pub cell: Vec<f64>,
    /// `T x 4·hidden` activated gates (LSTM only).
    pub gates: Vec<f64>,
    /// `T x hidden` values of `tanh(c_t)` (LSTM only).
    pub tanh_cell: Vec<f64>,
}

impl LayerTape {
    pub fn hidden_at(&self, t: usize, h: usize) -> &[f64] {
        &self.hidden[t * h..(t + 1) * h]
    }

    /// Hidden states for steps `1..=T`, concatenated.
    pub fn outputs(&self, h: usize) -> &[f64] {
        &self.hidden[h..]
    }
}

impl LayerParams {
    /// Runs the layer over `xs` (`T x input_size`) from zero initial state.
    pub(crate) fn run(&self, xs: &[f64]) -> LayerTape {
        let h = self.hidden_size;
        let steps = xs.len() / self.input_size;
        let mut tape = LayerTape {
            hidden: vec![0.0; (steps + 1) * h],
            ..Default::default()
        };
        let mut z = vec![0.0; self.width()];
        match self.kind {
            ModelKind::Rnn => {
                for t in 0..steps {
                    let x = &xs[t * self.input_size..(t + 1) * self.input_size];
                    let (prev, next) = tape.hidden.split_at_mut((t + 1) * h);
                    self.affine(&prev[t * h..], x, &mut z);
                    for (dst, v) in next[..h].iter_mut().zip(&z) {
                        *dst = v.tanh();
                    }
                }
            }
            ModelKind::Lstm => {
                tape.cell = vec![0.0; (steps + 1) * h];
                tape.gates = vec![0.0; steps * 4 * h];
                tape.tanh_cell = vec![0.0; steps * h];
                for t in 0..steps {
                    let x = &xs[t * self.input_size..(t + 1) * self.input_size];
                    self.affine(&tape.hidden[t * h..(t + 1) * h], x, &mut z);
                    lstm_activate(&mut z, h);
                    for j in 0..h {
                        let (i, f, o, g) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                        let c = f * tape.cell[t * h + j] + i * g;
                        let tc = c.tanh();
                        tape.cell[(t + 1) * h + j] = c;
                        tape.tanh_cell[t * h + j] = tc;
                        tape.hidden[(t + 1) * h + j] = o * tc;
                    }
                    tape.gates[t * 4 * h..(t + 1) * 4 * h].copy_from_slice(&z);
                }
            }
        }
        tape
    }

    /// Backpropagation through time.
    ///
    /// `d_out` holds the external gradient on each output `h_1..h_T`
    /// (`T x hidden`). Parameter gradients are added into `grads`; when
    /// `d_inputs` is given it receives the gradient w.r.t. `xs`.
    pub(crate) fn backprop(
        &self,
        xs: &[f64],
        tape: &LayerTape,
        d_out: &[f64],
        grads: &mut LayerParams,
        mut d_inputs: Option<&mut [f64]>,
    ) {
        let h = self.hidden_size;
        let n_in = self.input_size;
        let steps = xs.len() / n_in;
        let width = self.width();
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; width];
        let mut dconcat = vec![0.0; h + n_in];
        for t in (0..steps).rev() {
            let h_prev = &tape.hidden[t * h..(t + 1) * h];
            let h_t = &tape.hidden[(t + 1) * h..(t + 2) * h];
            let x = &xs[t * n_in..(t + 1) * n_in];
            match self.kind {
                ModelKind::Rnn => {
                    for j in 0..h {
                        let dh = d_out[t * h + j] + dh_next[j];
                        dz[j] = dh * (1.0 - h_t[j] * h_t[j]);
                    }
                }
                ModelKind::Lstm => {
                    let g = &tape.gates[t * 4 * h..(t + 1) * 4 * h];
                    let tc = &tape.tanh_cell[t * h..(t + 1) * h];
                    let c_prev = &tape.cell[t * h..(t + 1) * h];
                    for j in 0..h {
                        let (ig, fg, og, cg) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                        let dh = d_out[t * h + j] + dh_next[j];
                        let d_o = dh * tc[j];
                        let dc = dc_next[j] + dh * og * (1.0 - tc[j] * tc[j]);
                        let d_i = dc * cg;
                        let d_g = dc * ig;
                        let d_f = dc * c_prev[j];
                        dc_next[j] = dc * fg;
                        dz[j] = d_i * ig * (1.0 - ig);
                        dz[h + j] = d_f * fg * (1.0 - fg);
                        dz[2 * h + j] = d_o * og * (1.0 - og);
                        dz[3 * h + j] = d_g * (1.0 - cg * cg);
                    }
                }
            }
            grads.accumulate(h_prev, x, &dz);
            self.back_affine(&dz, &mut dconcat);
            dh_next.copy_from_slice(&dconcat[..h]);
            if let Some(dx) = d_inputs.as_deref_mut() {
                dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dconcat[h..]);
            }
        }
    }
}

/// Two dense layers: `d = ReLU(W_d^T h + b_d)`, then `ŷ = w_y · d + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHeadParams {
    pub input_size: usize,
    pub width: usize,
    /// `input_size x width`, row-major.
    pub w_d: Vec<f64>,
    pub b_d: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

impl DenseHeadParams {
    pub fn zeros(input_size: usize, width: usize) -> Self {
        Self {
            input_size,
            width,
            w_d: vec![0.0; input_size * width],
            b_d: vec![0.0; width],
            w_y: vec![0.0; width],
            b_y: 0.0,
        }
    }

    /// Returns `(pre-activation, activation, ŷ)`.
    pub(crate) fn run(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let mut pre = self.b_d.clone();
        for (&v, row) in h.iter().zip(self.w_d.chunks_exact(self.width)) {
            for (p, &w) in pre.iter_mut().zip(row) {
                *p += v * w;
            }
        }
        let d: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let y = self.b_y + d.iter().zip(&self.w_y).map(|(a, b)| a * b).sum::<f64>();
        (pre, d, y)
    }

    /// Adds parameter gradients for output gradient `dy` and returns the
    /// gradient w.r.t. the head input.
    pub(crate) fn backprop(&self, h: &[f64], pre: &[f64], d: &[f64], dy: f64, grads: &mut DenseHeadParams) -> Vec<f64> {
        grads.b_y += dy;
        let mut dpre = vec![0.0; self.width];
        for k in 0..self.width {
            grads.w_y[k] += dy * d[k];
            dpre[k] = if pre[k] > 0.0 { dy * self.w_y[k] } else { 0.0 };
            grads.b_d[k] += dpre[k];
        }
        let mut dh = vec![0.0; self.input_size];
        for (r, &v) in h.iter().enumerate() {
            let row = &self.w_d[r * self.width..(r + 1) * self.width];
            let grow = &mut grads.w_d[r * self.width..(r + 1) * self.width];
            let mut acc = 0.0;
            for k in 0..self.width {
                grow[k] += v * dpre[k];
                acc += row[k] * dpre[k];
            }
            dh[r] = acc;
        }
        dh
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_rnn_cell_outputs_zero() {
        let p = LayerParams::zeros(ModelKind::Rnn, 2, 3);
        assert_eq!(
            rnn_cell_forward(&p, &[0.3, -0.2, 0.9], &[5.0, -7.0]).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn scalar_rnn_cell() {
        let mut p = LayerParams::zeros(ModelKind::Rnn, 1, 1);
        p.weights = vec![0.0, 1.0];
        let h = rnn_cell_forward(&p, &[0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(h[0], 1f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(h[0], 0.7616, epsilon = 1e-4);
    }

    #[test]
    fn rnn_output_stays_inside_unit_interval() {
        let mut p = LayerParams::zeros(ModelKind::Rnn, 1, 2);
        p.weights.iter_mut().for_each(|w| *w = 3.0);
        let h = rnn_cell_forward(&p, &[0.5, 0.5], &[4.0]).unwrap();
        assert!(h.iter().all(|v| v.abs() <= 1.0));
        assert!(rnn_cell_forward(&p, &[0.5], &[4.0]).is_err());
    }

    #[test]
    fn zero_lstm_cell() {
        let p = LayerParams::zeros(ModelKind::Lstm, 1, 2);
        let (h, c) = lstm_cell_forward(&p, &[0.0, 0.0], &[0.0, 0.0], &[1.0]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_gates_hold_cell_state() {
        let mut p = LayerParams::zeros(ModelKind::Lstm, 1, 1);
        let f = p.gate_offset(Gate::Forget);
        let i = p.gate_offset(Gate::Input);
        p.bias[f] = 60.0;
        p.bias[i] = -60.0;
        let g = p.gate_offset(Gate::Candidate);
        p.bias[g] = 1.0;
        let (_, c) = lstm_cell_forward(&p, &[0.2], &[0.75], &[3.0]).unwrap();
        assert_abs_diff_eq!(c[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn scalar_lstm_cell() {
        let mut p = LayerParams::zeros(ModelKind::Lstm, 1, 1);
        let g = p.gate_offset(Gate::Candidate);
        p.bias[g] = 1.0;
        let (h, c) = lstm_cell_forward(&p, &[0.0], &[1.0], &[0.0]).unwrap();
        let c_expected = 0.5 + 0.5 * 1f64.tanh();
        assert_abs_diff_eq!(c[0], c_expected, epsilon = 1e-15);
        assert_abs_diff_eq!(c[0], 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(h[0], 0.5 * c_expected.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(h[0], 0.3533, epsilon = 2e-4);
    }

    #[test]
    fn run_matches_cell_steps() {
        let mut p = LayerParams::zeros(ModelKind::Lstm, 1, 2);
        for (k, w) in p.weights.iter_mut().enumerate() {
            *w = ((k * 37 % 11) as f64 - 5.0) / 10.0;
        }
        let xs = [0.3, -0.1, 0.8];
        let tape = p.run(&xs);
        let (mut h, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for (t, x) in xs.iter().enumerate() {
            (h, c) = lstm_cell_forward(&p, &h, &c, &[*x]).unwrap();
            assert_eq!(tape.hidden_at(t + 1, 2), &h[..]);
        }
    }
}
