//! Single-layer LSTM regressor for the stretching regime.
//!
//! The cell follows the classic gate layout with the inputs concatenated as
//! `z = [x_t, h_{t−1}]`:
//!
//! ```text
//! f_t = σ(W_f z + b_f)
//! i_t = σ(W_i z + b_i)
//! c̃_t = tanh(W_h z)            (no bias on the candidate)
//! c_t = f_t ⊙ c_{t−1} + i_t ⊙ c̃_t
//! o_t = σ(W_o z + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! A linear readout on the final hidden state gives the normalized strain.

mod dataset;
mod io;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::StretchEstimator;

pub use dataset::{
    features, synthetic_stretch_series, SequenceDataset, StretchDatasetConfig, StretchSeries, Window,
};
pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use train::{learning_rate_sweep, train, Histogram, TrainConfig, TrainReport};

pub const DEFAULT_HIDDEN_SIZE: usize = 32;
pub const DEFAULT_WINDOW: usize = 20;
/// Features per time step: `ΔR/R` and its first difference.
pub const FEATURE_COUNT: usize = 2;

/// Trainable parameters. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_forget: DMatrix<f64>,
    pub w_input: DMatrix<f64>,
    pub w_candidate: DMatrix<f64>,
    pub w_output: DMatrix<f64>,
    pub b_forget: DVector<f64>,
    pub b_input: DVector<f64>,
    pub b_output: DVector<f64>,
    pub w_readout: DVector<f64>,
    pub b_readout: f64,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let cols = input_size + hidden_size;
        let m = || DMatrix::zeros(hidden_size, cols);
        let v = || DVector::zeros(hidden_size);
        Self {
            w_forget: m(),
            w_input: m(),
            w_candidate: m(),
            w_output: m(),
            b_forget: v(),
            b_input: v(),
            b_output: v(),
            w_readout: v(),
            b_readout: 0.0,
        }
    }

    /// Uniform `±1/√H` weights, forget bias 1.
    pub fn random(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / (hidden_size as f64).sqrt();
        for s in p.slices_mut() {
            for v in s.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p.b_forget.fill(1.0);
        p.b_readout = 0.0;
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_forget.ncols() - self.w_forget.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_forget.nrows()
    }

    /// Parameter blocks in a fixed order (column-major within matrices).
    pub fn slices(&self) -> [&[f64]; 9] {
        [
            self.w_forget.as_slice(),
            self.w_input.as_slice(),
            self.w_candidate.as_slice(),
            self.w_output.as_slice(),
            self.b_forget.as_slice(),
            self.b_input.as_slice(),
            self.b_output.as_slice(),
            self.w_readout.as_slice(),
            std::slice::from_ref(&self.b_readout),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_forget.as_mut_slice(),
            self.w_input.as_mut_slice(),
            self.w_candidate.as_mut_slice(),
            self.w_output.as_mut_slice(),
            self.b_forget.as_mut_slice(),
            self.b_input.as_mut_slice(),
            self.b_output.as_mut_slice(),
            self.w_readout.as_mut_slice(),
            std::slice::from_mut(&mut self.b_readout),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.slices_mut() {
            block.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Z-score statistics applied to inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Normalization {
    pub fn identity(input_size: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_size],
            input_scale: vec![1.0; input_size],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub window: usize,
    pub params: LstmParams,
    pub norm: Normalization,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one step, kept for backpropagation.
#[derive(Clone, Debug)]
struct StepCache {
    z: DVector<f64>,
    forget: DVector<f64>,
    input: DVector<f64>,
    candidate: DVector<f64>,
    output: DVector<f64>,
    cell: DVector<f64>,
    cell_tanh: DVector<f64>,
}

fn step_cached(
    x: &[f64],
    h_prev: &DVector<f64>,
    c_prev: &DVector<f64>,
    p: &LstmParams,
) -> StepCache {
    let z = DVector::from_iterator(x.len() + h_prev.len(), x.iter().chain(h_prev.iter()).copied());
    let mut forget = &p.w_forget * &z + &p.b_forget;
    forget.apply(|v| *v = sigmoid(*v));
    let mut input = &p.w_input * &z + &p.b_input;
    input.apply(|v| *v = sigmoid(*v));
    let mut candidate = &p.w_candidate * &z;
    candidate.apply(|v| *v = v.tanh());
    let mut output = &p.w_output * &z + &p.b_output;
    output.apply(|v| *v = sigmoid(*v));
    let cell = forget.component_mul(c_prev) + input.component_mul(&candidate);
    let cell_tanh = cell.map(f64::tanh);
    StepCache {
        z,
        forget,
        input,
        candidate,
        output,
        cell,
        cell_tanh,
    }
}

impl LstmModel {
    pub fn new(window: usize, params: LstmParams, norm: Normalization) -> Result<Self> {
        let m = Self {
            window,
            params,
            norm,
        };
        m.check()?;
        Ok(m)
    }

    /// All-zero parameters with identity normalization.
    pub fn zeros(input_size: usize, hidden_size: usize, window: usize) -> Self {
        Self {
            window,
            params: LstmParams::zeros(input_size, hidden_size),
            norm: Normalization::identity(input_size),
        }
    }

    pub fn input_size(&self) -> usize {
        self.params.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.params.hidden_size()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let p = &self.params;
        let h = p.w_forget.nrows();
        if h == 0 {
            return Err(Error::InvalidModel("hidden size must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidModel("window must be at least 1".into()));
        }
        let cols = p.w_forget.ncols();
        if cols <= h {
            return Err(Error::InvalidModel("input size must be at least 1".into()));
        }
        let d = cols - h;
        for (name, w) in [
            ("W_i", &p.w_input),
            ("W_h", &p.w_candidate),
            ("W_o", &p.w_output),
        ] {
            if w.shape() != (h, cols) {
                return Err(Error::InvalidModel(format!(
                    "{name} is {:?}, expected {:?}",
                    w.shape(),
                    (h, cols)
                )));
            }
        }
        for (name, b) in [
            ("b_f", &p.b_forget),
            ("b_i", &p.b_input),
            ("b_o", &p.b_output),
            ("readout_w", &p.w_readout),
        ] {
            if b.len() != h {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries, expected {h}",
                    b.len()
                )));
            }
        }
        if self.norm.input_mean.len() != d || self.norm.input_scale.len() != d {
            return Err(Error::InvalidModel(format!(
                "normalization has wrong width for input size {d}"
            )));
        }
        if !p.is_finite() {
            return Err(Error::InvalidModel("non-finite weight".into()));
        }
        let n = &self.norm;
        if n.input_scale.iter().chain([&n.target_scale]).any(|s| !(*s > 0.0 && s.is_finite()))
            || n.input_mean.iter().chain([&n.target_mean]).any(|m| !m.is_finite())
        {
            return Err(Error::InvalidModel("bad normalization statistics".into()));
        }
        Ok(())
    }

    fn normalized_rows(&self, window: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        if window.nrows() != self.window || window.ncols() != self.input_size() {
            return Err(Error::DimensionMismatch {
                what: "LSTM window",
                expected: self.window * self.input_size(),
                found: window.nrows() * window.ncols(),
            });
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LSTM input"));
        }
        Ok((0..window.nrows())
            .map(|t| {
                (0..window.ncols())
                    .map(|d| (window[(t, d)] - self.norm.input_mean[d]) / self.norm.input_scale[d])
                    .collect()
            })
            .collect())
    }

    fn run(&self, rows: &[Vec<f64>]) -> (f64, Vec<StepCache>) {
        let h = self.hidden_size();
        let mut caches: Vec<StepCache> = Vec::with_capacity(rows.len());
        let zero = DVector::zeros(h);
        for x in rows {
            let (hp, cp) = match caches.last() {
                Some(c) => (c.output.component_mul(&c.cell_tanh), c.cell.clone()),
                None => (zero.clone(), zero.clone()),
            };
            caches.push(step_cached(x, &hp, &cp, &self.params));
        }
        let last = caches.last().expect("window is non-empty");
        let h_final = last.output.component_mul(&last.cell_tanh);
        let y = self.params.w_readout.dot(&h_final) + self.params.b_readout;
        (y, caches)
    }

    /// Runs the window (raw features, `window × D`) from zero state and
    /// returns the de-normalized strain.
    pub fn forward_sequence(&self, window: &DMatrix<f64>) -> Result<f64> {
        let rows = self.normalized_rows(window)?;
        let (y, _) = self.run(&rows);
        Ok(y * self.norm.target_scale + self.norm.target_mean)
    }

    /// Squared error in normalized target units and its gradient with
    /// respect to every parameter, by backpropagation through time.
    pub fn backward(&self, window: &DMatrix<f64>, target: f64) -> Result<(f64, LstmParams)> {
        let rows = self.normalized_rows(window)?;
        let target_n = (target - self.norm.target_mean) / self.norm.target_scale;
        let (y, caches) = self.run(&rows);
        let residual = y - target_n;
        let loss = residual * residual;
        if !loss.is_finite() {
            return Err(Error::NonFinite("LSTM loss"));
        }
        let p = &self.params;
        let d = self.input_size();
        let hs = self.hidden_size();
        let mut g = LstmParams::zeros(d, hs);

        let dy = 2.0 * residual;
        let last = caches.last().unwrap();
        g.w_readout = last.output.component_mul(&last.cell_tanh) * dy;
        g.b_readout = dy;

        let mut dh = &p.w_readout * dy;
        let mut dc = DVector::zeros(hs);
        let zero = DVector::zeros(hs);
        for t in (0..caches.len()).rev() {
            let s = &caches[t];
            let c_prev = if t > 0 { &caches[t - 1].cell } else { &zero };
            let d_out = dh.component_mul(&s.cell_tanh);
            dc += dh
                .component_mul(&s.output)
                .component_mul(&s.cell_tanh.map(|v| 1.0 - v * v));
            let a_forget = dc
                .component_mul(c_prev)
                .component_mul(&s.forget.map(|v| v * (1.0 - v)));
            let a_input = dc
                .component_mul(&s.candidate)
                .component_mul(&s.input.map(|v| v * (1.0 - v)));
            let a_cand = dc
                .component_mul(&s.input)
                .component_mul(&s.candidate.map(|v| 1.0 - v * v));
            let a_out = d_out.component_mul(&s.output.map(|v| v * (1.0 - v)));

            g.w_forget.ger(1.0, &a_forget, &s.z, 1.0);
            g.w_input.ger(1.0, &a_input, &s.z, 1.0);
            g.w_candidate.ger(1.0, &a_cand, &s.z, 1.0);
            g.w_output.ger(1.0, &a_out, &s.z, 1.0);
            g.b_forget += &a_forget;
            g.b_input += &a_input;
            g.b_output += &a_out;

            let dz = p.w_forget.tr_mul(&a_forget)
                + p.w_input.tr_mul(&a_input)
                + p.w_candidate.tr_mul(&a_cand)
                + p.w_output.tr_mul(&a_out);
            dh = dz.rows(d, hs).into_owned();
            dc = dc.component_mul(&s.forget);
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("LSTM gradient"));
        }
        Ok((loss, g))
    }

    /// Mean loss and mean gradient over a batch.
    pub fn batch_gradient<'a>(
        &self,
        batch: impl IntoIterator<Item = (&'a DMatrix<f64>, f64)>,
    ) -> Result<(f64, LstmParams)> {
        let mut total = LstmParams::zeros(self.input_size(), self.hidden_size());
        let mut loss = 0.0;
        let mut n = 0usize;
        for (w, target) in batch {
            let (l, g) = self.backward(w, target)?;
            loss += l;
            total.add_scaled(&g, 1.0);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        total.scale(1.0 / n as f64);
        Ok((loss / n as f64, total))
    }

    /// Strain predicted from a raw `ΔR/R` history (oldest first).
    pub fn predict_from_ratios(&self, ratios: &[f64]) -> Result<f64> {
        if ratios.len() != self.window {
            return Err(Error::WindowUnderflow {
                needed: self.window,
                available: ratios.len(),
            });
        }
        self.forward_sequence(&features(ratios))
    }
}

/// One cell update on raw (already normalized) vectors.
pub fn lstm_step(
    x: &DVector<f64>,
    h_prev: &DVector<f64>,
    c_prev: &DVector<f64>,
    m: &LstmModel,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (d, h) = (m.input_size(), m.hidden_size());
    for (what, len, expected) in [
        ("LSTM input", x.len(), d),
        ("hidden state", h_prev.len(), h),
        ("cell state", c_prev.len(), h),
    ] {
        if len != expected {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found: len,
            });
        }
    }
    if x.iter().chain(h_prev.iter()).chain(c_prev.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM step input"));
    }
    let s = step_cached(x.as_slice(), h_prev, c_prev, &m.params);
    Ok((s.output.component_mul(&s.cell_tanh), s.cell))
}

impl StretchEstimator for LstmModel {
    fn window_len(&self) -> usize {
        self.window
    }

    /// With `clamp`, predictions below zero strain are raised to zero.
    fn estimate(&self, ratios: &[f64], clamp: bool) -> Result<f64> {
        let p = self.predict_from_ratios(ratios)?;
        Ok(if clamp { p.max(0.0) } else { p })
    }
}
