//! Windowed LSTM regressor for reduced-state differences.
//!
//! A stack of LSTM layers reads a window of `[zbar; mu]` columns (padded
//! positions masked out, states starting at zero for every window). The top
//! layer's final hidden state, optionally passed through an affine head, is
//! the normalized prediction of `zbar_{t+1} - zbar_t`.

mod cell;
mod optim;
mod train;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, Reader, Writer};
use crate::dataset::{Batch, Normalization, WindowSample};
use crate::error::{Error, Result};

pub use cell::{cell_forward, cell_step, CellState, GateActivations, LstmLayerParams};
pub use optim::{clip_global_norm, rmsprop_step, RmspropState};
pub use train::{evaluate_loss, train, EpochRecord, TrainConfig, TrainOutcome};

pub const MODEL_MAGIC: &[u8; 8] = b"PLMODEL\0";

const FLAG_DENSE_HEAD: u64 = 1;

/// Closing affine map `y = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            w: DMatrix::zeros(n_out, n_in),
            b: DVector::zeros(n_out),
        }
    }
}

/// All trainable tensors; gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LstmLayerParams>,
    pub head: Option<Dense>,
}

impl LstmParams {
    pub fn zeros_like(&self) -> Self {
        LstmParams {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.n_x(), l.n_h()))
                .collect(),
            head: self.head.as_ref().map(|h| Dense::zeros(h.w.ncols(), h.w.nrows())),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.slices()).collect();
        if let Some(h) = &self.head {
            out.push(h.w.as_slice());
            out.push(h.b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(|l| l.slices_mut()).collect();
        if let Some(h) = &mut self.head {
            out.push(h.w.as_mut_slice());
            out.push(h.b.as_mut_slice());
        }
        out
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v *= alpha;
            }
        }
    }
}

/// Layer sizes and head choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Hidden units per LSTM layer, bottom to top.
    pub hidden: Vec<usize>,
    /// Closing affine layer to `R^r`. Without it the top layer must have `r` units.
    #[serde(default)]
    pub dense_head: bool,
}

impl Architecture {
    /// Four LSTM layers (256, 256, 256, r), no affine head.
    pub fn reference(r: usize) -> Self {
        Architecture {
            hidden: vec![256, 256, 256, r],
            dense_head: false,
        }
    }

    pub fn validate(&self, r: usize) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("every LSTM layer needs >= 1 unit".into()));
        }
        if !self.dense_head && self.hidden.last() != Some(&r) {
            return Err(Error::Config(format!(
                "without an affine head the top LSTM layer must have r = {r} units, got {}",
                self.hidden.last().unwrap()
            )));
        }
        Ok(())
    }
}

/// Output of a batched forward pass with everything backward needs.
struct ForwardTrace {
    layers: Vec<cell::LayerTrace>,
    /// normalized predictions, `r x B`
    output: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: LstmParams,
    pub n_w: usize,
    /// Scaling between physical features and the network's inputs/outputs.
    pub normalization: Normalization,
}

/// Squared-error loss `(1/r) sum_l (target_l - pred_l)^2`.
pub fn loss_se(target: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    debug_assert_eq!(target.len(), pred.len());
    let r = target.len() as f64;
    target.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r
}

impl LstmModel {
    /// Seeded initialization for inputs of `r + ell` features.
    pub fn new(arch: &Architecture, r: usize, ell: usize, n_w: usize, normalization: Normalization, seed: u64) -> Result<Self> {
        arch.validate(r)?;
        if n_w == 0 {
            return Err(Error::Config("window length must be >= 1".into()));
        }
        if normalization.input_dim() != r + ell || normalization.target_dim() != r {
            return Err(Error::Dimension(format!(
                "normalization is for ({}, {}) features, model needs ({}, {r})",
                normalization.input_dim(),
                normalization.target_dim(),
                r + ell
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut n_x = r + ell;
        for &n_h in &arch.hidden {
            layers.push(LstmLayerParams::init(n_x, n_h, &mut rng));
            n_x = n_h;
        }
        let head = arch.dense_head.then(|| {
            let limit = (6.0 / (n_x + r) as f64).sqrt();
            Dense {
                w: DMatrix::from_fn(r, n_x, |_, _| rng.random_range(-limit..limit)),
                b: DVector::zeros(r),
            }
        });
        LstmModel::from_params(LstmParams { layers, head }, n_w, normalization)
    }

    pub fn from_params(params: LstmParams, n_w: usize, normalization: Normalization) -> Result<Self> {
        let first = params
            .layers
            .first()
            .ok_or_else(|| Error::Config("model needs at least one LSTM layer".into()))?;
        let mut n_x = first.n_x();
        for l in &params.layers {
            l.validate()?;
            if l.n_x() != n_x {
                return Err(Error::Dimension("layer input size differs from previous layer's units".into()));
            }
            n_x = l.n_h();
        }
        let out_dim = match &params.head {
            Some(h) => {
                if h.w.ncols() != n_x || h.b.len() != h.w.nrows() {
                    return Err(Error::Dimension("affine head shape does not fit the top layer".into()));
                }
                h.w.nrows()
            }
            None => n_x,
        };
        if normalization.input_dim() != first.n_x() || normalization.target_dim() != out_dim {
            return Err(Error::Dimension("normalization does not match model dimensions".into()));
        }
        if n_w == 0 {
            return Err(Error::Config("window length must be >= 1".into()));
        }
        Ok(LstmModel {
            params,
            n_w,
            normalization,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].n_x()
    }

    pub fn output_dim(&self) -> usize {
        self.normalization.target_dim()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.params.layers.iter().map(|l| l.n_h()).collect(),
            dense_head: self.params.head.is_some(),
        }
    }

    fn head(&self, h: &DVector<f64>) -> DVector<f64> {
        match &self.params.head {
            Some(d) => &d.w * h + &d.b,
            None => h.clone(),
        }
    }

    /// Network output for an already normalized `n_x x w` window, evaluated
    /// step by step over its columns.
    pub fn forward_normalized(&self, window: &DMatrix<f64>) -> Result<DVector<f64>> {
        let w = window.ncols();
        if w == 0 {
            return Err(Error::Argument("window must contain at least one valid column".into()));
        }
        if w > self.n_w {
            return Err(Error::Argument(format!("window of {w} columns exceeds n_w = {}", self.n_w)));
        }
        if window.nrows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "window has {} features, model expects {}",
                window.nrows(),
                self.input_dim()
            )));
        }
        let mut seq: Vec<DVector<f64>> = window.column_iter().map(|c| c.into_owned()).collect();
        for layer in &self.params.layers {
            let mut state = CellState::zeros(layer.n_h());
            for x in seq.iter_mut() {
                state = cell_forward(x, &state, layer)?;
                *x = state.h.clone();
            }
        }
        Ok(self.head(seq.last().expect("non-empty window")))
    }

    /// Predicted `zbar_{t+1} - zbar_t` in physical units for a raw window of
    /// `[zbar; mu]` columns ending at step `t`.
    pub fn forward(&self, window: &DMatrix<f64>) -> Result<DVector<f64>> {
        if window.nrows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "window has {} features, model expects {}",
                window.nrows(),
                self.input_dim()
            )));
        }
        let normalized = self.normalization.normalize_inputs(window);
        let y = self.forward_normalized(&normalized)?;
        Ok(self.normalization.denormalize_target(&y))
    }

    /// Normalized network output for a padded window (`n_x x n_w`, validity
    /// mask per column).
    pub fn forward_masked(&self, window: &DMatrix<f64>, mask: &[bool]) -> Result<DVector<f64>> {
        if window.ncols() != mask.len() {
            return Err(Error::Dimension("mask length differs from window width".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Argument("window must contain at least one valid column".into()));
        }
        let steps: Vec<DMatrix<f64>> = window.column_iter().map(|c| DMatrix::from_column_slice(c.len(), 1, c.as_slice())).collect();
        let mask: Vec<Vec<bool>> = mask.iter().map(|&m| vec![m]).collect();
        let trace = self.forward_batch(&steps, &mask)?;
        Ok(trace.output.column(0).into_owned())
    }

    fn forward_batch(&self, steps: &[DMatrix<f64>], mask: &[Vec<bool>]) -> Result<ForwardTrace> {
        if steps.len() != mask.len() || steps.is_empty() {
            return Err(Error::Dimension("batch steps and mask disagree".into()));
        }
        if steps[0].nrows() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} features, model expects {}",
                steps[0].nrows(),
                self.input_dim()
            )));
        }
        let mut layers: Vec<cell::LayerTrace> = Vec::with_capacity(self.params.layers.len());
        for (idx, layer) in self.params.layers.iter().enumerate() {
            let inputs = if idx == 0 { steps } else { &layers[idx - 1].outputs[..] };
            let trace = cell::layer_forward(layer, inputs, mask);
            layers.push(trace);
        }
        let top = layers.last().unwrap().outputs.last().unwrap();
        let output = match &self.params.head {
            Some(d) => {
                let mut y = &d.w * top;
                for mut col in y.column_iter_mut() {
                    col += &d.b;
                }
                y
            }
            None => top.clone(),
        };
        Ok(ForwardTrace { layers, output })
    }

    /// Mean squared-error loss over a packed batch (normalized space).
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let trace = self.forward_batch(&batch.steps, &batch.mask)?;
        Ok(per_sample_losses(&trace.output, &batch.targets).iter().sum::<f64>() / batch.size() as f64)
    }

    /// Gradients of the mean batch loss w.r.t. every parameter, and the loss.
    pub fn backward_batch(&self, batch: &Batch) -> Result<(LstmParams, f64)> {
        let trace = self.forward_batch(&batch.steps, &batch.mask)?;
        let losses = per_sample_losses(&trace.output, &batch.targets);
        if let Some(j) = losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss {
                location: format!("for sample {:?}", batch.origins[j]),
            });
        }
        let b = batch.size();
        let loss = losses.iter().sum::<f64>() / b as f64;
        let r = self.output_dim();
        let dy = (&trace.output - &batch.targets) * (2.0 / (r * b) as f64);

        let mut grads = self.params.zeros_like();
        let top_trace = trace.layers.last().unwrap();
        let top_h = top_trace.outputs.last().unwrap();
        let dh_top = match (&self.params.head, &mut grads.head) {
            (Some(d), Some(gd)) => {
                gd.w.gemm(1.0, &dy, &top_h.transpose(), 0.0);
                for col in dy.column_iter() {
                    gd.b += col;
                }
                d.w.tr_mul(&dy)
            }
            _ => dy,
        };

        let steps = batch.steps.len();
        let mut d_outputs: Vec<Option<DMatrix<f64>>> = vec![None; steps];
        d_outputs[steps - 1] = Some(dh_top);
        for idx in (0..self.params.layers.len()).rev() {
            let d_inputs = cell::layer_backward(
                &self.params.layers[idx],
                &trace.layers[idx],
                &batch.mask,
                &d_outputs,
                &mut grads.layers[idx],
                idx > 0,
            );
            d_outputs = d_inputs.into_iter().map(Some).collect();
        }
        Ok((grads, loss))
    }

    /// Packs `samples` and runs [`Self::backward_batch`].
    pub fn backward(&self, samples: &[&WindowSample]) -> Result<(LstmParams, f64)> {
        let batch = Batch::pack(samples, self.n_w, &self.normalization)?;
        self.backward_batch(&batch)
    }

    /// Header: magic, version, layer count, r, ell, n_w, flags (bit 0: affine
    /// head), then (n_x, n_h) per layer, all u64. Payload: per layer
    /// W_f, W_i, W_c, W_o row-major then b_f, b_i, b_c, b_o; the head's W
    /// (r x n_h) and b if present; then input shift/scale and target
    /// shift/scale.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MODEL_MAGIC);
        let r = self.output_dim();
        w.usize(self.params.layers.len());
        w.usize(r);
        w.usize(self.input_dim() - r);
        w.usize(self.n_w);
        w.u64(if self.params.head.is_some() { FLAG_DENSE_HEAD } else { 0 });
        for l in &self.params.layers {
            w.usize(l.n_x());
            w.usize(l.n_h());
        }
        for l in &self.params.layers {
            for m in [&l.w_f, &l.w_i, &l.w_c, &l.w_o] {
                w.matrix(m);
            }
            for b in [&l.b_f, &l.b_i, &l.b_c, &l.b_o] {
                w.vector(b);
            }
        }
        if let Some(h) = &self.params.head {
            w.matrix(&h.w);
            w.vector(&h.b);
        }
        self.normalization.write(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = Reader::new(bytes, MODEL_MAGIC, path)?;
        let count = rd.usize()?;
        let r = rd.usize()?;
        let ell = rd.usize()?;
        let n_w = rd.usize()?;
        let flags = rd.u64()?;
        if flags & !FLAG_DENSE_HEAD != 0 {
            return Err(Error::format(path, format!("unknown model flags {flags:#x}")));
        }
        let shapes: Vec<(usize, usize)> = (0..count).map(|_| Ok((rd.usize()?, rd.usize()?))).collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(count);
        for &(n_x, n_h) in &shapes {
            let cols = n_h + n_x;
            let w_f = rd.matrix(n_h, cols)?;
            let w_i = rd.matrix(n_h, cols)?;
            let w_c = rd.matrix(n_h, cols)?;
            let w_o = rd.matrix(n_h, cols)?;
            layers.push(LstmLayerParams {
                w_f,
                w_i,
                w_c,
                w_o,
                b_f: rd.vector(n_h)?,
                b_i: rd.vector(n_h)?,
                b_c: rd.vector(n_h)?,
                b_o: rd.vector(n_h)?,
            });
        }
        let top = shapes.last().map_or(0, |s| s.1);
        let head = if flags & FLAG_DENSE_HEAD != 0 {
            Some(Dense {
                w: rd.matrix(r, top)?,
                b: rd.vector(r)?,
            })
        } else {
            None
        };
        let normalization = Normalization::read(&mut rd, r + ell, r)?;
        rd.finish()?;
        LstmModel::from_params(LstmParams { layers, head }, n_w, normalization).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

fn per_sample_losses(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> Vec<f64> {
    pred.column_iter()
        .zip(target.column_iter())
        .map(|(p, t)| loss_se(&t.into_owned(), &p.into_owned()))
        .collect()
}
