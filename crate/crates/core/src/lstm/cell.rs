//! Single LSTM layer: parameters, the cell recurrence and its batched,
//! masked forward/backward passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate weights act on the concatenation `[h_{i-1}; x_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// forget gate
    pub w_f: DMatrix<f64>,
    /// input gate
    pub w_i: DMatrix<f64>,
    /// candidate cell state
    pub w_c: DMatrix<f64>,
    /// output gate
    pub w_o: DMatrix<f64>,
    pub b_f: DVector<f64>,
    pub b_i: DVector<f64>,
    pub b_c: DVector<f64>,
    pub b_o: DVector<f64>,
}

impl LstmLayerParams {
    pub fn zeros(n_x: usize, n_h: usize) -> Self {
        let w = DMatrix::<f64>::zeros(n_h, n_h + n_x);
        let b = DVector::zeros(n_h);
        LstmLayerParams {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Uniform weights in `+-sqrt(6 / (2 n_h + n_x))`, zero biases except a
    /// unit forget-gate bias.
    pub fn init<R: Rng>(n_x: usize, n_h: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (2 * n_h + n_x) as f64).sqrt();
        let mut draw = || DMatrix::from_fn(n_h, n_h + n_x, |_, _| rng.random_range(-limit..limit));
        let (w_f, w_i, w_c, w_o) = (draw(), draw(), draw(), draw());
        LstmLayerParams {
            w_f,
            w_i,
            w_c,
            w_o,
            b_f: DVector::from_element(n_h, 1.0),
            b_i: DVector::zeros(n_h),
            b_c: DVector::zeros(n_h),
            b_o: DVector::zeros(n_h),
        }
    }

    pub fn n_h(&self) -> usize {
        self.w_f.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.w_f.ncols() - self.n_h()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_h, cols) = self.w_f.shape();
        if cols <= n_h {
            return Err(Error::Dimension("gate weights need n_h + n_x columns with n_x >= 1".into()));
        }
        for w in [&self.w_i, &self.w_c, &self.w_o] {
            if w.shape() != (n_h, cols) {
                return Err(Error::Dimension("gate weight shapes differ".into()));
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_c, &self.b_o] {
            if b.len() != n_h {
                return Err(Error::Dimension("gate bias length differs from n_h".into()));
            }
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite layer parameter".into()));
        }
        Ok(())
    }

    pub(crate) fn slices(&self) -> [&[f64]; 8] {
        [
            self.w_f.as_slice(),
            self.w_i.as_slice(),
            self.w_c.as_slice(),
            self.w_o.as_slice(),
            self.b_f.as_slice(),
            self.b_i.as_slice(),
            self.b_c.as_slice(),
            self.b_o.as_slice(),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w_f.as_mut_slice(),
            self.w_i.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.w_o.as_mut_slice(),
            self.b_f.as_mut_slice(),
            self.b_i.as_mut_slice(),
            self.b_c.as_mut_slice(),
            self.b_o.as_mut_slice(),
        ]
    }

    /// Gate weights stacked as `[W_f; W_i; W_c; W_o]` (4 n_h rows).
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n_h, cols) = self.w_f.shape();
        let mut w = DMatrix::<f64>::zeros(4 * n_h, cols);
        let mut b = DVector::<f64>::zeros(4 * n_h);
        for (g, (wg, bg)) in [
            (&self.w_f, &self.b_f),
            (&self.w_i, &self.b_i),
            (&self.w_c, &self.b_c),
            (&self.w_o, &self.b_o),
        ]
        .into_iter()
        .enumerate()
        {
            w.rows_mut(g * n_h, n_h).copy_from(wg);
            b.rows_mut(g * n_h, n_h).copy_from(bg);
        }
        (w, b)
    }

    fn add_stacked_grad(&mut self, dw: &DMatrix<f64>, db: &DVector<f64>) {
        let n_h = self.n_h();
        for (g, (wg, bg)) in [
            (&mut self.w_f, &mut self.b_f),
            (&mut self.w_i, &mut self.b_i),
            (&mut self.w_c, &mut self.b_c),
            (&mut self.w_o, &mut self.b_o),
        ]
        .into_iter()
        .enumerate()
        {
            *wg += dw.rows(g * n_h, n_h);
            *bg += db.rows(g * n_h, n_h);
        }
    }
}

/// Hidden and cell state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl CellState {
    pub fn zeros(n_h: usize) -> Self {
        CellState {
            h: DVector::zeros(n_h),
            c: DVector::zeros(n_h),
        }
    }
}

/// Gate activations of one cell step, exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    pub forget: DVector<f64>,
    pub input: DVector<f64>,
    pub candidate: DVector<f64>,
    pub output: DVector<f64>,
}

/// One recurrence step; also returns the gate activations.
pub fn cell_step(x: &DVector<f64>, prev: &CellState, params: &LstmLayerParams) -> Result<(CellState, GateActivations)> {
    let n_h = params.n_h();
    if x.len() != params.n_x() || prev.h.len() != n_h || prev.c.len() != n_h {
        return Err(Error::Dimension(format!(
            "cell expects x in R^{} and states in R^{n_h}, got {} / {} / {}",
            params.n_x(),
            x.len(),
            prev.h.len(),
            prev.c.len()
        )));
    }
    let mut z = DVector::zeros(n_h + x.len());
    z.rows_mut(0, n_h).copy_from(&prev.h);
    z.rows_mut(n_h, x.len()).copy_from(x);
    let forget = (&params.w_f * &z + &params.b_f).map(sigmoid);
    let input = (&params.w_i * &z + &params.b_i).map(sigmoid);
    let candidate = (&params.w_c * &z + &params.b_c).map(f64::tanh);
    let output = (&params.w_o * &z + &params.b_o).map(sigmoid);
    let c = forget.component_mul(&prev.c) + input.component_mul(&candidate);
    let h = output.component_mul(&c.map(f64::tanh));
    Ok((
        CellState { h, c },
        GateActivations {
            forget,
            input,
            candidate,
            output,
        },
    ))
}

/// `g_f = s(W_f[h,x]+b_f)`, `g_i = s(W_i[h,x]+b_i)`, `c^ = tanh(W_c[h,x]+b_c)`,
/// `g_o = s(W_o[h,x]+b_o)`, `c = g_f*c_prev + g_i*c^`, `h = g_o*tanh(c)`.
pub fn cell_forward(x: &DVector<f64>, prev: &CellState, params: &LstmLayerParams) -> Result<CellState> {
    cell_step(x, prev, params).map(|(state, _)| state)
}

/// Everything the backward pass needs from one layer's forward pass.
pub(crate) struct LayerTrace {
    /// `[h_{k-1}; x_k]` per step
    z: Vec<DMatrix<f64>>,
    /// stacked activated gates `[f; i; c^; o]` per step
    gates: Vec<DMatrix<f64>>,
    c_prev: Vec<DMatrix<f64>>,
    tanh_c: Vec<DMatrix<f64>>,
    /// layer outputs `h_k` per step (carried through masked steps)
    pub outputs: Vec<DMatrix<f64>>,
}

/// Runs one layer over a padded batch. Masked columns carry `(h, c)` through
/// unchanged, starting from zero states.
pub(crate) fn layer_forward(params: &LstmLayerParams, inputs: &[DMatrix<f64>], mask: &[Vec<bool>]) -> LayerTrace {
    let n_h = params.n_h();
    let b = inputs.first().map_or(0, |x| x.ncols());
    let (w, bias) = params.stacked();
    let steps = inputs.len();
    let mut trace = LayerTrace {
        z: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        c_prev: Vec::with_capacity(steps),
        tanh_c: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
    };
    let mut h = DMatrix::<f64>::zeros(n_h, b);
    let mut c = DMatrix::<f64>::zeros(n_h, b);
    for (x, valid) in inputs.iter().zip(mask) {
        let n_x = x.nrows();
        let mut z = DMatrix::<f64>::zeros(n_h + n_x, b);
        z.rows_mut(0, n_h).copy_from(&h);
        z.rows_mut(n_h, n_x).copy_from(x);
        let mut a = DMatrix::<f64>::zeros(4 * n_h, b);
        a.gemm(1.0, &w, &z, 0.0);
        for mut col in a.column_iter_mut() {
            col += &bias;
        }
        for j in 0..b {
            let mut col = a.column_mut(j);
            for r in 0..n_h {
                col[r] = sigmoid(col[r]);
                col[n_h + r] = sigmoid(col[n_h + r]);
                col[2 * n_h + r] = col[2 * n_h + r].tanh();
                col[3 * n_h + r] = sigmoid(col[3 * n_h + r]);
            }
        }
        let mut c_new = c.clone();
        let mut tanh_c = DMatrix::<f64>::zeros(n_h, b);
        let mut h_new = h.clone();
        for j in 0..b {
            if !valid[j] {
                tanh_c.set_column(j, &c.column(j).map(f64::tanh));
                continue;
            }
            for r in 0..n_h {
                let (f, i, g, o) = (a[(r, j)], a[(n_h + r, j)], a[(2 * n_h + r, j)], a[(3 * n_h + r, j)]);
                let cv = f * c[(r, j)] + i * g;
                let tc = cv.tanh();
                c_new[(r, j)] = cv;
                tanh_c[(r, j)] = tc;
                h_new[(r, j)] = o * tc;
            }
        }
        trace.z.push(z);
        trace.gates.push(a);
        trace.c_prev.push(std::mem::replace(&mut c, c_new));
        trace.tanh_c.push(tanh_c);
        h = h_new;
        trace.outputs.push(h.clone());
    }
    trace
}

/// Backpropagates `d_outputs[k]` (loss gradient w.r.t. `h_k` from above)
/// through the layer. Accumulates parameter gradients into `grads` and
/// returns the gradients w.r.t. the layer inputs.
pub(crate) fn layer_backward(
    params: &LstmLayerParams,
    trace: &LayerTrace,
    mask: &[Vec<bool>],
    d_outputs: &[Option<DMatrix<f64>>],
    grads: &mut LstmLayerParams,
    want_input_grads: bool,
) -> Vec<DMatrix<f64>> {
    let n_h = params.n_h();
    let n_x = params.n_x();
    let steps = trace.z.len();
    let b = trace.z.first().map_or(0, |z| z.ncols());
    let (w, _) = params.stacked();
    let mut dw = DMatrix::<f64>::zeros(4 * n_h, n_h + n_x);
    let mut db = DVector::<f64>::zeros(4 * n_h);
    let mut dh_next = DMatrix::<f64>::zeros(n_h, b);
    let mut dc_next = DMatrix::<f64>::zeros(n_h, b);
    let mut d_inputs = vec![DMatrix::<f64>::zeros(0, 0); if want_input_grads { steps } else { 0 }];
    let mut da = DMatrix::<f64>::zeros(4 * n_h, b);
    let mut dz = DMatrix::<f64>::zeros(n_h + n_x, b);

    for k in (0..steps).rev() {
        let mut dh = dh_next.clone();
        if let Some(ext) = &d_outputs[k] {
            dh += ext;
        }
        let gates = &trace.gates[k];
        let tanh_c = &trace.tanh_c[k];
        let c_prev = &trace.c_prev[k];
        let mut dh_prev = DMatrix::<f64>::zeros(n_h, b);
        let mut dc_prev = DMatrix::<f64>::zeros(n_h, b);
        da.fill(0.0);
        for j in 0..b {
            if !mask[k][j] {
                // carried state: gradient passes straight through
                dh_prev.set_column(j, &dh.column(j));
                dc_prev.set_column(j, &dc_next.column(j));
                continue;
            }
            for r in 0..n_h {
                let (f, i, g, o) = (
                    gates[(r, j)],
                    gates[(n_h + r, j)],
                    gates[(2 * n_h + r, j)],
                    gates[(3 * n_h + r, j)],
                );
                let tc = tanh_c[(r, j)];
                let dhv = dh[(r, j)];
                let dc = dc_next[(r, j)] + dhv * o * (1.0 - tc * tc);
                da[(r, j)] = dc * c_prev[(r, j)] * f * (1.0 - f);
                da[(n_h + r, j)] = dc * g * i * (1.0 - i);
                da[(2 * n_h + r, j)] = dc * i * (1.0 - g * g);
                da[(3 * n_h + r, j)] = dhv * tc * o * (1.0 - o);
                dc_prev[(r, j)] = dc * f;
            }
        }
        dw.gemm(1.0, &da, &trace.z[k].transpose(), 1.0);
        for col in da.column_iter() {
            db += col;
        }
        dz.gemm_tr(1.0, &w, &da, 0.0);
        for j in 0..b {
            if mask[k][j] {
                for r in 0..n_h {
                    dh_prev[(r, j)] = dz[(r, j)];
                }
            }
        }
        if want_input_grads {
            // masked columns have da = 0, hence zero input gradient
            d_inputs[k] = dz.rows(n_h, n_x).into_owned();
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    grads.add_stacked_grad(&dw, &db);
    d_inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_cell(weight: f64) -> LstmLayerParams {
        let mut p = LstmLayerParams::zeros(1, 1);
        for w in [&mut p.w_f, &mut p.w_i, &mut p.w_c, &mut p.w_o] {
            w.fill(weight);
        }
        p
    }

    #[test]
    fn zero_weights_zero_state() {
        let p = LstmLayerParams::zeros(3, 2);
        let x = DVector::from_vec(vec![1.0, -2.0, 5.0]);
        let (s, gates) = cell_step(&x, &CellState::zeros(2), &p).unwrap();
        assert!(gates.forget.iter().chain(gates.input.iter()).chain(gates.output.iter()).all(|&g| g == 0.5));
        assert!(gates.candidate.iter().all(|&g| g == 0.0));
        assert_eq!(s, CellState::zeros(2));
    }

    #[test]
    fn zero_weights_decay_cell_state() {
        let p = LstmLayerParams::zeros(1, 1);
        let c0 = 1.7;
        let prev = CellState {
            h: DVector::zeros(1),
            c: DVector::from_element(1, c0),
        };
        let s = cell_forward(&DVector::from_element(1, 0.3), &prev, &p).unwrap();
        assert_eq!(s.c[0], 0.5 * c0);
        assert_eq!(s.h[0], 0.5 * (0.5 * c0).tanh());
    }

    #[test]
    fn scalar_cell_hand_values() {
        // all pre-activations equal 1
        let s = cell_forward(&DVector::from_element(1, 1.0), &CellState::zeros(1), &scalar_cell(1.0)).unwrap();
        let g = 1.0 / (1.0 + (-1.0f64).exp());
        let c_hat = 1.0f64.tanh();
        assert!((g - 0.731059).abs() < 1e-6);
        assert!((c_hat - 0.761594).abs() < 1e-6);
        assert!((s.c[0] - 0.556770).abs() < 1e-6);
        assert!((s.h[0] - 0.369606).abs() < 1e-6);
        assert_eq!(s.c[0], g * c_hat);
        assert_eq!(s.h[0], g * (g * c_hat).tanh());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = LstmLayerParams::zeros(2, 3);
        assert!(matches!(
            cell_forward(&DVector::zeros(3), &CellState::zeros(3), &p),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            cell_forward(&DVector::zeros(2), &CellState::zeros(2), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batched_layer_matches_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LstmLayerParams::init(3, 5, &mut rng);
        let xs: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mask = vec![vec![true, true], vec![true, true], vec![true, false], vec![true, false]];
        let trace = layer_forward(&p, &xs, &mask);
        for (j, len) in [(0usize, 4usize), (1, 2)] {
            let mut s = CellState::zeros(5);
            for x in xs.iter().take(len) {
                s = cell_forward(&x.column(j).into_owned(), &s, &p).unwrap();
            }
            let out = trace.outputs[3].column(j);
            assert!((out - &s.h).amax() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn gates_and_states_stay_bounded(seed in 0u64..10_000, scale in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = LstmLayerParams::init(3, 4, &mut rng);
            for s in p.slices_mut() {
                for v in s.iter_mut() {
                    *v *= scale;
                }
            }
            let mut state = CellState::zeros(4);
            for _ in 0..6 {
                let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
                let (next, gates) = cell_step(&x, &state, &p).unwrap();
                for g in gates.forget.iter().chain(gates.input.iter()).chain(gates.output.iter()) {
                    prop_assert!(*g > 0.0 && *g < 1.0);
                }
                prop_assert!(next.h.iter().all(|h| h.abs() < 1.0));
                for (c, c0) in next.c.iter().zip(state.c.iter()) {
                    prop_assert!(c.abs() <= c0.abs() + 1.0);
                }
                state = next;
            }
        }
    }
}
