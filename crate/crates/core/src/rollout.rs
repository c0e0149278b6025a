//! Online phase: autoregressive reduced-state prediction under a prescribed
//! parameter trajectory and lifting back to full space.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::dataset::window_columns;
use crate::error::{Error, Result};
use crate::lstm::LstmModel;
use crate::metrics::{csv_error, RealtimeStats, ScoreTriplet};
use crate::reduction::ReducedBasis;
use crate::trajectory::{ParameterTrajectory, StateTrajectory, TimeGrid};

pub const BASIS_FILE: &str = "basis.bin";
pub const MODEL_FILE: &str = "model.bin";

/// Anything that maps a window of `[zbar; mu]` columns to the next
/// reduced-state difference.
pub trait DifferencePredictor {
    /// Maximum window length `n_w`.
    fn window_len(&self) -> usize;
    /// Reduced dimension `r`.
    fn reduced_dim(&self) -> usize;
    /// Number of parameter channels `ell`.
    fn channels(&self) -> usize;
    /// Difference `zbar_{t+1} - zbar_t` from the window ending at zero-based
    /// step `step`.
    fn predict(&self, step: usize, window: &DMatrix<f64>) -> Result<DVector<f64>>;
}

impl DifferencePredictor for LstmModel {
    fn window_len(&self) -> usize {
        self.n_w
    }

    fn reduced_dim(&self) -> usize {
        self.output_dim()
    }

    fn channels(&self) -> usize {
        self.input_dim() - self.output_dim()
    }

    fn predict(&self, _step: usize, window: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.forward(window)
    }
}

/// Always predicts a zero difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroPredictor {
    pub r: usize,
    pub ell: usize,
    pub n_w: usize,
}

impl DifferencePredictor for ZeroPredictor {
    fn window_len(&self) -> usize {
        self.n_w
    }

    fn reduced_dim(&self) -> usize {
        self.r
    }

    fn channels(&self) -> usize {
        self.ell
    }

    fn predict(&self, _step: usize, _window: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.r))
    }
}

/// Replays stored differences (`r x (eta - 1)`), e.g. the true ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPredictor {
    pub differences: DMatrix<f64>,
    pub ell: usize,
    pub n_w: usize,
}

impl ReplayPredictor {
    /// Differences of consecutive columns of a reduced trajectory.
    pub fn from_reduced(reduced: &DMatrix<f64>, ell: usize, n_w: usize) -> Self {
        let n = reduced.ncols().saturating_sub(1);
        let differences = DMatrix::from_fn(reduced.nrows(), n, |i, j| reduced[(i, j + 1)] - reduced[(i, j)]);
        ReplayPredictor { differences, ell, n_w }
    }
}

impl DifferencePredictor for ReplayPredictor {
    fn window_len(&self) -> usize {
        self.n_w
    }

    fn reduced_dim(&self) -> usize {
        self.differences.nrows()
    }

    fn channels(&self) -> usize {
        self.ell
    }

    fn predict(&self, step: usize, _window: &DMatrix<f64>) -> Result<DVector<f64>> {
        if step >= self.differences.ncols() {
            return Err(Error::Argument(format!("no stored difference for step {step}")));
        }
        Ok(self.differences.column(step).into_owned())
    }
}

/// POD basis plus trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateBundle {
    pub basis: ReducedBasis,
    pub model: LstmModel,
}

impl SurrogateBundle {
    pub fn new(basis: ReducedBasis, model: LstmModel) -> Result<Self> {
        if basis.rank() != model.output_dim() {
            return Err(Error::Dimension(format!(
                "basis has rank {}, model predicts {} coefficients",
                basis.rank(),
                model.output_dim()
            )));
        }
        Ok(SurrogateBundle { basis, model })
    }

    /// Writes `basis.bin` and `model.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.basis.save(&dir.join(BASIS_FILE))?;
        self.model.save(&dir.join(MODEL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let basis = ReducedBasis::load(&dir.join(BASIS_FILE))?;
        let model = LstmModel::load(&dir.join(MODEL_FILE))?;
        SurrogateBundle::new(basis, model)
    }
}

/// Rolls a predictor out from the reduced initial state; returns `r x eta`.
///
/// The window at zero-based step `t` holds the columns
/// `max(0, t + 1 - n_w)..=t`, i.e. `min(t + 1, n_w)` columns including the
/// current parameter value.
pub fn rollout_with<P: DifferencePredictor + ?Sized>(
    predictor: &P,
    zbar1: &DVector<f64>,
    mu: &ParameterTrajectory,
) -> Result<DMatrix<f64>> {
    let r = predictor.reduced_dim();
    if zbar1.len() != r {
        return Err(Error::Dimension(format!("initial reduced state has {} entries, expected {r}", zbar1.len())));
    }
    if mu.channels() != predictor.channels() {
        return Err(Error::Dimension(format!(
            "parameter trajectory has {} channels, predictor expects {}",
            mu.channels(),
            predictor.channels()
        )));
    }
    if !zbar1.iter().all(|v| v.is_finite()) {
        return Err(Error::RolloutDivergence { step: 0 });
    }
    let eta = mu.grid.eta;
    let n_w = predictor.window_len();
    let mut z = DMatrix::zeros(r, eta);
    z.set_column(0, zbar1);
    for t in 0..eta - 1 {
        let from = (t + 1).saturating_sub(n_w);
        let window = window_columns(&z, &mu.values, from, t);
        let delta = predictor.predict(t, &window)?;
        if delta.len() != r {
            return Err(Error::Dimension(format!("predictor returned {} entries, expected {r}", delta.len())));
        }
        let next = z.column(t) + delta;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::RolloutDivergence { step: t });
        }
        z.set_column(t + 1, &next);
    }
    Ok(z)
}

/// Reduced trajectory predicted from the full initial state `z1`.
pub fn rollout_reduced(bundle: &SurrogateBundle, z1: &DVector<f64>, mu: &ParameterTrajectory) -> Result<DMatrix<f64>> {
    rollout_with(&bundle.model, &bundle.basis.reduce(z1)?, mu)
}

/// Full-space trajectory `V zbar(t)`.
pub fn rollout_full(bundle: &SurrogateBundle, z1: &DVector<f64>, mu: &ParameterTrajectory) -> Result<StateTrajectory> {
    lift(&bundle.basis, &rollout_reduced(bundle, z1, mu)?, mu.grid)
}

/// Lifts a reduced trajectory to full space.
pub fn lift(basis: &ReducedBasis, reduced: &DMatrix<f64>, grid: TimeGrid) -> Result<StateTrajectory> {
    StateTrajectory::new(grid, basis.reconstruct_all(reduced)?)
}

/// Times `run` `repetitions` times and divides each wall-clock duration by
/// the simulated span.
pub fn time_realtime_ratio<F>(span: f64, repetitions: usize, mut run: F) -> Result<RealtimeStats>
where
    F: FnMut() -> Result<()>,
{
    if !(span > 0.0) {
        return Err(Error::Argument("real-time ratio needs a grid with at least two points".into()));
    }
    if repetitions == 0 {
        return Err(Error::Argument("repetitions must be >= 1".into()));
    }
    let mut ratios = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run()?;
        ratios.push(start.elapsed().as_secs_f64() / span);
    }
    RealtimeStats::from_ratios(ratios)
}

/// Real-time ratio of [`rollout_full`] alone.
pub fn measure_realtime_ratio(
    bundle: &SurrogateBundle,
    z1: &DVector<f64>,
    mu: &ParameterTrajectory,
    repetitions: usize,
) -> Result<RealtimeStats> {
    time_realtime_ratio(mu.grid.span(), repetitions, || {
        std::hint::black_box(rollout_full(bundle, z1, mu)?);
        Ok(())
    })
}

/// Per-step table `t, zbar_1..zbar_r` and, when given, the three scores.
pub fn write_rollout_csv(path: &Path, grid: &TimeGrid, reduced: &DMatrix<f64>, scores: Option<&ScoreTriplet>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=reduced.nrows()).map(|k| format!("zbar_{k}")));
    if scores.is_some() {
        header.extend(["s_rec", "s_regr", "s_approx"].map(String::from));
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let cell = |v: Option<f64>| v.map(|s| format!("{s:e}")).unwrap_or_default();
    for (i, col) in reduced.column_iter().enumerate() {
        let mut rec = vec![format!("{:e}", grid.time(i))];
        rec.extend(col.iter().map(|v| format!("{v:e}")));
        if let Some(s) = scores {
            rec.extend([cell(s.rec.values[i]), cell(s.regr.values[i]), cell(s.approx.values[i])]);
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
