//! Error quantities for surrogate evaluation: time-resolved relative scores,
//! their means, Euclidean node distances and real-time ratio statistics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::reduction::ReducedBasis;
use crate::trajectory::{StateTrajectory, TimeGrid};

/// Per-step relative scores. `None` marks a step whose reference norm is zero
/// while the approximation is not; such steps are excluded from means.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub grid: TimeGrid,
    pub values: Vec<Option<f64>>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flagged(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// `s(t) = 1 - |ref(t) - approx(t)| / |ref(t)|` per column.
pub fn relative_score(grid: &TimeGrid, reference: &DMatrix<f64>, approx: &DMatrix<f64>) -> Result<ScoreSeries> {
    if reference.shape() != approx.shape() {
        return Err(Error::Dimension(format!(
            "reference is {:?}, approximation is {:?}",
            reference.shape(),
            approx.shape()
        )));
    }
    if reference.ncols() != grid.eta {
        return Err(Error::Dimension(format!(
            "{} columns on a grid of {} points",
            reference.ncols(),
            grid.eta
        )));
    }
    let values = reference
        .column_iter()
        .zip(approx.column_iter())
        .map(|(z, a)| {
            let denom = z.norm();
            let diff = (z - a).norm();
            if denom > 0.0 {
                Some(1.0 - diff / denom)
            } else if diff == 0.0 {
                Some(1.0)
            } else {
                None
            }
        })
        .collect();
    Ok(ScoreSeries { grid: *grid, values })
}

/// Half-open time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    /// The first `seconds` of the grid.
    pub fn leading(grid: &TimeGrid, seconds: f64) -> Self {
        TimeWindow {
            start: grid.t_start,
            end: grid.t_start + seconds,
        }
    }

    fn contains(&self, t: f64, tol: f64) -> bool {
        t >= self.start - tol && t < self.end - tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanScore {
    pub value: f64,
    pub included: usize,
    /// flagged steps inside the window
    pub excluded: usize,
}

/// Arithmetic mean over the unflagged steps inside `window` (whole series
/// when `None`).
pub fn mean_score(series: &ScoreSeries, window: Option<TimeWindow>) -> Result<MeanScore> {
    let tol = 1e-9 * series.grid.dt;
    let mut sum = 0.0;
    let (mut included, mut excluded) = (0, 0);
    for (i, v) in series.values.iter().enumerate() {
        if let Some(w) = window {
            if !w.contains(series.grid.time(i), tol) {
                continue;
            }
        }
        match v {
            Some(s) => {
                sum += s;
                included += 1;
            }
            None => excluded += 1,
        }
    }
    if included == 0 {
        return Err(Error::Argument("score window contains no usable step".into()));
    }
    Ok(MeanScore {
        value: sum / included as f64,
        included,
        excluded,
    })
}

/// Reconstruction, regression and approximation scores of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTriplet {
    /// `z` vs `V V^T z`
    pub rec: ScoreSeries,
    /// `V^T z` vs the predicted reduced trajectory
    pub regr: ScoreSeries,
    /// `z` vs `V` times the predicted reduced trajectory
    pub approx: ScoreSeries,
}

/// Scores a predicted reduced trajectory (`r x eta`) against the reference.
pub fn score_triplet(reference: &StateTrajectory, basis: &ReducedBasis, predicted: &DMatrix<f64>) -> Result<ScoreTriplet> {
    let grid = &reference.grid;
    let z = &reference.states;
    let zbar = basis.reduce_all(z)?;
    let rec = relative_score(grid, z, &basis.reconstruct_all(&zbar)?)?;
    let regr = relative_score(grid, &zbar, predicted)?;
    let approx = relative_score(grid, z, &basis.reconstruct_all(predicted)?)?;
    Ok(ScoreTriplet { rec, regr, approx })
}

/// Splits a node-major state into `n_node x dims` coordinates.
pub fn devectorize(state: &[f64], dims: usize) -> Result<DMatrix<f64>> {
    if dims == 0 || state.len() % dims != 0 {
        return Err(Error::Dimension(format!(
            "state of length {} is not a whole number of {dims}-dimensional nodes",
            state.len()
        )));
    }
    Ok(DMatrix::from_row_slice(state.len() / dims, dims, state))
}

/// Inverse of [`devectorize`].
pub fn vectorize(nodes: &DMatrix<f64>) -> Vec<f64> {
    nodes.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistances {
    /// `n_node x eta` Euclidean distances
    pub values: DMatrix<f64>,
    pub max: f64,
}

pub fn node_distance(reference: &DMatrix<f64>, approx: &DMatrix<f64>, dims: usize) -> Result<NodeDistances> {
    if reference.shape() != approx.shape() {
        return Err(Error::Dimension(format!(
            "reference is {:?}, approximation is {:?}",
            reference.shape(),
            approx.shape()
        )));
    }
    if dims == 0 || reference.nrows() % dims != 0 {
        return Err(Error::Dimension(format!(
            "state dimension {} is not divisible by {dims}",
            reference.nrows()
        )));
    }
    let n_node = reference.nrows() / dims;
    let values = DMatrix::from_fn(n_node, reference.ncols(), |a, t| {
        (0..dims)
            .map(|d| {
                let e = reference[(a * dims + d, t)] - approx[(a * dims + d, t)];
                e * e
            })
            .sum::<f64>()
            .sqrt()
    });
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(NodeDistances { values, max })
}

/// Real-time ratios `t_cpu / (t_eta - t_1)` of repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RealtimeStats {
    pub ratios: Vec<f64>,
    pub min: f64,
    pub median: f64,
}

impl RealtimeStats {
    pub fn from_ratios(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Argument("no timing repetitions".into()));
        }
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(RealtimeStats {
            min: sorted[0],
            median,
            ratios,
        })
    }
}

/// One column of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub sim_id: usize,
    pub s_regr: f64,
    pub s_approx: f64,
    /// approximation score over the first second
    pub s_approx_first: f64,
    pub s_rec: f64,
    pub e_dist_max: f64,
    pub realtime_ratio: f64,
    /// steps left out of the means because of a zero reference
    pub flagged_steps: usize,
}

impl SimulationReport {
    pub const ROW_LABELS: [&'static str; 6] = ["s_regr", "s_appr", "s_appr_1", "s_rec", "e_dist_max", "dt_r"];

    pub fn quantities(&self) -> [f64; 6] {
        [
            self.s_regr,
            self.s_approx,
            self.s_approx_first,
            self.s_rec,
            self.e_dist_max,
            self.realtime_ratio,
        ]
    }

    /// Summarizes scores, node distances and timing of one test trajectory.
    pub fn from_parts(
        sim_id: usize,
        scores: &ScoreTriplet,
        distances: &NodeDistances,
        realtime_ratio: f64,
        first_seconds: f64,
    ) -> Result<Self> {
        let leading = TimeWindow::leading(&scores.approx.grid, first_seconds);
        let regr = mean_score(&scores.regr, None)?;
        let approx = mean_score(&scores.approx, None)?;
        let rec = mean_score(&scores.rec, None)?;
        let report = SimulationReport {
            sim_id,
            s_regr: regr.value,
            s_approx: approx.value,
            s_approx_first: mean_score(&scores.approx, Some(leading))?.value,
            s_rec: rec.value,
            e_dist_max: distances.max,
            realtime_ratio,
            flagged_steps: regr.excluded + approx.excluded + rec.excluded,
        };
        if report.quantities().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite report entry for simulation {sim_id}")));
        }
        Ok(report)
    }
}

fn column_means(reports: &[SimulationReport]) -> [f64; 6] {
    let mut mean = [0.0; 6];
    for r in reports {
        for (m, q) in mean.iter_mut().zip(r.quantities()) {
            *m += q / reports.len() as f64;
        }
    }
    mean
}

/// Quantities as rows, one column per simulation plus the mean.
pub fn write_report_csv(path: &Path, reports: &[SimulationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["quantity".to_string()];
    header.extend(reports.iter().map(|r| format!("sim_{}", r.sim_id)));
    header.push("mean".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mean = column_means(reports);
    for (row, label) in SimulationReport::ROW_LABELS.iter().enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(reports.iter().map(|r| format!("{:e}", r.quantities()[row])));
        rec.push(format!("{:e}", mean[row]));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width text rendering of the evaluation table.
pub fn format_report_table(reports: &[SimulationReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "");
    for r in reports {
        let _ = write!(out, "{:>12}", format!("sim {}", r.sim_id));
    }
    let _ = writeln!(out, "{:>12}", "mean");
    let mean = column_means(reports);
    for (row, label) in SimulationReport::ROW_LABELS.iter().enumerate() {
        let _ = write!(out, "{label:<12}");
        for r in reports {
            let _ = write!(out, "{:>12.4e}", r.quantities()[row]);
        }
        let _ = writeln!(out, "{:>12.4e}", mean[row]);
    }
    out
}

/// Per-step table `t, s_rec, s_regr, s_approx`; flagged steps are left empty.
pub fn write_score_csv(path: &Path, scores: &ScoreTriplet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["t", "s_rec", "s_regr", "s_approx"])
        .map_err(|e| csv_error(path, e))?;
    let cell = |v: Option<f64>| v.map(|s| format!("{s:e}")).unwrap_or_default();
    for i in 0..scores.regr.len() {
        w.write_record([
            format!("{:e}", scores.regr.grid.time(i)),
            cell(scores.rec.values[i]),
            cell(scores.regr.values[i]),
            cell(scores.approx.values[i]),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}
