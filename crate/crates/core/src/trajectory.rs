//! Time grids and the state/parameter trajectories that flow through the
//! pipeline, plus the binary trajectory file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, Reader, Writer};
use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"PLTRAJ\0\0";

/// Uniform grid `t_i = t_start + i * dt`, `i = 0..eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    pub eta: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, eta: usize) -> Result<Self> {
        let grid = TimeGrid { t_start, dt, eta };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !self.t_start.is_finite() {
            return Err(Error::Config("grid start must be finite".into()));
        }
        if self.eta < 1 {
            return Err(Error::Config("grid needs at least one point".into()));
        }
        Ok(())
    }

    /// Time of the zero-based sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.eta - 1)
    }

    /// Simulated physical duration `t_eta - t_1`.
    pub fn span(&self) -> f64 {
        self.t_end() - self.t_start
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.eta).map(move |i| self.time(i))
    }
}

/// Input trajectory `mu(t)`: one column of `ell` channels per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTrajectory {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
}

impl ParameterTrajectory {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.eta {
            return Err(Error::Dimension(format!(
                "parameter trajectory has {} columns for a grid of {} points",
                values.ncols(),
                grid.eta
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Dimension("parameter trajectory needs >= 1 channel".into()));
        }
        Ok(ParameterTrajectory { grid, values })
    }

    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        ParameterTrajectory {
            grid,
            values: DMatrix::zeros(channels, grid.eta),
        }
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        ParameterTrajectory {
            grid: self.grid,
            values: &self.values * alpha,
        }
    }
}

/// Full-order displacement trajectory `z(t)`, one `N`-column per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub states: DMatrix<f64>,
}

impl StateTrajectory {
    pub fn new(grid: TimeGrid, states: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != grid.eta {
            return Err(Error::Dimension(format!(
                "state trajectory has {} columns for a grid of {} points",
                states.ncols(),
                grid.eta
            )));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("state trajectory contains non-finite entries".into()));
        }
        Ok(StateTrajectory { grid, states })
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn state(&self, i: usize) -> DVector<f64> {
        self.states.column(i).into_owned()
    }
}

/// A simulated (or predicted) run: states together with the inputs that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: StateTrajectory,
    pub params: ParameterTrajectory,
}

impl Simulation {
    pub fn new(states: StateTrajectory, params: ParameterTrajectory) -> Result<Self> {
        if states.grid != params.grid {
            return Err(Error::Dimension("state and parameter grids differ".into()));
        }
        Ok(Simulation { states, params })
    }

    /// Header: magic, version, N, eta, ell (u64), dt, t_start (f64); then the
    /// N x eta state matrix row-major, then the ell x eta parameter matrix row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let grid = self.states.grid;
        let mut w = Writer::new(TRAJECTORY_MAGIC);
        w.usize(self.states.dim());
        w.usize(grid.eta);
        w.usize(self.params.channels());
        w.f64(grid.dt);
        w.f64(grid.t_start);
        w.matrix(&self.states.states);
        w.matrix(&self.params.values);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, TRAJECTORY_MAGIC, path)?;
        let n = r.usize()?;
        let eta = r.usize()?;
        let ell = r.usize()?;
        let dt = r.f64()?;
        let t_start = r.f64()?;
        let grid = TimeGrid::new(t_start, dt, eta)
            .map_err(|e| Error::format(path, format!("bad grid: {e}")))?;
        let states = r.matrix(n, eta)?;
        let values = r.matrix(ell, eta)?;
        r.finish()?;
        let states = StateTrajectory::new(grid, states).map_err(|e| Error::format(path, e.to_string()))?;
        let params = ParameterTrajectory::new(grid, values).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Simulation { states, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_uniform() {
        let g = TimeGrid::new(0.5, 0.025, 5).unwrap();
        let pts: Vec<f64> = g.points().collect();
        assert_eq!(pts.len(), 5);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
        assert!((g.span() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_step() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, -1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, f64::NAN, 3).is_err());
    }

    #[test]
    fn trajectory_file_round_trip() {
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        let states = StateTrajectory::new(grid, DMatrix::from_fn(4, 3, |i, j| (i * 10 + j) as f64)).unwrap();
        let params = ParameterTrajectory::new(grid, DMatrix::from_fn(2, 3, |i, j| -(i as f64) + j as f64 * 0.5)).unwrap();
        let sim = Simulation::new(states, params).unwrap();
        let bytes = sim.to_bytes();
        assert_eq!(bytes.len(), 8 * (2 + 5) + 8 * (12 + 6));
        // row-major: first row of the state matrix follows the header
        let first = f64::from_le_bytes(bytes[56..64].try_into().unwrap());
        let second = f64::from_le_bytes(bytes[64..72].try_into().unwrap());
        assert_eq!((first, second), (0.0, 1.0));
        let back = Simulation::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, sim);
    }

    #[test]
    fn trajectory_file_rejects_bad_magic_and_truncation() {
        let grid = TimeGrid::new(0.0, 0.1, 2).unwrap();
        let sim = Simulation::new(
            StateTrajectory::new(grid, DMatrix::zeros(2, 2)).unwrap(),
            ParameterTrajectory::zeros(grid, 1),
        )
        .unwrap();
        let mut bytes = sim.to_bytes();
        let truncated = &bytes[..bytes.len() - 8];
        assert!(matches!(
            Simulation::from_bytes(truncated, Path::new("t")),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Simulation::from_bytes(&bytes, Path::new("t")),
            Err(Error::Format { .. })
        ));
    }
}
