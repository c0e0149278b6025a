//! Synthetic black-box full-order model.
//!
//! A network of point masses connected by damped springs with a cubic
//! hardening term. The support moves with the prescribed acceleration
//! `mu(t)`, so the equations are written in the support frame:
//!
//! ```text
//! m x''_a = sum_{edges (a,b)} [ -(k + k3 |x_a - x_b|^2)(x_a - x_b) - c (v_a - v_b) ] - c_s v_a - m mu(t)
//! ```
//!
//! where the support itself is pinned at zero. Dimension `d` of every node is
//! driven by input channel `d mod ell`. States are node-major displacement
//! vectors; velocities are integrated internally but never exported.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{ParameterTrajectory, StateTrajectory, TimeGrid};

fn default_substeps() -> usize {
    20
}

/// How nodes are wired together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// support - 0 - 1 - ... - (n-1)
    Chain,
    /// Row-major grid with `columns` nodes per row; the first row hangs from
    /// the support and every node connects to its right and lower neighbour.
    Grid { columns: usize },
}

/// How the sampled input is held between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputHold {
    /// `mu(t) = mu(t_i)` on `[t_i, t_{i+1})`
    #[default]
    ZeroOrder,
    /// linear interpolation between `mu(t_i)` and `mu(t_{i+1})`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HifiModelConfig {
    pub n_node: usize,
    pub dims_per_node: usize,
    pub stiffness: f64,
    pub damping: f64,
    /// Dashpot from every node to the support (N s/m).
    #[serde(default)]
    pub support_damping: f64,
    pub nonlinearity_coeff: f64,
    pub mass: f64,
    pub topology: Topology,
    /// RK4 substeps per output sample interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub input_hold: InputHold,
}

impl Default for HifiModelConfig {
    fn default() -> Self {
        HifiModelConfig {
            n_node: 100,
            dims_per_node: 3,
            stiffness: 6.5e5,
            damping: 400.0,
            support_damping: 0.0,
            nonlinearity_coeff: 2.0e5,
            mass: 1.0,
            topology: Topology::Chain,
            substeps: default_substeps(),
            input_hold: InputHold::ZeroOrder,
        }
    }
}

impl HifiModelConfig {
    /// Full state dimension `N = n_node * dims_per_node`.
    pub fn state_dim(&self) -> usize {
        self.n_node * self.dims_per_node
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_node == 0 || self.dims_per_node == 0 {
            return Err(Error::Config("model needs at least one node and one dimension".into()));
        }
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        for (name, v) in [
            ("stiffness", self.stiffness),
            ("damping", self.damping),
            ("support_damping", self.support_damping),
            ("nonlinearity_coeff", self.nonlinearity_coeff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if let Topology::Grid { columns } = self.topology {
            if columns == 0 || self.n_node % columns != 0 {
                return Err(Error::Config(format!(
                    "grid with {columns} columns does not tile {} nodes",
                    self.n_node
                )));
            }
        }
        Ok(())
    }

    /// Spring list; `None` stands for the support.
    fn edges(&self) -> Vec<(usize, Option<usize>)> {
        match self.topology {
            Topology::Chain => (0..self.n_node)
                .map(|a| (a, a.checked_sub(1)))
                .collect(),
            Topology::Grid { columns } => {
                let mut edges = Vec::with_capacity(2 * self.n_node);
                for a in 0..self.n_node {
                    let (row, col) = (a / columns, a % columns);
                    if row == 0 {
                        edges.push((a, None));
                    } else {
                        edges.push((a, Some(a - columns)));
                    }
                    if col > 0 {
                        edges.push((a, Some(a - 1)));
                    }
                }
                edges
            }
        }
    }
}

/// Right-hand side evaluator with preallocated edge list.
struct Dynamics<'a> {
    cfg: &'a HifiModelConfig,
    edges: Vec<(usize, Option<usize>)>,
    dims: usize,
    n: usize,
}

impl Dynamics<'_> {
    /// `y = [x; v]`, writes `dy = [v; a]`.
    fn eval(&self, y: &[f64], base_accel: &[f64], dy: &mut [f64]) {
        let (n, dims) = (self.n, self.dims);
        let (x, v) = y.split_at(n);
        let (dx, dv) = dy.split_at_mut(n);
        dx.copy_from_slice(v);
        let inv_m = 1.0 / self.cfg.mass;
        let ell = base_accel.len();
        let c_s = self.cfg.support_damping * inv_m;
        for (i, a) in dv.iter_mut().enumerate() {
            *a = -base_accel[(i % dims) % ell] - c_s * v[i];
        }
        let (k, k3, c) = (self.cfg.stiffness, self.cfg.nonlinearity_coeff, self.cfg.damping);
        let mut delta = [0.0f64; 8];
        let mut ddelta = [0.0f64; 8];
        let mut delta_vec = vec![0.0; if dims > 8 { dims } else { 0 }];
        let mut ddelta_vec = vec![0.0; delta_vec.len()];
        for &(a, b) in &self.edges {
            let (dl, dd): (&mut [f64], &mut [f64]) = if dims <= 8 {
                (&mut delta[..dims], &mut ddelta[..dims])
            } else {
                (&mut delta_vec[..], &mut ddelta_vec[..])
            };
            let oa = a * dims;
            let mut norm2 = 0.0;
            for d in 0..dims {
                let (xb, vb) = match b {
                    Some(b) => (x[b * dims + d], v[b * dims + d]),
                    None => (0.0, 0.0),
                };
                dl[d] = x[oa + d] - xb;
                dd[d] = v[oa + d] - vb;
                norm2 += dl[d] * dl[d];
            }
            let k_eff = k + k3 * norm2;
            for d in 0..dims {
                let f = (-k_eff * dl[d] - c * dd[d]) * inv_m;
                dv[oa + d] += f;
                if let Some(b) = b {
                    dv[b * dims + d] -= f;
                }
            }
        }
    }
}

/// Phase-space output of [`simulate_phase`]: displacements and velocities on
/// the grid.
#[derive(Debug, Clone)]
pub struct PhaseTrajectory {
    pub displacements: StateTrajectory,
    pub velocities: DMatrix<f64>,
}

/// Evaluates the flow map `z(t) = F(t, mu, z1)` on `grid`, starting from
/// displacements `z1` at rest.
pub fn simulate(
    config: &HifiModelConfig,
    mu: &ParameterTrajectory,
    z1: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<StateTrajectory> {
    Ok(simulate_phase(config, mu, z1, None, grid)?.displacements)
}

/// Like [`simulate`] but with an optional initial velocity and the velocity
/// history returned as well.
pub fn simulate_phase(
    config: &HifiModelConfig,
    mu: &ParameterTrajectory,
    z1: &DVector<f64>,
    v1: Option<&DVector<f64>>,
    grid: &TimeGrid,
) -> Result<PhaseTrajectory> {
    config.validate()?;
    grid.validate()?;
    let n = config.state_dim();
    if z1.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, model has N = {n}", z1.len())));
    }
    if let Some(v1) = v1 {
        if v1.len() != n {
            return Err(Error::Dimension(format!("initial velocity has length {}, model has N = {n}", v1.len())));
        }
    }
    if mu.grid != *grid {
        return Err(Error::Dimension("parameter trajectory is not defined on the requested grid".into()));
    }
    if z1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("initial state must be finite".into()));
    }

    let dyn_ = Dynamics {
        cfg: config,
        edges: config.edges(),
        dims: config.dims_per_node,
        n,
    };
    let ell = mu.channels();
    let h = grid.dt / config.substeps as f64;

    let mut y = vec![0.0; 2 * n];
    y[..n].copy_from_slice(z1.as_slice());
    if let Some(v1) = v1 {
        y[n..].copy_from_slice(v1.as_slice());
    }
    let mut k1 = vec![0.0; 2 * n];
    let mut k2 = vec![0.0; 2 * n];
    let mut k3 = vec![0.0; 2 * n];
    let mut k4 = vec![0.0; 2 * n];
    let mut tmp = vec![0.0; 2 * n];
    let mut acc = [vec![0.0; ell], vec![0.0; ell], vec![0.0; ell]];

    let mut disp = DMatrix::zeros(n, grid.eta);
    let mut vel = DMatrix::zeros(n, grid.eta);
    disp.column_mut(0).copy_from_slice(&y[..n]);
    vel.column_mut(0).copy_from_slice(&y[n..]);

    for step in 1..grid.eta {
        let a0 = mu.values.column(step - 1);
        let a1 = mu.values.column(step);
        for sub in 0..config.substeps {
            for (slot, frac) in [(0usize, 0.0), (1, 0.5), (2, 1.0)] {
                let s = match config.input_hold {
                    InputHold::ZeroOrder => 0.0,
                    InputHold::Linear => (sub as f64 + frac) / config.substeps as f64,
                };
                for ch in 0..ell {
                    acc[slot][ch] = (1.0 - s) * a0[ch] + s * a1[ch];
                }
            }
            dyn_.eval(&y, &acc[0], &mut k1);
            for i in 0..2 * n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            dyn_.eval(&tmp, &acc[1], &mut k2);
            for i in 0..2 * n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            dyn_.eval(&tmp, &acc[1], &mut k3);
            for i in 0..2 * n {
                tmp[i] = y[i] + h * k3[i];
            }
            dyn_.eval(&tmp, &acc[2], &mut k4);
            for i in 0..2 * n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDivergence {
                step,
                time: grid.time(step),
            });
        }
        disp.column_mut(step).copy_from_slice(&y[..n]);
        vel.column_mut(step).copy_from_slice(&y[n..]);
    }

    Ok(PhaseTrajectory {
        displacements: StateTrajectory::new(*grid, disp)?,
        velocities: vel,
    })
}

/// Random smooth excitation family: a sum of low-frequency sinusoids plus a
/// ramp-and-hold pulse per channel, with trajectory lengths drawn from
/// `eta_min..=eta_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub channels: usize,
    /// Bound on `|mu|` per channel (m/s^2).
    pub amplitude: f64,
    pub n_sines: usize,
    pub freq_min: f64,
    pub freq_max: f64,
    /// Ramp duration range of the pulse component (s).
    pub ramp_min: f64,
    pub ramp_max: f64,
    pub dt: f64,
    pub t_start: f64,
    pub eta_min: usize,
    pub eta_max: usize,
}

impl Default for ExcitationSpec {
    fn default() -> Self {
        ExcitationSpec {
            channels: 3,
            amplitude: 10.0,
            n_sines: 3,
            freq_min: 0.2,
            freq_max: 1.5,
            ramp_min: 0.1,
            ramp_max: 0.6,
            dt: 0.025,
            t_start: 0.0,
            eta_min: 74,
            eta_max: 164,
        }
    }
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 {
            return bad("excitation needs at least one channel".into());
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return bad(format!("amplitude must be finite and >= 0, got {}", self.amplitude));
        }
        if !(self.freq_min > 0.0) || !(self.freq_max >= self.freq_min) || !self.freq_max.is_finite() {
            return bad(format!("bad frequency band [{}, {}]", self.freq_min, self.freq_max));
        }
        if !(self.ramp_min > 0.0) || !(self.ramp_max >= self.ramp_min) || !self.ramp_max.is_finite() {
            return bad(format!("bad ramp range [{}, {}]", self.ramp_min, self.ramp_max));
        }
        if self.eta_min < 2 || self.eta_max < self.eta_min {
            return bad(format!("bad length range [{}, {}]", self.eta_min, self.eta_max));
        }
        TimeGrid::new(self.t_start, self.dt, self.eta_min).map(|_| ())
    }
}

/// `3 s^2 - 2 s^3` on `[0, 1]`, clamped outside.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Creates the parameter set `M_kappa`, reproducible per `seed`.
pub fn generate_parameter_set(count: usize, seed: u64, spec: &ExcitationSpec) -> Result<Vec<ParameterTrajectory>> {
    if count == 0 {
        return Err(Error::Config("parameter set needs at least one trajectory".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let eta = rng.random_range(spec.eta_min..=spec.eta_max);
        let grid = TimeGrid::new(spec.t_start, spec.dt, eta)?;
        let span = grid.span();
        let mut values = DMatrix::zeros(spec.channels, eta);
        for ch in 0..spec.channels {
            // convex weights keep |mu| <= amplitude
            let mut weights: Vec<f64> = (0..=spec.n_sines).map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            for w in &mut weights {
                *w *= spec.amplitude / total;
            }
            let sines: Vec<(f64, f64, f64)> = weights[..spec.n_sines]
                .iter()
                .map(|&w| {
                    let f = rng.random_range(spec.freq_min..=spec.freq_max);
                    let phase = rng.random_range(0.0..tau);
                    (w, f, phase)
                })
                .collect();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let level = sign * weights[spec.n_sines];
            let onset = rng.random_range(0.0..=0.5 * span);
            let ramp = rng.random_range(spec.ramp_min..=spec.ramp_max);
            for (i, t) in grid.points().enumerate() {
                let rel = t - spec.t_start;
                let mut v: f64 = sines.iter().map(|&(w, f, p)| w * (tau * f * rel + p).sin()).sum();
                v += level * smoothstep((rel - onset) / ramp);
                values[(ch, i)] = v;
            }
        }
        out.push(ParameterTrajectory::new(grid, values)?);
    }
    Ok(out)
}
