//! Snapshot assembly and proper orthogonal decomposition.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::trajectory::StateTrajectory;

pub const BASIS_MAGIC: &[u8; 8] = b"PLBASIS\0";

/// Snapshots of several simulations side by side, simulation-major and
/// time-ordered within each simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    /// `(simulation index, time index)` of every column.
    pub column_index: Vec<(usize, usize)>,
}

pub fn assemble_snapshots<'a, I>(trajectories: I) -> Result<SnapshotMatrix>
where
    I: IntoIterator<Item = &'a StateTrajectory>,
{
    let trajectories: Vec<&StateTrajectory> = trajectories.into_iter().collect();
    let first = trajectories
        .first()
        .ok_or_else(|| Error::Argument("no trajectories to assemble".into()))?;
    let n = first.dim();
    if let Some((j, t)) = trajectories.iter().enumerate().find(|(_, t)| t.dim() != n) {
        return Err(Error::Dimension(format!(
            "trajectory {j} has N = {}, expected {n}",
            t.dim()
        )));
    }
    let total: usize = trajectories.iter().map(|t| t.len()).sum();
    let mut data = DMatrix::zeros(n, total);
    let mut column_index = Vec::with_capacity(total);
    let mut col = 0;
    for (sim, traj) in trajectories.iter().enumerate() {
        data.columns_mut(col, traj.len()).copy_from(&traj.states);
        column_index.extend((0..traj.len()).map(|t| (sim, t)));
        col += traj.len();
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("snapshot matrix contains non-finite entries".into()));
    }
    Ok(SnapshotMatrix { data, column_index })
}

/// Which factorization backs [`compute_pod`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodMethod {
    /// Gram route when one side is at least 4x smaller, thin SVD otherwise.
    #[default]
    Auto,
    Svd,
    Gram,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PodOptions {
    #[serde(default)]
    pub method: PodMethod,
    /// Subtract the snapshot mean before factorizing. The basis maps stay
    /// plain `V^T z` / `V zbar` either way.
    #[serde(default)]
    pub center: bool,
}

/// Orthonormal reduced basis `V` (N x r) with the full singular spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl ReducedBasis {
    /// Wraps an existing orthonormal basis. Columns are checked for
    /// orthonormality to 1e-8.
    pub fn from_parts(v: DMatrix<f64>, singular_values: Vec<f64>) -> Result<Self> {
        let r = v.ncols();
        if r == 0 || r > v.nrows() {
            return Err(Error::Argument(format!("basis must have 1..=N columns, got {r}")));
        }
        if singular_values.len() < r {
            return Err(Error::Argument("fewer singular values than basis columns".into()));
        }
        let gram_err = (v.transpose() * &v - DMatrix::<f64>::identity(r, r)).norm();
        if !(gram_err <= 1e-8) {
            return Err(Error::Numerical(format!("basis columns not orthonormal (error {gram_err:.3e})")));
        }
        Ok(ReducedBasis { v, singular_values })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn full_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    /// `zbar = V^T z`
    pub fn reduce(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.full_dim() {
            return Err(Error::Dimension(format!(
                "state has length {}, basis expects {}",
                z.len(),
                self.full_dim()
            )));
        }
        Ok(self.v.tr_mul(z))
    }

    /// `z~ = V zbar`
    pub fn reconstruct(&self, zbar: &DVector<f64>) -> Result<DVector<f64>> {
        if zbar.len() != self.rank() {
            return Err(Error::Dimension(format!(
                "reduced state has length {}, basis has r = {}",
                zbar.len(),
                self.rank()
            )));
        }
        Ok(&self.v * zbar)
    }

    /// Column-wise [`Self::reduce`].
    pub fn reduce_all(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.nrows() != self.full_dim() {
            return Err(Error::Dimension(format!(
                "states have {} rows, basis expects {}",
                states.nrows(),
                self.full_dim()
            )));
        }
        Ok(self.v.tr_mul(states))
    }

    /// Column-wise [`Self::reconstruct`].
    pub fn reconstruct_all(&self, reduced: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if reduced.nrows() != self.rank() {
            return Err(Error::Dimension(format!(
                "reduced states have {} rows, basis has r = {}",
                reduced.nrows(),
                self.rank()
            )));
        }
        Ok(&self.v * reduced)
    }

    /// Orthogonal projection `V V^T z`.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.reconstruct(&self.reduce(z)?)
    }

    /// Header: magic, version, N, r, d; then V row-major, then the d singular values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(BASIS_MAGIC);
        w.usize(self.full_dim());
        w.usize(self.rank());
        w.usize(self.singular_values.len());
        w.matrix(&self.v);
        w.f64s(self.singular_values.iter().copied());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, BASIS_MAGIC, path)?;
        let n = r.usize()?;
        let rank = r.usize()?;
        let d = r.usize()?;
        let v = r.matrix(n, rank)?;
        let sv = r.f64s(d)?;
        r.finish()?;
        ReducedBasis::from_parts(v, sv).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Truncated POD basis of the snapshot matrix with default options.
pub fn compute_pod(z: &SnapshotMatrix, r: usize) -> Result<ReducedBasis> {
    compute_pod_with(&z.data, r, PodOptions::default())
}

pub fn compute_pod_with(data: &DMatrix<f64>, r: usize, options: PodOptions) -> Result<ReducedBasis> {
    let (n, m) = data.shape();
    let d = n.min(m);
    if r == 0 || r > d {
        return Err(Error::Argument(format!("r = {r} outside 1..={d} for a {n}x{m} snapshot matrix")));
    }
    let centered;
    let data = if options.center {
        let mean = data.column_mean();
        let mut c = data.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        centered = c;
        &centered
    } else {
        data
    };

    let method = match options.method {
        PodMethod::Auto if 4 * n <= m || 4 * m <= n => PodMethod::Gram,
        PodMethod::Auto => PodMethod::Svd,
        other => other,
    };
    let (u, sigma) = match method {
        PodMethod::Gram if n <= m => left_vectors_from_row_gram(data),
        PodMethod::Gram => match left_vectors_from_column_gram(data, r) {
            Some(res) => res,
            None => {
                log::debug!("column-Gram route rank deficient below r = {r}, falling back to SVD");
                thin_svd(data)?
            }
        },
        _ => thin_svd(data)?,
    };

    let mut v = u.columns(0, r).into_owned();
    fix_signs(&mut v);
    Ok(ReducedBasis {
        v,
        singular_values: sigma,
    })
}

/// Sorted `(U, sigma)` from the thin SVD.
fn thin_svd(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = SVD::try_new(data.clone(), true, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no left vectors".into()))?;
    let order = descending_order(svd.singular_values.as_slice());
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok((u.select_columns(&order), sigma))
}

/// Eigen-decomposition of `Z Z^T` (N x N); left vectors directly.
fn left_vectors_from_row_gram(data: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let gram = data * data.transpose();
    let eig = SymmetricEigen::new(gram);
    let order = descending_order(eig.eigenvalues.as_slice());
    let sigma = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    (eig.eigenvectors.select_columns(&order), sigma)
}

/// Method of snapshots: eigen-decomposition of `Z^T Z` (M x M), then
/// `u_l = Z p_l / sigma_l`. Returns `None` if `sigma_r` is numerically zero.
fn left_vectors_from_column_gram(data: &DMatrix<f64>, r: usize) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let gram = data.transpose() * data;
    let eig = SymmetricEigen::new(gram);
    let order = descending_order(eig.eigenvalues.as_slice());
    let sigma: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    if !(sigma[r - 1] > sigma[0] * 1e-7) {
        return None;
    }
    let p = eig.eigenvectors.select_columns(&order[..r]);
    let mut u = data * p;
    for (l, mut col) in u.column_iter_mut().enumerate() {
        col /= sigma[l];
    }
    // re-orthonormalize against round-off amplified by 1/sigma
    let mut fixed = u.clone().qr().q();
    for l in 0..r {
        let dot = fixed.column(l).dot(&u.column(l));
        if dot < 0.0 {
            fixed.column_mut(l).neg_mut();
        }
    }
    Some((fixed, sigma))
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Each column's largest-magnitude entry (first one on ties) becomes positive.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}
