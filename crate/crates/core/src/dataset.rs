//! Windowed supervised samples built from reduced trajectories.
//!
//! For simulation `j` and every step `t` except the last, a sample holds the
//! columns `[zbar; mu]` at steps `max(0, t - n_w + 1) ..= t` and the target
//! `zbar_{t+1} - zbar_t`. Early steps therefore produce shorter windows; they
//! are padded and masked at batching time.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::trajectory::ParameterTrajectory;

pub const MANIFEST_MAGIC: &[u8; 8] = b"PLMANIF\0";

/// Floor applied to per-feature standard deviations.
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `(r + ell) x w` with `1 <= w <= n_w`; the last column is the current step.
    pub inputs: DMatrix<f64>,
    pub target: DVector<f64>,
    /// `(simulation id, zero-based time index of the last window column)`
    pub origin: (usize, usize),
}

impl WindowSample {
    pub fn valid_length(&self) -> usize {
        self.inputs.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<WindowSample>,
    pub n_w: usize,
    pub r: usize,
    pub ell: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.r + self.ell
    }
}

/// Stacks `[zbar; mu]` for the zero-based steps `from..=to`.
pub fn window_columns(reduced: &DMatrix<f64>, params: &DMatrix<f64>, from: usize, to: usize) -> DMatrix<f64> {
    let (r, ell) = (reduced.nrows(), params.nrows());
    let w = to + 1 - from;
    let mut out = DMatrix::zeros(r + ell, w);
    out.view_mut((0, 0), (r, w)).copy_from(&reduced.columns(from, w));
    out.view_mut((r, 0), (ell, w)).copy_from(&params.columns(from, w));
    out
}

/// Builds the windowed dataset. `ids[k]` is recorded as the simulation id of
/// `reduced[k]` in every sample origin.
pub fn build_windows(
    reduced: &[DMatrix<f64>],
    params: &[ParameterTrajectory],
    ids: &[usize],
    n_w: usize,
) -> Result<WindowedDataset> {
    if n_w == 0 {
        return Err(Error::Argument("window length must be >= 1".into()));
    }
    if reduced.len() != params.len() || reduced.len() != ids.len() {
        return Err(Error::Dimension(format!(
            "{} reduced trajectories, {} parameter trajectories, {} ids",
            reduced.len(),
            params.len(),
            ids.len()
        )));
    }
    let first = reduced
        .first()
        .ok_or_else(|| Error::Argument("no trajectories to window".into()))?;
    let (r, ell) = (first.nrows(), params[0].channels());
    let mut samples = Vec::new();
    for ((zbar, mu), &id) in reduced.iter().zip(params).zip(ids) {
        if zbar.nrows() != r || mu.channels() != ell {
            return Err(Error::Dimension(format!(
                "simulation {id}: dims ({}, {}) differ from ({r}, {ell})",
                zbar.nrows(),
                mu.channels()
            )));
        }
        if zbar.ncols() != mu.grid.eta {
            return Err(Error::Dimension(format!(
                "simulation {id}: {} reduced states for {} parameter samples",
                zbar.ncols(),
                mu.grid.eta
            )));
        }
        if zbar.ncols() < 2 {
            return Err(Error::Argument(format!("simulation {id} has fewer than 2 steps")));
        }
        for t in 0..zbar.ncols() - 1 {
            let from = (t + 1).saturating_sub(n_w);
            samples.push(WindowSample {
                inputs: window_columns(zbar, &mu.values, from, t),
                target: zbar.column(t + 1) - zbar.column(t),
                origin: (id, t),
            });
        }
    }
    Ok(WindowedDataset { samples, n_w, r, ell })
}

/// Simulation-level split counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition of `0..total` into train/validation/test ids (each sorted).
pub fn split_simulations(total: usize, spec: &SplitSpec) -> Result<Split> {
    if spec.train + spec.validation + spec.test != total {
        return Err(Error::Argument(format!(
            "split {}/{}/{} does not add up to {total} simulations",
            spec.train, spec.validation, spec.test
        )));
    }
    if spec.train == 0 || spec.validation == 0 {
        return Err(Error::Argument("train and validation splits need >= 1 simulation".into()));
    }
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |from: usize, count: usize| {
        let mut part = ids[from..from + count].to_vec();
        part.sort_unstable();
        part
    };
    Ok(Split {
        train: take(0, spec.train),
        validation: take(spec.train, spec.validation),
        test: take(spec.train + spec.validation, spec.test),
    })
}

/// Per-feature z-score statistics for network inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub input_shift: DVector<f64>,
    pub input_scale: DVector<f64>,
    pub target_shift: DVector<f64>,
    pub target_scale: DVector<f64>,
}

impl Normalization {
    /// No-op statistics for `n_x` input features and `r` targets.
    pub fn identity(n_x: usize, r: usize) -> Self {
        Normalization {
            input_shift: DVector::zeros(n_x),
            input_scale: DVector::from_element(n_x, 1.0),
            target_shift: DVector::zeros(r),
            target_scale: DVector::from_element(r, 1.0),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shift.len()
    }

    pub fn target_dim(&self) -> usize {
        self.target_shift.len()
    }

    pub fn normalize_inputs(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = inputs.clone();
        for mut col in out.column_iter_mut() {
            col -= &self.input_shift;
            col.component_div_assign(&self.input_scale);
        }
        out
    }

    pub fn denormalize_inputs(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = inputs.clone();
        for mut col in out.column_iter_mut() {
            col.component_mul_assign(&self.input_scale);
            col += &self.input_shift;
        }
        out
    }

    pub fn normalize_target(&self, target: &DVector<f64>) -> DVector<f64> {
        (target - &self.target_shift).component_div(&self.target_scale)
    }

    pub fn denormalize_target(&self, target: &DVector<f64>) -> DVector<f64> {
        target.component_mul(&self.target_scale) + &self.target_shift
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.vector(&self.input_shift);
        w.vector(&self.input_scale);
        w.vector(&self.target_shift);
        w.vector(&self.target_scale);
    }

    pub(crate) fn read(r: &mut Reader<'_>, n_x: usize, n_y: usize) -> Result<Self> {
        let norm = Normalization {
            input_shift: r.vector(n_x)?,
            input_scale: r.vector(n_x)?,
            target_shift: r.vector(n_y)?,
            target_scale: r.vector(n_y)?,
        };
        if norm.input_scale.iter().chain(norm.target_scale.iter()).any(|&s| !(s > 0.0)) {
            return Err(Error::format(r.path(), "normalization scales must be positive"));
        }
        Ok(norm)
    }
}

fn mean_and_scale<'a>(columns: impl Iterator<Item = nalgebra::DVectorView<'a, f64>> + Clone, dim: usize) -> (DVector<f64>, DVector<f64>) {
    let mut count = 0usize;
    let mut mean = DVector::zeros(dim);
    for c in columns.clone() {
        mean += c;
        count += 1;
    }
    mean /= count as f64;
    let mut var = DVector::zeros(dim);
    for c in columns {
        let d = c - &mean;
        var += d.component_mul(&d);
    }
    var /= count as f64;
    let scale = var.map(|v| v.sqrt().max(SCALE_FLOOR));
    (mean, scale)
}

/// Scaling of the reduced coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Every feature and target coefficient gets its own standard deviation.
    #[default]
    PerFeature,
    /// Reduced-state inputs share the largest coefficient standard deviation,
    /// and so do the targets, keeping the relative weight of POD modes.
    /// Parameter channels are still scaled individually.
    SharedReduced,
}

/// [`fit_normalization_with`] in [`NormalizationMode::PerFeature`] mode.
pub fn fit_normalization(train: &[WindowSample]) -> Result<Normalization> {
    fit_normalization_with(train, NormalizationMode::PerFeature)
}

/// Fits the normalization on training samples: inputs use each sample's
/// current-step column (every trajectory step counted once), targets use the
/// sample targets. Standard deviations are population ones, floored at
/// [`SCALE_FLOOR`].
pub fn fit_normalization_with(train: &[WindowSample], mode: NormalizationMode) -> Result<Normalization> {
    let first = train
        .first()
        .ok_or_else(|| Error::Argument("cannot fit normalization on an empty training set".into()))?;
    let (n_x, r) = (first.inputs.nrows(), first.target.len());
    let inputs = train.iter().map(|s| s.inputs.column(s.inputs.ncols() - 1));
    let (input_shift, mut input_scale) = mean_and_scale(inputs, n_x);
    let targets = train.iter().map(|s| s.target.column(0));
    let (target_shift, mut target_scale) = mean_and_scale(targets, r);
    if mode == NormalizationMode::SharedReduced {
        let shared = input_scale.rows(0, r).max();
        input_scale.rows_mut(0, r).fill(shared);
        let shared = target_scale.max();
        target_scale.fill(shared);
    }
    Ok(Normalization {
        input_shift,
        input_scale,
        target_shift,
        target_scale,
    })
}

/// A padded mini-batch: `steps[k]` is the `n_x x B` input at window position
/// `k`, valid columns first and padding after.
#[derive(Debug, Clone)]
pub struct Batch {
    pub steps: Vec<DMatrix<f64>>,
    /// `mask[k][b]` is true when position `k` of sample `b` is valid.
    pub mask: Vec<Vec<bool>>,
    /// Normalized targets, `r x B`.
    pub targets: DMatrix<f64>,
    pub origins: Vec<(usize, usize)>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.targets.ncols()
    }

    /// Normalizes and pads `samples` to `n_w` positions.
    pub fn pack(samples: &[&WindowSample], n_w: usize, norm: &Normalization) -> Result<Batch> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Argument("empty batch".into()))?;
        let (n_x, r) = (first.inputs.nrows(), first.target.len());
        if n_x != norm.input_dim() || r != norm.target_dim() {
            return Err(Error::Dimension(format!(
                "samples have ({n_x}, {r}) features, normalization expects ({}, {})",
                norm.input_dim(),
                norm.target_dim()
            )));
        }
        let b = samples.len();
        let mut steps = vec![DMatrix::zeros(n_x, b); n_w];
        let mut mask = vec![vec![false; b]; n_w];
        let mut targets = DMatrix::zeros(r, b);
        let mut origins = Vec::with_capacity(b);
        for (j, s) in samples.iter().enumerate() {
            let w = s.valid_length();
            if w == 0 || w > n_w || s.inputs.nrows() != n_x || s.target.len() != r {
                return Err(Error::Dimension(format!("sample {:?} does not fit the batch layout", s.origin)));
            }
            let normalized = norm.normalize_inputs(&s.inputs);
            for k in 0..w {
                steps[k].set_column(j, &normalized.column(k));
                mask[k][j] = true;
            }
            targets.set_column(j, &norm.normalize_target(&s.target));
            origins.push(s.origin);
        }
        Ok(Batch {
            steps,
            mask,
            targets,
            origins,
        })
    }
}

/// Simulation ids per split plus the fitted normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub r: usize,
    pub ell: usize,
    pub normalization: Normalization,
}

impl DatasetManifest {
    /// Header: magic, version, n_train, n_val, n_test, r, ell; then all ids
    /// (u64, train/val/test order); then input shift/scale and target
    /// shift/scale as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MANIFEST_MAGIC);
        w.usize(self.split.train.len());
        w.usize(self.split.validation.len());
        w.usize(self.split.test.len());
        w.usize(self.r);
        w.usize(self.ell);
        for &id in self.split.train.iter().chain(&self.split.validation).chain(&self.split.test) {
            w.usize(id);
        }
        self.normalization.write(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = Reader::new(bytes, MANIFEST_MAGIC, path)?;
        let counts = [rd.usize()?, rd.usize()?, rd.usize()?];
        let r = rd.usize()?;
        let ell = rd.usize()?;
        let mut read_ids = |n: usize| -> Result<Vec<usize>> { (0..n).map(|_| rd.usize()).collect() };
        let split = Split {
            train: read_ids(counts[0])?,
            validation: read_ids(counts[1])?,
            test: read_ids(counts[2])?,
        };
        let normalization = Normalization::read(&mut rd, r + ell, r)?;
        rd.finish()?;
        Ok(DatasetManifest {
            split,
            r,
            ell,
            normalization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
