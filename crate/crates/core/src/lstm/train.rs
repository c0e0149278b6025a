use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_global_norm, rmsprop_step, LstmModel, RmspropState};
use crate::dataset::{Batch, Normalization, WindowSample, WindowedDataset};
use crate::error::{Error, Result};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 5,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: LstmModel,
    /// One entry per epoch.
    pub history: Vec<EpochRecord>,
    /// Validation loss of the initial weights.
    pub initial_val_loss: f64,
    /// Zero-based index into `history` of the selected weights.
    pub best_epoch: usize,
}

fn check_compatible(model: &LstmModel, ds: &WindowedDataset, name: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Argument(format!("{name} dataset is empty")));
    }
    if ds.feature_dim() != model.input_dim() || ds.r != model.output_dim() || ds.n_w != model.n_w {
        return Err(Error::Dimension(format!(
            "{name} dataset (features {}, r {}, n_w {}) does not fit the model (features {}, r {}, n_w {})",
            ds.feature_dim(),
            ds.r,
            ds.n_w,
            model.input_dim(),
            model.output_dim(),
            model.n_w
        )));
    }
    Ok(())
}

fn normalized_samples(ds: &WindowedDataset, norm: &Normalization) -> Vec<WindowSample> {
    ds.samples
        .iter()
        .map(|s| WindowSample {
            inputs: norm.normalize_inputs(&s.inputs),
            target: norm.normalize_target(&s.target),
            origin: s.origin,
        })
        .collect()
}

fn mean_loss(model: &LstmModel, samples: &[WindowSample]) -> Result<f64> {
    let identity = Normalization::identity(model.input_dim(), model.output_dim());
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::pack(&refs, model.n_w, &identity)?;
        total += model.batch_loss(&batch)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Mean squared-error loss of `model` over `ds`, in normalized target units.
pub fn evaluate_loss(model: &LstmModel, ds: &WindowedDataset) -> Result<f64> {
    check_compatible(model, ds, "evaluation")?;
    mean_loss(model, &normalized_samples(ds, &model.normalization))
}

/// Mini-batch RMSprop training with validation-based weight selection.
pub fn train(mut model: LstmModel, train_set: &WindowedDataset, val_set: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(&model, train_set, "training")?;
    check_compatible(&model, val_set, "validation")?;

    let identity = Normalization::identity(model.input_dim(), model.output_dim());
    let train_samples = normalized_samples(train_set, &model.normalization);
    let val_samples = normalized_samples(val_set, &model.normalization);

    let initial_val_loss = mean_loss(&model, &val_samples)?;
    if !initial_val_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            location: "in validation before training".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = RmspropState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, LstmModel)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&WindowSample> = idx.iter().map(|&i| &train_samples[i]).collect();
            let batch = Batch::pack(&refs, model.n_w, &identity)?;
            let (mut grads, loss) = model.backward_batch(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { location } => Error::NonFiniteLoss {
                    location: format!("at epoch {}, batch {b}, {location}", epoch + 1),
                },
                other => other,
            })?;
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            rmsprop_step(&mut model.params, &grads, &mut opt);
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train_samples.len() as f64;
        let val_loss = mean_loss(&model, &val_samples)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                location: format!("in validation after epoch {}", epoch + 1),
            });
        }
        log::info!("epoch {:>4}: train {train_loss:.6e}  val {val_loss:.6e}", epoch + 1);
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |(_, l, _)| val_loss < *l) {
            best = Some((epoch, val_loss, model.clone()));
        }
    }

    let (best_epoch, _, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        initial_val_loss,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_windows, fit_normalization};
    use crate::lstm::Architecture;
    use crate::trajectory::{ParameterTrajectory, TimeGrid};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    /// `zbar_{t+1} = a zbar_t + b mu_t` per component.
    fn linear_toy(count: usize, eta: usize, seed: u64) -> (Vec<DMatrix<f64>>, Vec<ParameterTrajectory>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TimeGrid::new(0.0, 0.025, eta).unwrap();
        let mut zs = Vec::new();
        let mut ps = Vec::new();
        for _ in 0..count {
            let (f, ph) = (rng.random_range(0.5..2.0), rng.random_range(0.0..6.28));
            let mu = DMatrix::from_fn(1, eta, |_, j| (f * j as f64 * 0.1 + ph).sin());
            let mut z = DMatrix::zeros(2, eta);
            z[(0, 0)] = rng.random_range(-1.0..1.0);
            z[(1, 0)] = rng.random_range(-1.0..1.0);
            for t in 0..eta - 1 {
                let next = z.column(t) * 0.9 + DVector::from_element(2, 0.1 * mu[(0, t)]);
                z.set_column(t + 1, &next);
            }
            zs.push(z);
            ps.push(ParameterTrajectory::new(grid, mu).unwrap());
        }
        (zs, ps)
    }

    fn datasets(n_train: usize, n_val: usize, eta: usize, n_w: usize) -> (WindowedDataset, WindowedDataset) {
        let (z, p) = linear_toy(n_train + n_val, eta, 5);
        let ids: Vec<usize> = (0..n_train + n_val).collect();
        let tr = build_windows(&z[..n_train], &p[..n_train], &ids[..n_train], n_w).unwrap();
        let va = build_windows(&z[n_train..], &p[n_train..], &ids[n_train..], n_w).unwrap();
        (tr, va)
    }

    #[test]
    fn history_length_and_selection() {
        let (tr, va) = datasets(6, 2, 20, 3);
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![6], dense_head: true };
        let model = LstmModel::new(&arch, 2, 1, 3, norm, 1).unwrap();
        let cfg = TrainConfig { epochs: 7, batch_size: 4, learning_rate: 5e-3, seed: 2, clip_norm: None };
        let out = train(model, &tr, &va, &cfg).unwrap();
        assert_eq!(out.history.len(), 7);
        let min = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch].val_loss, min);
        let again = evaluate_loss(&out.model, &va).unwrap();
        assert!((again - min).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = datasets(4, 2, 15, 4);
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![5, 2], dense_head: false };
        let cfg = TrainConfig { epochs: 3, batch_size: 5, learning_rate: 1e-3, seed: 9, clip_norm: Some(10.0) };
        let run = || {
            let model = LstmModel::new(&arch, 2, 1, 4, norm.clone(), 3).unwrap();
            train(model, &tr, &va, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn zero_targets_are_learned() {
        let (mut tr, mut va) = datasets(6, 3, 20, 3);
        for s in tr.samples.iter_mut().chain(va.samples.iter_mut()) {
            s.target.fill(0.0);
        }
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![6], dense_head: true };
        let model = LstmModel::new(&arch, 2, 1, 3, norm, 4).unwrap();
        let cfg = TrainConfig { epochs: 50, batch_size: 5, learning_rate: 1e-3, seed: 1, clip_norm: None };
        let out = train(model, &tr, &va, &cfg).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for s in &va.samples {
            let pred = out.model.forward(&s.inputs).unwrap();
            total += pred.iter().map(|v| v.abs()).sum::<f64>();
            count += pred.len();
        }
        assert!(total / (count as f64) < 1e-3);
    }

    #[test]
    fn linear_toy_dynamics_are_learned() {
        let (tr, va) = datasets(50, 10, 40, 8);
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![16], dense_head: true };
        let model = LstmModel::new(&arch, 2, 1, 8, norm, 7).unwrap();
        let cfg = TrainConfig { epochs: 30, batch_size: 16, learning_rate: 2e-3, seed: 3, clip_norm: None };
        let out = train(model, &tr, &va, &cfg).unwrap();
        let best = out.history[out.best_epoch].val_loss;
        assert!(best < 0.1 * out.initial_val_loss, "best {best} vs initial {}", out.initial_val_loss);
    }

    #[test]
    fn config_and_shape_errors() {
        let (tr, va) = datasets(2, 1, 10, 3);
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![2], dense_head: false };
        let model = LstmModel::new(&arch, 2, 1, 3, norm.clone(), 0).unwrap();
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train(model.clone(), &tr, &va, &bad), Err(Error::Config(_))));
        let wrong_window = LstmModel::new(&arch, 2, 1, 4, norm, 0).unwrap();
        assert!(matches!(train(wrong_window, &tr, &va, &TrainConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn divergence_is_located() {
        let (tr, va) = datasets(3, 1, 10, 2);
        let norm = fit_normalization(&tr.samples).unwrap();
        let arch = Architecture { hidden: vec![3], dense_head: true };
        let mut model = LstmModel::new(&arch, 2, 1, 2, norm, 0).unwrap();
        model.params.head.as_mut().unwrap().b[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        assert!(matches!(train(model, &tr, &va, &cfg), Err(Error::NonFiniteLoss { .. })));
    }
}
