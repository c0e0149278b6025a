//! Experiment orchestration: configuration, the offline pipeline, online
//! rollouts, evaluation reports and timing benchmarks.
//!
//! Output directory layout written by [`run_offline`]:
//!
//! ```text
//! config.toml          effective configuration
//! trajectories/        sim_XXXX.bin, one per simulation
//! basis.bin            POD basis
//! manifest.bin         split ids and normalization
//! model.bin            trained network
//! history.csv          per-epoch losses (epoch 0 holds the initial validation loss)
//! OFFLINE_OK           success marker, or OFFLINE_FAILED with the failing stage
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{build_windows, fit_normalization_with, split_simulations, DatasetManifest, NormalizationMode, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::hifi::{generate_parameter_set, simulate, ExcitationSpec, HifiModelConfig};
use crate::lstm::{train, Architecture, EpochRecord, LstmModel, TrainConfig};
use crate::metrics::{
    csv_error, format_report_table, node_distance, score_triplet, write_report_csv, write_score_csv, RealtimeStats, ScoreTriplet,
    SimulationReport,
};
use crate::reduction::{assemble_snapshots, compute_pod, ReducedBasis};
use crate::rollout::{lift, measure_realtime_ratio, rollout_reduced, rollout_with, time_realtime_ratio, write_rollout_csv, DifferencePredictor, SurrogateBundle};
use crate::trajectory::{ParameterTrajectory, Simulation, StateTrajectory, TimeGrid};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const OK_MARKER: &str = "OFFLINE_OK";
pub const FAILED_MARKER: &str = "OFFLINE_FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// parameter-set generation
    pub data: u64,
    /// train/validation/test partition
    pub split: u64,
    /// network initialization
    pub init: u64,
    /// mini-batch shuffling
    pub shuffle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// window length `n_w`
    pub n_w: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dense_head: bool,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_first_seconds() -> f64 {
    1.0
}

fn default_repetitions() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    /// Leading window for the early-horizon approximation score (s).
    #[serde(default = "default_first_seconds")]
    pub first_seconds: f64,
    /// Timing repetitions per real-time ratio.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            first_seconds: default_first_seconds(),
            repetitions: default_repetitions(),
        }
    }
}

/// Everything needed to reproduce an experiment; all randomness is seeded
/// from `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// reduced dimension
    pub r: usize,
    /// Default output directory, overridden on the command line.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub seeds: Seeds,
    pub split: SplitCounts,
    pub hifi: HifiModelConfig,
    pub excitation: ExcitationSpec,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.network.hidden.clone(),
            dense_head: self.network.dense_head,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            seed: self.seeds.shuffle,
            clip_norm: self.training.clip_norm,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seeds.split,
            train: self.split.train,
            validation: self.split.validation,
            test: self.split.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hifi.validate()?;
        self.excitation.validate()?;
        self.train_config().validate()?;
        self.architecture().validate(self.r)?;
        if self.split.train == 0 || self.split.validation == 0 {
            return Err(Error::Config("train and validation splits need >= 1 simulation".into()));
        }
        if self.r == 0 || self.r > self.hifi.state_dim() {
            return Err(Error::Config(format!(
                "r = {} must lie in 1..={}",
                self.r,
                self.hifi.state_dim()
            )));
        }
        if self.network.n_w == 0 {
            return Err(Error::Config("window length n_w must be >= 1".into()));
        }
        if !(self.evaluation.first_seconds > 0.0) || self.evaluation.repetitions == 0 {
            return Err(Error::Config("evaluation window and repetitions must be positive".into()));
        }
        Ok(())
    }

    /// Tiny end-to-end configuration: 3 simulations of 10 steps, N = 6, r = 2.
    pub fn smoke() -> Self {
        ExperimentConfig {
            r: 2,
            out_dir: None,
            seeds: Seeds {
                data: 1,
                split: 2,
                init: 3,
                shuffle: 4,
            },
            split: SplitCounts {
                train: 1,
                validation: 1,
                test: 1,
            },
            hifi: HifiModelConfig {
                n_node: 2,
                ..HifiModelConfig::default()
            },
            excitation: ExcitationSpec {
                eta_min: 10,
                eta_max: 10,
                ..ExcitationSpec::default()
            },
            network: NetworkConfig {
                n_w: 4,
                hidden: vec![4],
                dense_head: true,
                normalization: NormalizationMode::PerFeature,
            },
            training: TrainingConfig {
                epochs: 2,
                batch_size: 5,
                learning_rate: 1e-3,
                clip_norm: None,
            },
            evaluation: EvaluationConfig {
                first_seconds: 1.0,
                repetitions: 1,
            },
        }
    }
}

fn in_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn trajectory_path(out: &Path, id: usize) -> PathBuf {
    out.join(TRAJECTORY_DIR).join(format!("sim_{id:04}.bin"))
}

/// Simulates every parameter trajectory from rest.
pub fn simulate_all(hifi: &HifiModelConfig, params: &[ParameterTrajectory]) -> Result<Vec<Simulation>> {
    let z1 = DVector::zeros(hifi.state_dim());
    params
        .iter()
        .map(|mu| {
            let states = simulate(hifi, mu, &z1, &mu.grid)?;
            Simulation::new(states, mu.clone())
        })
        .collect()
}

/// Parameter set generation and high-fidelity simulation; writes the
/// trajectory files.
pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Simulation>> {
    cfg.validate()?;
    let params = in_stage("generate", || generate_parameter_set(cfg.split.total(), cfg.seeds.data, &cfg.excitation))?;
    let sims = in_stage("simulate", || simulate_all(&cfg.hifi, &params))?;
    in_stage("persist", || {
        create_dir(&out.join(TRAJECTORY_DIR))?;
        for (id, sim) in sims.iter().enumerate() {
            sim.save(&trajectory_path(out, id))?;
        }
        Ok(())
    })?;
    info!("simulated {} trajectories", sims.len());
    Ok(sims)
}

#[derive(Debug, Clone)]
pub struct OfflineSummary {
    pub bundle: SurrogateBundle,
    pub split: Split,
    pub history: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
}

/// Generate, simulate, reduce, window and train; persists all artifacts.
/// On failure the partial artifacts stay in place next to a failure marker.
pub fn run_offline(cfg: &ExperimentConfig, out: &Path) -> Result<OfflineSummary> {
    create_dir(out)?;
    for marker in [OK_MARKER, FAILED_MARKER] {
        let p = out.join(marker);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    match offline_stages(cfg, out) {
        Ok(summary) => {
            write_text(&out.join(OK_MARKER), "ok\n")?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
            Err(e)
        }
    }
}

fn offline_stages(cfg: &ExperimentConfig, out: &Path) -> Result<OfflineSummary> {
    in_stage("config", || {
        cfg.validate()?;
        write_text(&out.join(CONFIG_FILE), &cfg.to_toml())
    })?;
    let sims = run_generate(cfg, out)?;
    let split = in_stage("split", || split_simulations(sims.len(), &cfg.split_spec()))?;

    let basis = in_stage("pod", || {
        let train_states: Vec<&StateTrajectory> = split.train.iter().map(|&i| &sims[i].states).collect();
        let snapshots = assemble_snapshots(train_states)?;
        compute_pod(&snapshots, cfg.r)
    })?;
    info!(
        "POD basis: N = {}, r = {}, leading singular value {:.4e}",
        basis.full_dim(),
        basis.rank(),
        basis.singular_values()[0]
    );

    let (train_set, val_set, normalization) = in_stage("dataset", || {
        let windows = |ids: &[usize]| {
            let reduced = ids
                .iter()
                .map(|&i| basis.reduce_all(&sims[i].states.states))
                .collect::<Result<Vec<_>>>()?;
            let params: Vec<ParameterTrajectory> = ids.iter().map(|&i| sims[i].params.clone()).collect();
            build_windows(&reduced, &params, ids, cfg.network.n_w)
        };
        let train_set = windows(&split.train)?;
        let val_set = windows(&split.validation)?;
        let normalization = fit_normalization_with(&train_set.samples, cfg.network.normalization)?;
        Ok((train_set, val_set, normalization))
    })?;
    info!("dataset: {} training / {} validation windows", train_set.len(), val_set.len());

    let manifest = DatasetManifest {
        split: split.clone(),
        r: cfg.r,
        ell: cfg.excitation.channels,
        normalization: normalization.clone(),
    };
    let outcome = in_stage("train", || {
        let model = LstmModel::new(
            &cfg.architecture(),
            cfg.r,
            cfg.excitation.channels,
            cfg.network.n_w,
            normalization,
            cfg.seeds.init,
        )?;
        train(model, &train_set, &val_set, &cfg.train_config())
    })?;

    let bundle = in_stage("persist", || {
        let bundle = SurrogateBundle::new(basis, outcome.model)?;
        bundle.save(out)?;
        manifest.save(&out.join(MANIFEST_FILE))?;
        write_history(&out.join(HISTORY_FILE), outcome.initial_val_loss, &outcome.history)?;
        Ok(bundle)
    })?;
    Ok(OfflineSummary {
        bundle,
        split,
        history: outcome.history,
        initial_val_loss: outcome.initial_val_loss,
        best_epoch: outcome.best_epoch,
    })
}

fn write_history(path: &Path, initial_val_loss: f64, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "train_loss", "val_loss"])
        .map_err(|e| csv_error(path, e))?;
    w.write_record(["0".to_string(), String::new(), format!("{initial_val_loss:e}")])
        .map_err(|e| csv_error(path, e))?;
    for rec in history {
        w.write_record([
            (rec.epoch + 1).to_string(),
            format!("{:e}", rec.train_loss),
            format!("{:e}", rec.val_loss),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Offline artifacts reloaded from disk.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub bundle: SurrogateBundle,
    pub manifest: DatasetManifest,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let bundle = SurrogateBundle::load(dir)?;
        let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
        if manifest.r != bundle.basis.rank() {
            return Err(Error::format(dir.join(MANIFEST_FILE), "manifest rank differs from the basis"));
        }
        Ok(Workspace {
            dir: dir.to_path_buf(),
            config,
            bundle,
            manifest,
        })
    }

    pub fn simulation(&self, id: usize) -> Result<Simulation> {
        Simulation::load(&trajectory_path(&self.dir, id))
    }
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub predicted: StateTrajectory,
    pub reduced: DMatrix<f64>,
    /// present when a stored reference trajectory was used
    pub scores: Option<ScoreTriplet>,
    pub trajectory_file: PathBuf,
    pub csv_file: PathBuf,
}

/// Rolls the bundle out for a stored simulation (`sim_id`) or, without one,
/// from rest under `mu = 0` on the longest configured grid.
pub fn run_online(bundle_dir: &Path, sim_id: Option<usize>, out: &Path) -> Result<OnlineResult> {
    let ws = Workspace::open(bundle_dir)?;
    let (mu, z1, reference) = match sim_id {
        Some(id) => {
            let sim = ws.simulation(id)?;
            (sim.params.clone(), sim.states.state(0), Some(sim.states))
        }
        None => {
            let ex = &ws.config.excitation;
            let grid = TimeGrid::new(ex.t_start, ex.dt, ex.eta_max)?;
            (
                ParameterTrajectory::zeros(grid, ws.manifest.ell),
                DVector::zeros(ws.bundle.basis.full_dim()),
                None,
            )
        }
    };
    let reduced = rollout_reduced(&ws.bundle, &z1, &mu)?;
    let predicted = lift(&ws.bundle.basis, &reduced, mu.grid)?;
    let scores = reference
        .as_ref()
        .map(|z| score_triplet(z, &ws.bundle.basis, &reduced))
        .transpose()?;
    create_dir(out)?;
    let stem = match sim_id {
        Some(id) => format!("online_sim_{id:04}"),
        None => "online_zero_input".to_string(),
    };
    let trajectory_file = out.join(format!("{stem}.bin"));
    let csv_file = out.join(format!("{stem}.csv"));
    Simulation::new(predicted.clone(), mu.clone())?.save(&trajectory_file)?;
    write_rollout_csv(&csv_file, &mu.grid, &reduced, scores.as_ref())?;
    Ok(OnlineResult {
        predicted,
        reduced,
        scores,
        trajectory_file,
        csv_file,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluatedSimulation {
    pub report: SimulationReport,
    pub scores: ScoreTriplet,
    pub reduced: DMatrix<f64>,
}

/// Scores `predictor` against reference simulations; the real-time ratio
/// covers the rollout plus the lift to full space.
pub fn evaluate_with<P: DifferencePredictor + ?Sized>(
    basis: &ReducedBasis,
    predictor: &P,
    references: &[(usize, Simulation)],
    dims_per_node: usize,
    eval: &EvaluationConfig,
) -> Result<Vec<EvaluatedSimulation>> {
    references
        .iter()
        .map(|(id, sim)| {
            let mu = &sim.params;
            let zbar1 = basis.reduce(&sim.states.state(0))?;
            let reduced = rollout_with(predictor, &zbar1, mu)?;
            let scores = score_triplet(&sim.states, basis, &reduced)?;
            let approx = basis.reconstruct_all(&reduced)?;
            let distances = node_distance(&sim.states.states, &approx, dims_per_node)?;
            let timing = time_realtime_ratio(mu.grid.span(), eval.repetitions, || {
                let z = rollout_with(predictor, &basis.reduce(&sim.states.state(0))?, mu)?;
                std::hint::black_box(lift(basis, &z, mu.grid)?);
                Ok(())
            })?;
            let report = SimulationReport::from_parts(*id, &scores, &distances, timing.median, eval.first_seconds)?;
            Ok(EvaluatedSimulation { report, scores, reduced })
        })
        .collect()
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

/// Evaluates the test split; writes per-step score tables, the report CSV
/// and a text rendering into `out`.
pub fn run_evaluate(bundle_dir: &Path, out: &Path) -> Result<Vec<EvaluatedSimulation>> {
    let ws = Workspace::open(bundle_dir)?;
    if ws.manifest.split.test.is_empty() {
        return Err(Error::Argument("the test split is empty".into()));
    }
    let references = ws
        .manifest
        .split
        .test
        .iter()
        .map(|&id| Ok((id, ws.simulation(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let evaluated = evaluate_with(
        &ws.bundle.basis,
        &ws.bundle.model,
        &references,
        ws.config.hifi.dims_per_node,
        &ws.config.evaluation,
    )?;
    create_dir(out)?;
    for e in &evaluated {
        write_score_csv(&out.join(format!("scores_sim_{:04}.csv", e.report.sim_id)), &e.scores)?;
    }
    let reports: Vec<SimulationReport> = evaluated.iter().map(|e| e.report.clone()).collect();
    write_report_csv(&out.join(REPORT_CSV), &reports)?;
    write_text(&out.join(REPORT_TXT), &format_report_table(&reports))?;
    Ok(evaluated)
}

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub n: usize,
    pub r: usize,
    pub hifi: RealtimeStats,
    pub surrogate: RealtimeStats,
}

impl BenchmarkRow {
    /// Ratio of median real-time ratios.
    pub fn speedup(&self) -> f64 {
        self.hifi.median / self.surrogate.median
    }
}

/// Surrogate of the configured architecture at full dimension `n`: POD of a
/// few simulations plus seeded initial weights. Rollout cost does not depend
/// on the weight values.
pub fn timing_bundle(cfg: &ExperimentConfig, hifi: &HifiModelConfig, params: &[ParameterTrajectory]) -> Result<SurrogateBundle> {
    let sims = simulate_all(hifi, params)?;
    let snapshots = assemble_snapshots(sims.iter().map(|s| &s.states))?;
    let basis = compute_pod(&snapshots, cfg.r)?;
    let ell = cfg.excitation.channels;
    let norm = crate::dataset::Normalization::identity(cfg.r + ell, cfg.r);
    let model = LstmModel::new(&cfg.architecture(), cfg.r, ell, cfg.network.n_w, norm, cfg.seeds.init)?;
    SurrogateBundle::new(basis, model)
}

/// High-fidelity vs surrogate real-time ratios on a common grid, for each
/// full dimension in `sizes` (rounded down to whole nodes).
pub fn run_benchmark(cfg: &ExperimentConfig, sizes: &[usize], repetitions: usize) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let params = generate_parameter_set(3, cfg.seeds.data, &ExcitationSpec {
        eta_min: cfg.excitation.eta_max,
        ..cfg.excitation.clone()
    })?;
    let mu = &params[0];
    let dims = cfg.hifi.dims_per_node;
    sizes
        .iter()
        .map(|&n| {
            let hifi = HifiModelConfig {
                n_node: n / dims,
                ..cfg.hifi.clone()
            };
            hifi.validate()?;
            let bundle = timing_bundle(cfg, &hifi, &params)?;
            let z1 = DVector::zeros(hifi.state_dim());
            let hifi_stats = time_realtime_ratio(mu.grid.span(), repetitions, || {
                std::hint::black_box(simulate(&hifi, mu, &z1, &mu.grid)?);
                Ok(())
            })?;
            let surrogate = measure_realtime_ratio(&bundle, &z1, mu, repetitions)?;
            let row = BenchmarkRow {
                n: hifi.state_dim(),
                r: cfg.r,
                hifi: hifi_stats,
                surrogate,
            };
            info!(
                "N = {}: hifi dt_r {:.4e}, surrogate dt_r {:.4e}, speedup {:.1}",
                row.n,
                row.hifi.median,
                row.surrogate.median,
                row.speedup()
            );
            Ok(row)
        })
        .collect()
}

pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["n", "r", "hifi_dt_r_min", "hifi_dt_r_median", "surrogate_dt_r_min", "surrogate_dt_r_median", "speedup"])
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            row.r.to_string(),
            format!("{:e}", row.hifi.min),
            format!("{:e}", row.hifi.median),
            format!("{:e}", row.surrogate.min),
            format!("{:e}", row.surrogate.median),
            format!("{:e}", row.speedup()),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::ReplayPredictor;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::smoke();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::smoke();
        cfg.r = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::smoke();
        cfg.network.dense_head = false;
        assert!(cfg.validate().is_err());
        assert!(matches!(ExperimentConfig::from_toml("r = "), Err(Error::Config(_))));
    }

    #[test]
    fn smoke_pipeline_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::smoke();
        let summary = run_offline(&cfg, dir.path()).unwrap();
        assert_eq!(summary.history.len(), 2);
        for f in [CONFIG_FILE, MANIFEST_FILE, HISTORY_FILE, OK_MARKER, "basis.bin", "model.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        for id in 0..3 {
            assert!(trajectory_path(dir.path(), id).exists());
        }
        let online = run_online(dir.path(), None, &dir.path().join("online")).unwrap();
        assert_eq!(online.predicted.len(), cfg.excitation.eta_max);
        let test_id = summary.split.test[0];
        let online = run_online(dir.path(), Some(test_id), &dir.path().join("online")).unwrap();
        assert!(online.scores.is_some());
        let evaluated = run_evaluate(dir.path(), &dir.path().join("eval")).unwrap();
        assert_eq!(evaluated.len(), 1);
        assert!(dir.path().join("eval").join(REPORT_CSV).exists());
    }

    #[test]
    fn stage_failure_leaves_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::smoke();
        cfg.hifi.stiffness = 1e12;
        cfg.hifi.substeps = 1;
        cfg.excitation.amplitude = 1e3;
        let err = run_offline(&cfg, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "simulate", .. }));
        assert!(dir.path().join(FAILED_MARKER).exists());
        assert!(!dir.path().join(OK_MARKER).exists());
    }

    #[test]
    fn replay_predictor_scores_one() {
        let cfg = ExperimentConfig::smoke();
        let params = generate_parameter_set(2, 5, &cfg.excitation).unwrap();
        let sims = simulate_all(&cfg.hifi, &params).unwrap();
        let snapshots = assemble_snapshots(sims.iter().map(|s| &s.states)).unwrap();
        let basis = compute_pod(&snapshots, 2).unwrap();
        let reduced = basis.reduce_all(&sims[1].states.states).unwrap();
        let replay = ReplayPredictor::from_reduced(&reduced, 3, 4);
        let eval = EvaluationConfig {
            first_seconds: 1.0,
            repetitions: 1,
        };
        let out = evaluate_with(&basis, &replay, &[(1, sims[1].clone())], 3, &eval).unwrap();
        let regr = &out[0].scores.regr;
        // the rollout starts at rest, so every unflagged step is exact up to
        // the floating-point sum of replayed differences
        assert!(regr.values.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-9));
        assert!((out[0].report.s_regr - 1.0).abs() < 1e-9);
    }

    #[test]
    fn benchmark_rows() {
        let cfg = ExperimentConfig::smoke();
        let rows = run_benchmark(&cfg, &[6, 12], 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].n, 12);
        assert!(rows.iter().all(|r| r.surrogate.median > 0.0 && r.speedup().is_finite()));
    }
}
