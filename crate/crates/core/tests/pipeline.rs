use std::fs;

use podlstm::harness::{run_evaluate, run_offline, run_online, ExperimentConfig, Workspace, OK_MARKER};
use podlstm::rollout::MODEL_FILE;
use podlstm::{rollout_full, simulate, Error, SurrogateBundle};

#[test]
fn offline_bundle_reloads_and_rolls_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::smoke();
    let summary = run_offline(&cfg, dir.path()).unwrap();
    assert!(dir.path().join(OK_MARKER).exists());
    assert!(summary.history.len() <= cfg.training.epochs);

    let loaded = SurrogateBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.basis, summary.bundle.basis);
    assert_eq!(loaded.model, summary.bundle.model);

    let ws = Workspace::open(dir.path()).unwrap();
    let id = summary.split.test[0];
    let sim = ws.simulation(id).unwrap();
    let z1 = sim.states.state(0);
    let predicted = rollout_full(&loaded, &z1, &sim.params).unwrap();
    assert_eq!(predicted.states.shape(), sim.states.states.shape());

    let online = run_online(dir.path(), Some(id), &dir.path().join("online")).unwrap();
    assert_eq!(online.predicted.states, predicted.states);
    assert!(online.scores.is_some());

    let evaluated = run_evaluate(dir.path(), &dir.path().join("eval")).unwrap();
    assert_eq!(evaluated.len(), cfg.split.test);
}

#[test]
fn stored_trajectories_match_a_fresh_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::smoke();
    run_offline(&cfg, dir.path()).unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    let sim = ws.simulation(0).unwrap();
    let fresh = simulate(&cfg.hifi, &sim.params, &sim.states.state(0), &sim.params.grid).unwrap();
    assert_eq!(fresh.states, sim.states.states);
}

#[test]
fn truncated_model_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    run_offline(&ExperimentConfig::smoke(), dir.path()).unwrap();
    let path = dir.path().join(MODEL_FILE);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(SurrogateBundle::load(dir.path()), Err(Error::Format { .. })));
}
