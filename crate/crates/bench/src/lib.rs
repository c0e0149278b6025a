//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use podlstm::harness::{timing_bundle, ExperimentConfig};
use podlstm::{generate_parameter_set, ExcitationSpec, HifiModelConfig, ParameterTrajectory, SurrogateBundle};

/// Timing configuration at full dimension `n` and reduced dimension `r`.
pub struct Fixture {
    pub hifi: HifiModelConfig,
    pub bundle: SurrogateBundle,
    pub mu: ParameterTrajectory,
    pub z1: DVector<f64>,
}

impl Fixture {
    pub fn new(n: usize, r: usize) -> Self {
        let mut cfg = ExperimentConfig::smoke();
        cfg.r = r;
        cfg.network.n_w = 8;
        cfg.network.hidden = vec![32, 32];
        cfg.excitation = ExcitationSpec {
            eta_min: 120,
            eta_max: 120,
            ..ExcitationSpec::default()
        };
        let hifi = HifiModelConfig {
            n_node: n / cfg.hifi.dims_per_node,
            ..HifiModelConfig::default()
        };
        let params = generate_parameter_set(3, 1, &cfg.excitation).expect("parameter set");
        let bundle = timing_bundle(&cfg, &hifi, &params).expect("timing bundle");
        Fixture {
            z1: DVector::zeros(hifi.state_dim()),
            mu: params[0].clone(),
            hifi,
            bundle,
        }
    }
}
