use podlstm::{rollout_full, simulate};
use podlstm_bench::Fixture;

#[test]
fn fixture_models_share_grid_and_dimension() {
    let f = Fixture::new(60, 5);
    let hifi = simulate(&f.hifi, &f.mu, &f.z1, &f.mu.grid).unwrap();
    let surrogate = rollout_full(&f.bundle, &f.z1, &f.mu).unwrap();
    assert_eq!(hifi.states.shape(), surrogate.states.shape());
    assert_eq!(hifi.states.nrows(), 60);
    assert_eq!(f.bundle.basis.rank(), 5);
}
