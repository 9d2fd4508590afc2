mod common;

use common::checks::{gcn_oracle, gin_oracle, gradient_check, loss_oracle};

#[test]
fn gin_layer_matches_dense_oracle() {
    let (err, count) = gin_oracle(5);
    assert!(count > 700);
    assert!(err < 1e-10, "max error {err:e}");
}

#[test]
fn gcn_layer_matches_dense_oracle() {
    let (err, _) = gcn_oracle(5);
    assert!(err < 1e-10, "max error {err:e}");
}

#[test]
fn contrastive_losses_match_double_loop() {
    let err = loss_oracle(50);
    assert!(err < 1e-10, "max error {err:e}");
}

#[test]
fn autodiff_matches_finite_differences() {
    for seed in [1, 2] {
        let (err, _, at) = gradient_check(seed);
        assert!(err < 1e-4, "seed {seed}: {err:e} at {at}");
    }
}
