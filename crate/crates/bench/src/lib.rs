//! Benchmark fixtures.

use gscore_core::fit::fit_val_gaussian;
use gscore_core::{gen_suite, GaussianParams, MetaSuite, ScoreSet, SuiteSpec};

/// Training suite of `n_sets` balanced sets with `per_side` samples each side.
pub fn suite(n_sets: usize, per_side: usize, seed: u64) -> (MetaSuite, GaussianParams) {
    let spec = SuiteSpec {
        seed,
        n_train: n_sets,
        n_test: 0,
        size_range: (per_side, per_side),
        ..SuiteSpec::default()
    };
    let (train, _) = gen_suite(&spec).expect("valid spec");
    let val = fit_val_gaussian(&spec.gen_val().expect("valid spec")).expect("enough samples");
    (train, val)
}

/// One labeled set from the middle of a generated suite.
pub fn one_set(per_side: usize) -> (ScoreSet, GaussianParams) {
    let (s, val) = suite(3, per_side, 1);
    (s.sets()[1].clone(), val)
}
