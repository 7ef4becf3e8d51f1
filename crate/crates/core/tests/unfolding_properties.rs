mod common;

use common::*;
use periocrack::spaces::FracQuadrature;
use periocrack::unfolding::{verify_exact, verify_scaling};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exact_identities_hold_for_random_fields(seed in 0u64..10_000, k in 1u32..3) {
        let cell = flat_cell(4);
        let eps = 0.5f64.powi(k as i32);
        for c in verify_exact(&cell, &unit_mesh(&cell, eps), 3, seed).unwrap() {
            prop_assert!(c.passes(1e-12), "{c:?}");
        }
    }

    #[test]
    fn scaling_identities_hold_for_any_order(seed in 0u64..10_000, alpha in 0.05f64..0.95) {
        let cell = flat_cell(4);
        let q = FracQuadrature::for_dim(2);
        for c in verify_scaling(&cell, &unit_mesh(&cell, 0.5), &[alpha], 2, seed, &q).unwrap() {
            prop_assert!(c.passes(1e-9), "{c:?}");
        }
    }
}
