mod common;

use common::*;
use periocrack::contact::SolverOptions;
use periocrack::geometry::BoxDomain;
use periocrack::twoscale::{solve_limit_given_friction, MacroMesh, TwoScaleSystem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn limit_system(f: [f64; 3]) -> TwoScaleSystem {
    let cell = flat_cell(4);
    let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left_face()).unwrap();
    TwoScaleSystem::new(mm, &cell, &iso(), 1.0, ETA, move |_| f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn limit_solutions_are_feasible(a in -1.0f64..1.0, b in -1.0f64..1.0, g in 0.0f64..0.5) {
        let sys = limit_system([a, b, 0.0]);
        let gv = sys.friction_values(|_, _| g).unwrap();
        let sol = solve_limit_given_friction(&sys, &gv, &SolverOptions::default()).unwrap();
        let scale = max_abs(&sol.raw.u).max(1e-300);
        prop_assert!(sol.gap.iter().all(|j| *j <= 1e-10 * scale.max(1.0)), "{:?}", sol.gap);
        prop_assert!(sol.sigma_n.iter().all(|s| *s <= 1e-10));
    }
}

#[test]
fn two_scale_norm_vanishes_only_at_zero() {
    let sys = limit_system(COMPRESSION);
    let fixed = sys.problem.fixed_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let w: Vec<f64> = fixed
            .iter()
            .map(|&f| if f { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        assert!(sys.n_norm(&w) > 0.0);
    }
    assert_eq!(sys.n_norm(&vec![0.0; fixed.len()]), 0.0);
}
