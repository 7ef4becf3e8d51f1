mod common;

use common::*;
use periocrack::assembly::interpolate;
use periocrack::contact::{
    coulomb_iterate, friction_values, solve_given_friction, verify_kkt, ContactSystem, Method, SolverOptions,
};
use periocrack::geometry::ReferenceCell;
use proptest::prelude::*;

fn setup(f: [f64; 3]) -> (ReferenceCell, ContactSystem) {
    let cell = flat_cell(4);
    let mesh = unit_mesh(&cell, 0.5);
    let sys = system(&cell, &mesh, 1.0, f);
    (cell, sys)
}

fn load() -> impl Strategy<Value = [f64; 3]> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| [a, b, 0.0])
}

fn active_set() -> SolverOptions {
    SolverOptions {
        method: Method::ActiveSet,
        ..SolverOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn kkt_and_sign_structure_on_random_loads(f in load(), g in 0.0f64..0.5) {
        let (_, sys) = setup(f);
        let gv = vec![g; sys.n_pairs()];
        for method in [Method::Dual, Method::ActiveSet] {
            let o = SolverOptions { method, ..SolverOptions::default() };
            let sol = solve_given_friction(&sys, &gv, &o, None).unwrap();
            let k = verify_kkt(&sys, &sol, &gv);
            prop_assert!(k.max() <= 1e-8, "{method:?}: {k:?}");
            prop_assert!(sol.lambda_n.iter().all(|l| *l >= -1e-10));
        }
    }

    #[test]
    fn equilibrium_against_jump_free_tests(f in load(), seed in 0u64..1000) {
        let (cell, sys) = setup(f);
        let mesh = unit_mesh(&cell, 0.5);
        let sol = solve_given_friction(&sys, &vec![0.1; sys.n_pairs()], &SolverOptions::default(), None).unwrap();
        let r: Vec<f64> = sys.stiffness.matvec(&sol.u).iter().zip(&sys.load).map(|(a, b)| a - b).collect();
        let s = seed as f64;
        // vanishes on x₁ = 0, single valued across every crack
        let v = interpolate(&mesh, |x| [
            x[0] * (1.0 + (s + x[1]).sin()),
            x[0] * (x[1] - 0.5 * s.cos()),
            0.0,
        ]);
        let res: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
        let scale = sys.h1_norm(&v) * sys.f_norm.max(1e-300);
        prop_assert!(res.abs() <= 1e-9 * scale, "{res} vs {scale}");
    }

    #[test]
    fn active_set_energy_is_monotone(f in load(), g in 0.0f64..0.5) {
        let (_, sys) = setup(f);
        let sol = solve_given_friction(&sys, &vec![g; sys.n_pairs()], &active_set(), None).unwrap();
        for w in sol.log.windows(2) {
            prop_assert!(w[1].energy <= w[0].energy + 1e-14 * w[0].energy.abs(), "{:?}", sol.log);
        }
    }

    #[test]
    fn coulomb_solution_is_positively_homogeneous(t in 0.1f64..10.0, mu in 0.0f64..0.4) {
        let (cell, sys) = setup(COMPRESSION);
        let mesh = unit_mesh(&cell, 0.5);
        let scaled = system(&cell, &mesh, 1.0, COMPRESSION.map(|v| t * v));
        let m = friction_values(&sys, |_| mu).unwrap();
        let opts = SolverOptions::default();
        let a = coulomb_iterate(&sys, &m, 1e-10, 100, &opts).unwrap();
        let b = coulomb_iterate(&scaled, &m, 1e-10, 100, &opts).unwrap();
        let ta: Vec<f64> = a.solution.u.iter().map(|v| t * v).collect();
        prop_assert!(max_diff(&b.solution.u, &ta) <= 1e-8 * max_abs(&ta));
    }
}

#[test]
fn starting_sets_do_not_change_the_solution() {
    let (_, sys) = setup(COMPRESSION);
    let g = vec![0.1; sys.n_pairs()];
    let a = solve_given_friction(&sys, &g, &SolverOptions::default(), None).unwrap();
    let mut warm = a.sets.clone();
    warm.contact.iter_mut().for_each(|c| *c = !*c);
    let b = solve_given_friction(&sys, &g, &active_set(), Some(&warm)).unwrap();
    let d: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
    assert!(sys.n_eps(&d) <= 1e-8 * sys.n_eps(&a.u));
}
