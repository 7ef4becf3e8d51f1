mod common;

use common::*;
use periocrack::assembly::{
    assemble_elasticity, assemble_grad_gram, assemble_mass, assemble_regularization, assemble_strain_gram,
    contract, strain_basis, Stiffness,
};
use periocrack::geometry::{build_reference_cell, CellSpec, CrackShape};
use periocrack::spaces::{korn_constant, KornVariant, RigidBasis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sym(c: &[f64; 6], dim: usize) -> [[f64; 3]; 3] {
    let mut e = [[0.0; 3]; 3];
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            e[i][j] = c[k];
            e[j][i] = c[k];
            k += 1;
        }
    }
    e
}

#[test]
fn elasticity_and_regularization_are_symmetric() {
    let cell = flat_cell(4);
    let mesh = unit_mesh(&cell, 0.5);
    for s in [iso(), Stiffness::from_young(2.0, 0.3)] {
        let a = assemble_elasticity(&mesh, &s);
        assert!(a.asymmetry() <= 1e-12 * a.max_abs(), "{}", a.asymmetry());
    }
    let b = assemble_regularization(&mesh, ETA, &[]);
    assert!(b.asymmetry() <= 1e-12 * b.max_abs());
    let bc = assemble_regularization(&cell.mesh, ETA, &cell.periodic_pairs());
    assert!(bc.asymmetry() <= 1e-12 * bc.max_abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tensor_symmetries_and_bounds(lambda in 0.0f64..5.0, mu in 0.1f64..5.0, c in prop::array::uniform6(-1.0f64..1.0), dim in 2usize..4) {
        let s = Stiffness::isotropic(lambda, mu);
        let a = s.at(dim, &[0.3, 0.7, 0.1]);
        for i in 0..dim { for j in 0..dim { for k in 0..dim { for l in 0..dim {
            prop_assert_eq!(a[i][j][k][l], a[j][i][k][l]);
            prop_assert_eq!(a[i][j][k][l], a[k][l][i][j]);
        }}}}
        let (lo, hi) = s.bounds(dim).unwrap();
        let e = sym(&c, dim);
        let n2 = contract(&a, &e, &e);
        let ee: f64 = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| e[i][j] * e[i][j]).sum();
        prop_assert!(n2 >= lo * ee * (1.0 - 1e-12) - 1e-14);
        prop_assert!(n2 <= hi * ee * (1.0 + 1e-12) + 1e-14);
        prop_assert_eq!(strain_basis(dim).len(), dim * (dim + 1) / 2);
    }

    #[test]
    fn rigid_projection_is_idempotent(seed in 0u64..1000) {
        let cell = flat_cell(4);
        let m = assemble_mass(&cell.mesh);
        let rb = RigidBasis::new(&cell.mesh, &m).unwrap();
        let v = random_vec(cell.mesh.n_dofs(), seed);
        let p = rb.project(&v);
        let pp = rb.project(&p);
        let scale = max_abs(&p).max(1.0);
        prop_assert!(max_diff(&p, &pp) <= 1e-12 * scale);
        let r = rb.remove(&v);
        prop_assert!(max_abs(&rb.project(&r)) <= 1e-12 * max_abs(&v));
        // rigid fields carry no strain
        let e = assemble_strain_gram(&cell.mesh);
        let pp2: f64 = p.iter().map(|x| x * x).sum();
        prop_assert!(e.quad(&p).abs() <= 1e-12 * e.max_abs() * pp2);
    }
}

#[test]
fn korn_wirtinger_bounds_random_fields() {
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.3, 0.5), 4)).unwrap();
    let mesh = &cell.mesh;
    let c = korn_constant(mesh, KornVariant::Wirtinger).unwrap().constant;
    let m = assemble_mass(mesh);
    let h1 = m.add_scaled(&assemble_grad_gram(mesh), 1.0);
    let e = assemble_strain_gram(mesh);
    let rb = RigidBasis::new(mesh, &m).unwrap();
    for seed in 0..100 {
        let v = random_vec(mesh.n_dofs(), seed);
        let w = rb.remove(&v);
        let lhs = h1.quad(&w).sqrt();
        let rhs = c * e.quad(&v).sqrt();
        assert!(lhs <= rhs * (1.0 + 1e-8), "seed {seed}: {lhs} > {rhs}");
    }
}
