mod common;

use common::left_face;
use periocrack::assembly::{interpolate, CrackJumps};
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape};
use periocrack::spaces::jump_trace;
use proptest::prelude::*;

fn domain(a: f64, b: f64) -> BoxDomain {
    BoxDomain {
        dim: 2,
        lo: [0.0; 3],
        hi: [a, b, 0.0],
    }
}

fn cell(circle: bool) -> periocrack::geometry::ReferenceCell {
    let shape = if circle {
        CrackShape::circle(0.3, 0.5)
    } else {
        CrackShape::Flat { half_length: 0.25 }
    };
    build_reference_cell(CellSpec::new(2, shape, 4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiling_partitions_the_domain(a in 1.0f64..2.0, b in 1.0f64..2.0, k in 1u32..3, circle: bool) {
        let eps = 0.5f64.powi(k as i32);
        let cell = cell(circle);
        let m = tile_domain(domain(a, b), &left_face(), &cell, eps).unwrap();
        let total = m.interior_volume() + m.layer_volume();
        prop_assert!((total - a * b).abs() <= 1e-12 * a * b, "{total} vs {}", a * b);
        let expected = m.n_cells() as f64 * eps * cell.crack_measure();
        prop_assert!((m.crack_measure() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn single_valued_fields_have_no_jump(c in prop::array::uniform6(-2.0f64..2.0), circle: bool) {
        let cell = cell(circle);
        let m = tile_domain(domain(1.0, 1.0), &left_face(), &cell, 0.5).unwrap();
        let u = interpolate(&m, |x| [
            c[0] + c[1] * x[0] * x[1] + c[2] * x[1] * x[1],
            c[3] * x[0] + c[4] * x[0] * x[0] + c[5] * x[1],
            0.0,
        ]);
        prop_assert!(jump_trace(&m, &u).iter().all(|v| *v == 0.0));
        let j = CrackJumps::new(&m);
        prop_assert!(j.normal(&u).iter().all(|v| *v == 0.0));
        prop_assert!(j.tangential(&u).iter().all(|t| t[0] == 0.0 && t[1] == 0.0));
    }
}
