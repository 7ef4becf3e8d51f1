//! Shows how the strain-gradient solution approaches the plain elastic
//! contact solution as the regularization weight κ goes to zero.
//!
//! cargo run --release --example kappa_limit -- [epsilon]

use periocrack::assembly::Stiffness;
use periocrack::contact::{friction_values, kappa_limit_study, ContactSystem, SolverOptions};
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};

fn main() -> periocrack::Result<()> {
    let eps: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
    let sys = ContactSystem::new(&cell, &mesh, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, |_| [-1.0, 0.3, 0.0])?;
    let g = friction_values(&sys, |_| 0.05)?;
    let kappas = [1e-1, 1e-2, 1e-3, 1e-4];
    let st = kappa_limit_study(&cell, &mesh, &sys, &g, &kappas, &SolverOptions::default())?;
    println!("ε = {eps}, ‖U‖_H¹ = {:.6e} at κ = 0", st.reference_norm);
    let mut prev: Option<f64> = None;
    for (k, d) in st.kappas.iter().zip(&st.differences) {
        let rate = prev.map_or(String::new(), |p| format!("  decay per decade {:.2}", (p / d).log10()));
        println!("κ = {k:.0e}: ‖u_κ − U‖_H¹ = {d:.6e}{rate}");
        prev = Some(*d);
    }
    println!("strictly decreasing: {}", st.strictly_decreasing());
    Ok(())
}
