//! Runs the Coulomb friction fixed point `G ← μ|σ_ν(u_G)|` for several
//! friction coefficients and prints the outer history and contraction rate.
//!
//! cargo run --release --example coulomb_fixed_point -- [epsilon]

use periocrack::assembly::Stiffness;
use periocrack::contact::{coulomb_iterate, friction_values, ContactSystem, SolverOptions};
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};

fn main() -> periocrack::Result<()> {
    let eps: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
    let sys = ContactSystem::new(&cell, &mesh, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, |_| [-1.0, 0.3, 0.0])?;
    let opts = SolverOptions::default();
    for mu in [0.05, 0.2, 0.5] {
        let m = friction_values(&sys, |_| mu)?;
        // the inner solves resolve σ_ν to about 1e-10 relative; stop above that
        let r = coulomb_iterate(&sys, &m, 1e-9, 50, &opts)?;
        let hist: Vec<String> = r.history.iter().map(|h| format!("{h:.2e}")).collect();
        println!(
            "μ = {mu}: converged {} after {} outer steps, contraction {:.3e}, energy {:.10e}",
            r.converged,
            r.history.len(),
            r.contraction,
            r.solution.energy
        );
        println!("    ‖G_(k+1) − G_k‖: {}", hist.join(" "));
    }
    Ok(())
}
