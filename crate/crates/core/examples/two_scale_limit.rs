//! Assembles and solves the unfolded two-scale limit problem, with a given
//! friction bound and with Coulomb friction, and writes the macro field.
//!
//! cargo run --release --example two_scale_limit -- [macro_h]

use periocrack::assembly::Stiffness;
use periocrack::contact::SolverOptions;
use periocrack::geometry::{build_reference_cell, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::io::{write_macro_mesh, Field};
use periocrack::twoscale::{solve_limit_coulomb, solve_limit_given_friction, MacroMesh, TwoScaleSystem};

fn main() -> periocrack::Result<()> {
    let h: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let gamma = [Face { axis: 0, upper: false }];
    let opts = SolverOptions::default();
    let load = |_: &periocrack::geometry::Point| [-1.0, 0.3, 0.0];

    let mm = MacroMesh::structured(BoxDomain::unit(2), h, &gamma)?;
    let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 1.0), 0.0, 10.0, load)?;
    let g = sys.friction_values(|_, _| 0.05)?;
    let sol = solve_limit_given_friction(&sys, &g, &opts)?;
    let closed = sol.gap.iter().filter(|v| v.abs() <= 1e-12).count();
    println!(
        "given friction, κ = 0: {} macro nodes, {} dofs, energy {:.10e}, {closed} of {} crack pairs closed",
        sys.layout.n_macro,
        sys.n_dofs(),
        sol.energy,
        sol.gap.len()
    );

    let mm = MacroMesh::structured(BoxDomain::unit(2), h, &gamma)?;
    let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, load)?;
    let mu = sys.friction_values(|_, _| 0.2)?;
    let r = solve_limit_coulomb(&sys, &mu, None, 1e-10, 50, &opts)?;
    println!(
        "Coulomb μ = 0.2, κ = 1: converged {} after {} outer steps, contraction {:.3e}",
        r.converged,
        r.history.len(),
        r.contraction
    );
    println!("    𝐍-norm of (u, û) {:.6e}", sys.n_norm(&r.solution.raw.u));

    let path = std::env::temp_dir().join("two_scale_limit.vtk");
    write_macro_mesh(&path, &sys.macro_mesh, &[Field { name: "u", comps: 2, values: &r.solution.u }])?;
    println!("macro displacement written to {}", path.display());
    Ok(())
}
