//! Solves the given-friction contact problem on a tiled cracked square with
//! both solvers, prints the KKT residuals and writes the solution to VTK.
//!
//! cargo run --release --example signorini_contact -- [epsilon] [friction]

use periocrack::assembly::Stiffness;
use periocrack::contact::{friction_values, solve_given_friction, verify_kkt, ContactSystem, Method, SolverOptions};
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::io::{write_cracked_mesh, Field};

fn main() -> periocrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let eps: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let friction: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);

    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
    // compression with shear, so that some cracks close and some slip
    let sys = ContactSystem::new(&cell, &mesh, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, |_| [-1.0, 0.3, 0.0])?;
    let g = friction_values(&sys, |_| friction)?;
    println!("ε = {eps}: {} dofs, {} crack node pairs, G = {friction}", mesh.n_dofs(), sys.n_pairs());

    let mut last = None;
    for method in [Method::Dual, Method::ActiveSet] {
        let opts = SolverOptions { method, ..Default::default() };
        let sol = solve_given_friction(&sys, &g, &opts, None)?;
        let kkt = verify_kkt(&sys, &sol, &g);
        let n_contact = sol.sets.contact.iter().filter(|c| **c).count();
        let n_stick = sol.sets.stick.iter().filter(|c| **c).count();
        println!(
            "{method:?}: {} iterations, energy {:.12e}, {n_contact} in contact, {n_stick} sticking, max KKT residual {:.2e}",
            sol.log.len(),
            sol.energy,
            kkt.max()
        );
        println!(
            "    momentum {:.1e}, penetration {:.1e}, sign {:.1e}, complementarity {:.1e}, friction bound {:.1e}",
            kkt.momentum, kkt.penetration, kkt.sign, kkt.complementarity, kkt.friction_bound
        );
        last = Some(sol);
    }
    let sol = last.unwrap();
    let pressure = sol.lambda_n.iter().fold(0.0f64, |m, l| m.max(*l));
    println!("largest contact pressure {pressure:.6e}");

    let path = std::env::temp_dir().join("signorini_contact.vtk");
    write_cracked_mesh(&path, &mesh, &[Field { name: "u", comps: 2, values: &sol.u }], &[])?;
    println!("displacement written to {}", path.display());
    Ok(())
}
