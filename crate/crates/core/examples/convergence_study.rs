//! Compares unfolded ε-solutions with the two-scale limit over a sequence
//! of ε, and runs the manufactured-solution variant of the same study.
//!
//! cargo run --release --example convergence_study

use periocrack::assembly::Stiffness;
use periocrack::contact::SolverOptions;
use periocrack::geometry::{build_reference_cell, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::twoscale::{convergence_against, limit_solution, manufactured_study, StudySetup};

fn main() -> periocrack::Result<()> {
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let setup = StudySetup {
        domain: BoxDomain::unit(2),
        gamma: vec![Face { axis: 0, upper: false }],
        stiffness: Stiffness::isotropic(1.0, 1.0),
        eta: 10.0,
        macro_h: 0.125,
        omega_scale: 0.5,
        opts: SolverOptions::default(),
    };
    let f = |_: &periocrack::geometry::Point| [-1.0, 0.3, 0.0];
    let g = 0.05;
    let eps = [0.5, 0.25, 0.125];

    let (sys, sol) = limit_solution(&cell, &setup, f, |_, _| g)?;
    let rep = convergence_against(&cell, &setup, &sys, &sol, f, |_, _| g, &eps)?;
    println!("{:>6} {:>12} {:>12} {:>12} {:>8}", "ε", "strain err", "Σ_ν err", "jump err", "order");
    for (k, e) in rep.errors.iter().enumerate() {
        let order = if k == 0 { String::new() } else { format!("{:.2}", rep.strain_orders[k - 1]) };
        println!("{:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}", rep.epsilons[k], e.strain, e.sigma, e.jump, order);
    }

    let omega = setup.domain.scaled(setup.omega_scale);
    let (man, orders) = manufactured_study(&cell, &sys, &sol, &setup.gamma, &omega, &eps)?;
    let man: Vec<String> = man.iter().map(|e| format!("{e:.4e}")).collect();
    let orders: Vec<String> = orders.iter().map(|o| format!("{o:.2}")).collect();
    println!("manufactured errors {}, orders {}", man.join(", "), orders.join(", "));
    Ok(())
}
