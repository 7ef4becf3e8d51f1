//! Checks the exact unfolding identities and the fractional scaling
//! identities on random fields and prints one line per check.
//!
//! cargo run --release --example unfolding_identities -- [fields] [seed]

use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::spaces::FracQuadrature;
use periocrack::unfolding::{verify_exact, verify_scaling};

fn main() -> periocrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let fields = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.3, 0.5), 8))?;
    let q = FracQuadrature::for_dim(2);
    println!("{:<28} {:>6} {:>5} {:>14} {:>14} {:>10}", "identity", "ε", "α", "lhs", "rhs", "rel err");
    for eps in [0.5, 0.25, 0.125] {
        let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
        let mut checks = verify_exact(&cell, &mesh, fields, seed)?;
        if eps > 0.2 {
            checks.extend(verify_scaling(&cell, &mesh, &[0.25, 0.5, 0.75], fields, seed, &q)?);
        }
        let mut worst = 0.0f64;
        for c in &checks {
            worst = worst.max(c.rel_err);
        }
        // one representative line per identity
        let mut seen = Vec::new();
        for c in checks.iter().filter(|c| {
            let key = (c.identity.clone(), c.alpha.map(|a| (a * 100.0) as i64));
            if seen.contains(&key) {
                false
            } else {
                seen.push(key);
                true
            }
        }) {
            let alpha = c.alpha.map_or(String::new(), |a| format!("{a}"));
            println!(
                "{:<28} {:>6} {:>5} {:>14.6e} {:>14.6e} {:>10.2e}",
                c.identity, c.epsilon, alpha, c.lhs, c.rhs, c.rel_err
            );
        }
        println!("ε = {eps}: {} checks, worst relative error {worst:.2e}\n", checks.len());
    }
    Ok(())
}
