//! Slobodetsky seminorms of traces on the reference crack and their
//! behaviour under dilation, plus the crack norm of a tiled mesh.
//!
//! cargo run --release --example fractional_norms

use periocrack::assembly::interpolate;
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::spaces::{jump_trace, slobodetsky_seminorm, CrackNorm, FracQuadrature};

fn main() -> periocrack::Result<()> {
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.3, 0.5), 8))?;
    let space = cell.crack_space();
    let q = FracQuadrature::for_dim(2);
    // sample v(y) = y₀·y₁ at the P2 trace nodes: two vertices, then the midpoint
    let mut values = vec![0.0; space.n_nodes];
    for f in &space.facets {
        let (a, b) = (f.verts[0], f.verts[1]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        values[f.nodes[0]] = a[0] * a[1];
        values[f.nodes[1]] = b[0] * b[1];
        values[f.nodes[2]] = mid[0] * mid[1];
    }

    println!("reference crack: {} trace nodes, length {:.6}", space.n_nodes, space.measure());
    for alpha in [0.25, 0.5, 0.75] {
        let s1 = slobodetsky_seminorm(&space, alpha, &values, &q)?;
        print!("α = {alpha}: |v|_S = {s1:.6e}");
        for eps in [0.5, 0.25] {
            let scaled = space.mapped(eps, &[0.0; 3]);
            let se = slobodetsky_seminorm(&scaled, alpha, &values, &q)?;
            // a dilation by ε scales the squared seminorm by ε^(d−1−2α)
            let predicted = eps.powf((1.0 - 2.0 * alpha) / 2.0) * s1;
            print!(", ε = {eps}: {se:.6e} (predicted {predicted:.6e})");
        }
        println!();
    }

    // jump of a discontinuous field in the ε-weighted crack norm
    for eps in [0.5, 0.25, 0.125] {
        let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
        let mut u = interpolate(&mesh, |x| [x[1] * x[1], x[0], 0.0]);
        for cn in &mesh.crack_nodes {
            if !cn.is_tip() {
                u[cn.inner * 2] += 1.0;
            }
        }
        let norm = CrackNorm::for_mesh(&cell, eps, 0.5, &q)?;
        let j = jump_trace(&mesh, &u);
        println!(
            "ε = {eps}: ‖[u]‖_L² = {:.6e}, ‖[u]‖_H½ = {:.6e}, ‖[u]‖_H½ / ‖[u]‖_L² = {:.4}",
            norm.l2(&j),
            norm.norm(&j),
            norm.norm(&j) / norm.l2(&j)
        );
    }
    Ok(())
}
