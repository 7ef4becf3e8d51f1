//! Builds the reference cracked cell and its tiling of the unit square, then
//! writes both as VTK files with side labels.
//!
//! cargo run --release --example reference_cell -- [divisions] [epsilon] [out_dir]

use std::path::PathBuf;

use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::io::write_cracked_mesh;

fn main() -> periocrack::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let divisions = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let eps: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let out = args.get(3).map_or_else(|| std::env::temp_dir().join("reference-cell"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    for (name, shape) in [
        ("flat", CrackShape::Flat { half_length: 0.25 }),
        ("arc", CrackShape::circle(0.3, 0.5)),
    ] {
        let cell = build_reference_cell(CellSpec::new(2, shape, divisions))?;
        let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
        println!(
            "{name}: cell {} elements, {} nodes, crack length {:.6}, {} duplicated nodes",
            cell.n_elems(),
            cell.n_nodes(),
            cell.crack_measure(),
            cell.mesh.n_duplicated()
        );
        println!(
            "{name}: ε = {eps}, {} cells, {} dofs, |Ω̂_ε| + |Λ_ε| = {:.15}, |S_ε| = {:.6}",
            mesh.n_cells(),
            mesh.n_dofs(),
            mesh.interior_volume() + mesh.layer_volume(),
            mesh.crack_measure()
        );
        write_cracked_mesh(&out.join(format!("{name}_cell.vtk")), &cell.mesh, &[], &[])?;
        write_cracked_mesh(&out.join(format!("{name}_tiling.vtk")), &mesh, &[], &[])?;
    }
    println!("VTK files in {}", out.display());
    Ok(())
}
