//! Measures the discrete Korn, jump, trace and two-scale constants of the
//! reference cell and the Korn constants of tilings across ε.
//!
//! cargo run --release --example korn_constants

use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};
use periocrack::spaces::{jump_constant, korn_constant, strain_trace_constant, trace_constant, FracQuadrature, KornVariant};
use periocrack::twoscale::two_scale_korn_constant;

fn main() -> periocrack::Result<()> {
    let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8))?;
    let q = FracQuadrature::for_dim(2);
    println!("cell Korn (mod rigid)      {:.6}", korn_constant(&cell.mesh, KornVariant::Wirtinger)?.constant);
    println!("cell jump C₀               {:.6}", jump_constant(&cell, &q)?.constant);
    println!("cell strain trace C₁       {:.6}", strain_trace_constant(&cell, 10.0, &q)?.constant);
    println!("cell boundary trace        {:.6}", trace_constant(&cell, &q)?.constant);
    let ts = two_scale_korn_constant(&cell)?;
    println!("two-scale C*               {:.6} (cosine {:.6})", ts.constant, ts.cosine);
    for eps in [0.5, 0.25, 0.125] {
        let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps)?;
        let w = korn_constant(&mesh, KornVariant::Wirtinger)?;
        let g = korn_constant(&mesh, KornVariant::Dirichlet)?;
        println!(
            "ε = {eps:<6} Korn mod rigid {:.6} ({} Lanczos steps), Korn on H¹_Γ {:.6}",
            w.constant, w.iterations, g.constant
        );
    }
    Ok(())
}
