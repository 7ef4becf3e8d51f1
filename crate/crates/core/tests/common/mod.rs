#![allow(dead_code)]

use periocrack::assembly::Stiffness;
use periocrack::contact::ContactSystem;
use periocrack::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, CrackedMesh, Face, Point, ReferenceCell};

pub const COMPRESSION: [f64; 3] = [-1.0, 0.3, 0.0];
pub const ETA: f64 = 10.0;

pub fn left_face() -> Vec<Face> {
    vec![Face { axis: 0, upper: false }]
}

pub fn flat_cell(divisions: usize) -> ReferenceCell {
    build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, divisions)).unwrap()
}

pub fn unit_mesh(cell: &ReferenceCell, eps: f64) -> CrackedMesh {
    tile_domain(BoxDomain::unit(2), &left_face(), cell, eps).unwrap()
}

pub fn iso() -> Stiffness {
    Stiffness::isotropic(1.0, 1.0)
}

pub fn system(cell: &ReferenceCell, mesh: &CrackedMesh, kappa: f64, f: [f64; 3]) -> ContactSystem {
    ContactSystem::new(cell, mesh, &iso(), kappa, ETA, move |_: &Point| f).unwrap()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `max / min` of positive values.
pub fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::MIN, f64::max);
    let lo = v.iter().cloned().fold(f64::MAX, f64::min);
    hi / lo
}
