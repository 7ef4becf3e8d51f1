//! CSV reports, legacy VTK meshes and MatrixMarket matrices.
//!
//! Numbers are written with Rust's shortest round-trip formatting so reruns
//! are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{nodes_per_element, CrackedMesh, Point};
use crate::linalg::Csr;
use crate::twoscale::MacroMesh;

pub fn num(v: f64) -> String {
    format!("{v:e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// CSV file whose first column is the config hash.
pub struct Report {
    w: csv::Writer<File>,
    hash: String,
}

impl Report {
    pub fn create(path: &Path, hash: &str, header: &[&str]) -> Result<Self> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut h = vec!["config_hash"];
        h.extend_from_slice(header);
        w.write_record(&h).map_err(csv_err)?;
        Ok(Self {
            w,
            hash: hash.to_string(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut r = vec![self.hash.clone()];
        r.extend(fields.into_iter().map(Into::into));
        self.w.write_record(&r).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Point or cell data array.
pub struct Field<'a> {
    pub name: &'a str,
    /// Components per entry; vectors are padded to 3 in the file.
    pub comps: usize,
    pub values: &'a [f64],
}

fn vtk_header(w: &mut impl Write, title: &str, coords: &[Point]) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", coords.len())?;
    for x in coords {
        writeln!(w, "{} {} {}", num(x[0]), num(x[1]), num(x[2]))?;
    }
    Ok(())
}

fn vtk_fields(w: &mut impl Write, kind: &str, n: usize, fields: &[Field]) -> Result<()> {
    if fields.is_empty() {
        return Ok(());
    }
    writeln!(w, "{kind}_DATA {n}")?;
    for f in fields {
        if f.values.len() != n * f.comps {
            return Err(Error::InvalidInput(format!(
                "field {} has {} values, expected {}",
                f.name,
                f.values.len(),
                n * f.comps
            )));
        }
        if f.comps == 1 {
            writeln!(w, "SCALARS {} double 1", f.name)?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in f.values {
                writeln!(w, "{}", num(*v))?;
            }
        } else if f.comps <= 3 {
            writeln!(w, "VECTORS {} double", f.name)?;
            for c in f.values.chunks(f.comps) {
                let mut v = [0.0; 3];
                v[..f.comps].copy_from_slice(c);
                writeln!(w, "{} {} {}", num(v[0]), num(v[1]), num(v[2]))?;
            }
        } else {
            writeln!(w, "FIELD {} 1", f.name)?;
            writeln!(w, "{} {} {} double", f.name, f.comps, n)?;
            for c in f.values.chunks(f.comps) {
                let s: Vec<String> = c.iter().map(|v| num(*v)).collect();
                writeln!(w, "{}", s.join(" "))?;
            }
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufWriter<File>> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Quadratic cells with the cell index `ξ` (−1 in the boundary layer) and
/// the inclusion flag as cell data, and the crack side (+1 inclusion side,
/// −1 matrix side, 0 elsewhere) as point data.
pub fn write_cracked_mesh(path: &Path, mesh: &CrackedMesh, point: &[Field], cell: &[Field]) -> Result<()> {
    let mut w = open(path)?;
    let d = mesh.dim;
    vtk_header(&mut w, "cracked mesh", &mesh.coords)?;
    let npe = nodes_per_element(d);
    // local P2 order to VTK order
    let (order, kind): (&[usize], u8) = if d == 2 {
        (&[0, 1, 2, 3, 5, 4], 22)
    } else {
        (&[0, 1, 2, 3, 4, 7, 5, 6, 8, 9], 24)
    };
    let ne = mesh.elems.len();
    writeln!(w, "CELLS {} {}", ne, ne * (npe + 1))?;
    for e in &mesh.elems {
        let ids: Vec<String> = order.iter().map(|&k| e.nodes[k].to_string()).collect();
        writeln!(w, "{} {}", npe, ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "{kind}")?;
    }
    let mut side = vec![0.0; mesh.n_nodes()];
    for cn in &mesh.crack_nodes {
        if !cn.is_tip() {
            side[cn.inner] = 1.0;
            side[cn.outer] = -1.0;
        }
    }
    let mut xi = vec![-1.0; ne * 3];
    let mut inner = vec![0.0; ne];
    for (k, e) in mesh.elems.iter().enumerate() {
        if let Some(c) = e.cell {
            for a in 0..3 {
                xi[k * 3 + a] = if a < d { mesh.cells[c][a] as f64 } else { 0.0 };
            }
        }
        inner[k] = if e.inner { 1.0 } else { 0.0 };
    }
    let mut pf = vec![Field {
        name: "side",
        comps: 1,
        values: &side,
    }];
    pf.extend(point.iter().map(|f| Field { ..*f }));
    let mut cf = vec![
        Field {
            name: "xi",
            comps: 3,
            values: &xi,
        },
        Field {
            name: "inclusion",
            comps: 1,
            values: &inner,
        },
    ];
    cf.extend(cell.iter().map(|f| Field { ..*f }));
    vtk_fields(&mut w, "CELL", ne, &cf)?;
    vtk_fields(&mut w, "POINT", mesh.n_nodes(), &pf)?;
    w.flush()?;
    Ok(())
}

/// Linear macro cells with point data.
pub fn write_macro_mesh(path: &Path, mm: &MacroMesh, point: &[Field]) -> Result<()> {
    let mut w = open(path)?;
    let d = mm.dim;
    vtk_header(&mut w, "macro mesh", &mm.coords)?;
    let ne = mm.elems.len();
    writeln!(w, "CELLS {} {}", ne, ne * (d + 2))?;
    for e in &mm.elems {
        let ids: Vec<String> = e[..=d].iter().map(|n| n.to_string()).collect();
        writeln!(w, "{} {}", d + 1, ids.join(" "))?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    let kind = if d == 2 { 5 } else { 10 };
    for _ in 0..ne {
        writeln!(w, "{kind}")?;
    }
    vtk_fields(&mut w, "POINT", mm.n_nodes(), point)?;
    w.flush()?;
    Ok(())
}

/// Coordinate format, one-based.
pub fn write_matrix_market(path: &Path, a: &Csr) -> Result<()> {
    let mut w = open(path)?;
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows, a.ncols, a.nnz())?;
    for r in 0..a.nrows {
        let (ix, vals) = a.row(r);
        for (c, v) in ix.iter().zip(vals) {
            writeln!(w, "{} {} {}", r + 1, c + 1, num(*v))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_matrix_market`].
pub fn read_matrix_market(path: &Path) -> Result<Csr> {
    let text = std::fs::read_to_string(path)?;
    let bad = || Error::InvalidInput(format!("malformed MatrixMarket file {}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let head: Vec<usize> = lines
        .next()
        .ok_or_else(bad)?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if head.len() != 3 {
        return Err(bad());
    }
    let mut t = crate::linalg::Triplets::with_capacity(head[2]);
    for l in lines {
        let p: Vec<&str> = l.split_whitespace().collect();
        if p.len() != 3 {
            return Err(bad());
        }
        let r: usize = p[0].parse().map_err(|_| bad())?;
        let c: usize = p[1].parse().map_err(|_| bad())?;
        let v: f64 = p[2].parse().map_err(|_| bad())?;
        if r == 0 || c == 0 {
            return Err(bad());
        }
        t.push(r - 1, c - 1, v);
    }
    Ok(t.into_csr(head[0], head[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reference_cell, CellSpec, CrackShape};
    use crate::linalg::Triplets;

    #[test]
    fn matrix_market_roundtrip() {
        let mut t = Triplets::with_capacity(3);
        t.push(0, 0, 1.5);
        t.push(2, 1, -1e-17);
        t.push(1, 2, 0.1 + 0.2);
        let a = t.into_csr(3, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        write_matrix_market(&p, &a).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap(), a);
    }

    #[test]
    fn vtk_counts_and_side_labels() {
        let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cell.vtk");
        let u = vec![0.0; cell.mesh.n_dofs()];
        write_cracked_mesh(
            &p,
            &cell.mesh,
            &[Field {
                name: "u",
                comps: 2,
                values: &u,
            }],
            &[],
        )
        .unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert!(s.contains(&format!("CELLS {} ", cell.n_elems())));
        assert!(s.contains(&format!("POINT_DATA {}", cell.n_nodes())));
        let interior = cell.mesh.crack_nodes.iter().filter(|c| !c.is_tip()).count();
        // the side block is the first point array
        let block = s.split("SCALARS side double 1\nLOOKUP_TABLE default\n").nth(1).unwrap();
        let vals: Vec<f64> = block.lines().take(cell.n_nodes()).map(|l| l.parse().unwrap()).collect();
        assert_eq!(vals.iter().filter(|&&v| v == 1.0).count(), interior);
        assert_eq!(vals.iter().filter(|&&v| v == -1.0).count(), interior);
    }

    #[test]
    fn report_prefixes_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut r = Report::create(&p, "abc", &["x"]).unwrap();
        r.row([num(0.1)]).unwrap();
        r.finish().unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "config_hash,x\nabc,1e-1\n");
    }
}
