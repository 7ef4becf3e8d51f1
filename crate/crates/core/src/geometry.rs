//! Reference cracked cell, periodic tiling and crack node duplication.
//!
//! Both the reference cell and the tiled domain come from one structured
//! builder: a tensor grid with `n` divisions per period cell, split into Kuhn
//! simplices, with the grid inside every cell pulled onto the inclusion shape by
//! a radial map that is the identity on the cell boundary. Cells therefore
//! match across interfaces and every cell is an exact scaled copy of the
//! reference cell, so unfolding is pure re-indexing.
//!
//! Node and element orderings are cell-major: cell `c` owns elements
//! `c * ref_elems .. (c + 1) * ref_elems`, and the `r`-th reference node of cell
//! `c` is `cell_nodes[c * ref_nodes + r]`.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};

/// Up to 3D points stored uniformly; unused trailing coordinates are zero.
pub type Point = [f64; 3];

/// Shape of the inclusion boundary and the crack carved out of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrackShape {
    /// `|y - c|_p = radius` with the crack the part of the boundary within
    /// polar angle `fraction * π` of `e_d` (a cap of area fraction `fraction`
    /// in 3D). `exponent = 2` is the circle or sphere.
    Superellipse {
        radius: f64,
        exponent: f64,
        fraction: f64,
    },
    /// Planar crack on `y₁ = 1/2` with `|y_j - 1/2| ≤ half_length`, `j ≥ 2`.
    /// The half space `y₁ < 1/2` plays the inclusion, so `ν = e₁`.
    Flat { half_length: f64 },
}

impl CrackShape {
    pub fn circle(radius: f64, fraction: f64) -> Self {
        CrackShape::Superellipse {
            radius,
            exponent: 2.0,
            fraction,
        }
    }

    /// Signed level set, negative inside the inclusion.
    pub fn level_set(&self, y: &Point, dim: usize) -> f64 {
        match *self {
            CrackShape::Superellipse {
                radius, exponent, ..
            } => {
                let mut s = 0.0;
                for k in 0..dim {
                    s += (y[k] - 0.5).abs().powf(exponent);
                }
                s.powf(1.0 / exponent) - radius
            }
            CrackShape::Flat { .. } => y[0] - 0.5,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            CrackShape::Superellipse {
                radius,
                exponent,
                fraction,
            } => {
                if !(exponent >= 2.0) || !exponent.is_finite() {
                    return Err(invalid(format!(
                        "superellipse exponent {exponent} < 2 gives a boundary that is not C^1,1"
                    )));
                }
                if !(radius > 0.0) {
                    return Err(invalid("inclusion radius must be positive"));
                }
                // the extreme points of the superellipse sit at distance `radius`
                // from the center along the axes
                if radius >= 0.5 {
                    return Err(Error::Geometry(format!(
                        "inclusion of radius {radius} touches the cell boundary"
                    )));
                }
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(invalid(format!("crack fraction {fraction} outside (0, 1]")));
                }
            }
            CrackShape::Flat { half_length } => {
                if !(half_length > 0.0) {
                    return Err(invalid("flat crack half length must be positive"));
                }
                if half_length >= 0.5 {
                    return Err(Error::Geometry(format!(
                        "flat crack of half length {half_length} touches the cell boundary"
                    )));
                }
                if dim < 2 {
                    return Err(invalid("flat crack needs d ≥ 2"));
                }
            }
        }
        Ok(())
    }
}

/// Description of the reference cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSpec {
    pub dim: usize,
    pub shape: CrackShape,
    /// Grid divisions per cell edge; a positive multiple of 4.
    pub divisions: usize,
    /// Keep the crack faces glued (no duplication); used for oracles.
    pub glued: bool,
}

impl CellSpec {
    pub fn new(dim: usize, shape: CrackShape, divisions: usize) -> Self {
        Self {
            dim,
            shape,
            divisions,
            glued: false,
        }
    }

    /// Divisions for a target mesh size `h`, rounded up to a multiple of 4.
    pub fn divisions_for_h(h: f64) -> usize {
        let n = (1.0 / h).ceil().max(4.0) as usize;
        n.div_ceil(4) * 4
    }

    pub fn glued(mut self) -> Self {
        self.glued = true;
        self
    }
}

/// A quadratic simplex. `nodes[0..=dim]` are vertices, then edge midpoints in
/// the order (0,1),(0,2),(1,2) for triangles and
/// (0,1),(0,2),(0,3),(1,2),(1,3),(2,3) for tetrahedra.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub nodes: [usize; 10],
    /// Cell index, or `None` in the boundary layer.
    pub cell: Option<usize>,
    /// Element lies on the inclusion side.
    pub inner: bool,
}

pub const EDGES_2D: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
pub const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

pub fn edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

pub fn nodes_per_element(dim: usize) -> usize {
    (dim + 1) * (dim + 2) / 2
}

pub fn nodes_per_facet(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Local P2 node indices on the facet opposite vertex `k`, ordered as a
/// `(dim-1)`-simplex: vertices ascending, then edges in canonical order.
pub fn facet_local_nodes(dim: usize, k: usize) -> Vec<usize> {
    let verts: Vec<usize> = (0..=dim).filter(|&v| v != k).collect();
    let mut out = verts.clone();
    let es = edges(dim);
    let sub_edges: &[(usize, usize)] = if dim == 2 { &[(0, 1)] } else { &EDGES_2D };
    for &(a, b) in sub_edges {
        let (va, vb) = (verts[a], verts[b]);
        let e = es
            .iter()
            .position(|&(p, q)| (p, q) == (va.min(vb), va.max(vb)))
            .unwrap();
        out.push(dim + 1 + e);
    }
    out
}

/// A facet of a crack-trace space: geometry plus local trace node indices.
#[derive(Debug, Clone, Copy)]
pub struct TraceFacet {
    pub verts: [Point; 3],
    pub nodes: [usize; 6],
}

/// Continuous quadratic trace space on a surface made of mesh facets.
#[derive(Debug, Clone)]
pub struct TraceSpace {
    /// Ambient dimension; facets are `(dim-1)`-simplices.
    pub dim: usize,
    pub n_nodes: usize,
    pub facets: Vec<TraceFacet>,
}

impl TraceSpace {
    pub fn measure(&self) -> f64 {
        self.facets
            .iter()
            .map(|f| facet_measure(self.dim, &f.verts))
            .sum()
    }

    pub fn nodes_per_facet(&self) -> usize {
        nodes_per_facet(self.dim)
    }

    /// Image under `y ↦ scale * (shift + y)`.
    pub fn mapped(&self, scale: f64, shift: &Point) -> TraceSpace {
        let mut out = self.clone();
        for f in &mut out.facets {
            for v in &mut f.verts {
                for k in 0..3 {
                    v[k] = scale * (shift[k] + v[k]);
                }
            }
        }
        out
    }
}

pub fn facet_measure(dim: usize, v: &[Point; 3]) -> f64 {
    let a = sub(&v[1], &v[0]);
    if dim == 2 {
        norm(&a)
    } else {
        let b = sub(&v[2], &v[0]);
        0.5 * norm(&cross(&a, &b))
    }
}

/// Unit normal of a facet, oriented away from `away_from`.
pub fn facet_normal(dim: usize, v: &[Point; 3], away_from: &Point) -> Point {
    let a = sub(&v[1], &v[0]);
    let mut n = if dim == 2 {
        [a[1], -a[0], 0.0]
    } else {
        cross(&a, &sub(&v[2], &v[0]))
    };
    let l = norm(&n);
    n.iter_mut().for_each(|x| *x /= l);
    let c = sub(&v[0], away_from);
    if dot3(&n, &c) < 0.0 {
        n.iter_mut().for_each(|x| *x = -*x);
    }
    n
}

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot3(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Crack facet with its two sides.
#[derive(Debug, Clone, Copy)]
pub struct CrackFacet {
    pub outer_elem: usize,
    pub outer_face: usize,
    pub inner_elem: usize,
    pub inner_face: usize,
    /// Unit normal pointing from the inclusion into the matrix.
    pub normal: Point,
    pub measure: f64,
    /// Indices into the crack node list, in facet P2 order.
    pub trace: [usize; 6],
}

/// One P2 node on the crack; `inner == outer` at crack tips.
#[derive(Debug, Clone, Copy)]
pub struct CrackNode {
    pub outer: usize,
    pub inner: usize,
    /// Unit normal averaged over adjacent crack facets.
    pub normal: Point,
}

impl CrackNode {
    pub fn is_tip(&self) -> bool {
        self.inner == self.outer
    }
}

/// Facet of the inclusion boundary, cracked or glued.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceFacet {
    pub outer_elem: usize,
    pub outer_face: usize,
    pub inner_elem: usize,
    pub inner_face: usize,
    pub normal: Point,
    pub measure: f64,
    pub cracked: bool,
    /// Indices into the interface node list.
    pub trace: [usize; 6],
}

/// Axis-aligned box `Π (lo_k, hi_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BoxDomain {
    pub fn unit(dim: usize) -> Self {
        let mut hi = [0.0; 3];
        hi[..dim].iter_mut().for_each(|x| *x = 1.0);
        Self {
            dim,
            lo: [0.0; 3],
            hi,
        }
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|k| (self.hi[k] - self.lo[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Concentric box scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for k in 0..self.dim {
            let c = 0.5 * (self.lo[k] + self.hi[k]);
            let h = 0.5 * (self.hi[k] - self.lo[k]) * factor;
            out.lo[k] = c - h;
            out.hi[k] = c + h;
        }
        out
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|k| x[k] > self.lo[k] && x[k] < self.hi[k])
    }

    pub fn contains_closed(&self, x: &Point, tol: f64) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lo[k] - tol && x[k] <= self.hi[k] + tol)
    }
}

/// A face of the domain box: `axis` and `upper` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub fn parse(s: &str) -> Result<Face> {
        let b = s.as_bytes();
        if b.len() != 2 {
            return Err(invalid(format!(
                "face selector '{s}' is not of the form x0/x1/y0/…"
            )));
        }
        let axis = match b[0] {
            b'x' => 0,
            b'y' => 1,
            b'z' => 2,
            _ => return Err(invalid(format!("unknown axis in face selector '{s}'"))),
        };
        let upper = match b[1] {
            b'0' => false,
            b'1' => true,
            _ => return Err(invalid(format!("unknown side in face selector '{s}'"))),
        };
        Ok(Face { axis, upper })
    }
}

/// Cracked mesh: either the reference cell (ε = 1, one cell, Ω = Y) or a
/// tiling of a box.
#[derive(Debug, Clone)]
pub struct CrackedMesh {
    pub dim: usize,
    pub epsilon: f64,
    pub domain: BoxDomain,
    pub coords: Vec<Point>,
    pub elems: Vec<Element>,
    /// Integer translates `ξ ∈ Ξ_ε`.
    pub cells: Vec<[i64; 3]>,
    pub ref_elems: usize,
    pub ref_nodes: usize,
    pub cell_nodes: Vec<usize>,
    /// Boundary-layer elements occupy `lambda_elems..elems.len()`.
    pub lambda_elems: usize,
    /// Crack nodes, `ref_crack_nodes` per cell, cell-major.
    pub crack_nodes: Vec<CrackNode>,
    pub ref_crack_nodes: usize,
    /// Crack facets, `ref_crack_facets` per cell, cell-major.
    pub crack_facets: Vec<CrackFacet>,
    pub ref_crack_facets: usize,
    /// Inclusion boundary facets and nodes, cell-major.
    pub interface_facets: Vec<InterfaceFacet>,
    pub ref_interface_facets: usize,
    pub interface_nodes: Vec<usize>,
    pub ref_interface_nodes: usize,
    /// Nodes on `Γ`.
    pub dirichlet: Vec<bool>,
    pub gamma: Vec<Face>,
    pub shape: CrackShape,
    pub divisions: usize,
    pub glued: bool,
    logical: Vec<[i64; 3]>,
}

/// The reference cell `Y* = Y \ S`.
#[derive(Debug, Clone)]
pub struct ReferenceCell {
    pub spec: CellSpec,
    pub mesh: CrackedMesh,
    /// Reference node keys (doubled logical index, duplicate flag).
    keys: Vec<([i64; 3], bool)>,
    /// Local element topology in terms of node keys.
    elem_keys: Vec<(Vec<usize>, bool)>,
}

impl ReferenceCell {
    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.coords.len()
    }

    pub fn n_elems(&self) -> usize {
        self.mesh.elems.len()
    }

    /// `|S|` by facet summation.
    pub fn crack_measure(&self) -> f64 {
        self.mesh.crack_facets.iter().map(|f| f.measure).sum()
    }

    pub fn crack_space(&self) -> TraceSpace {
        self.mesh.crack_space(0)
    }

    pub fn interface_space(&self) -> TraceSpace {
        self.mesh.interface_space(0)
    }

    /// Quadratic trace space on `∂Y`.
    pub fn boundary_space(&self) -> TraceSpace {
        let m = &self.mesh;
        let d = m.dim;
        let n2 = 2 * m.divisions as i64;
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut facets = Vec::new();
        for el in &m.elems {
            for k in 0..=d {
                let ln = facet_local_nodes(d, k);
                let nodes: Vec<usize> = ln.iter().map(|&l| el.nodes[l]).collect();
                let on_face = (0..d).any(|ax| {
                    nodes.iter().all(|&g| m.logical[g][ax] == 0)
                        || nodes.iter().all(|&g| m.logical[g][ax] == n2)
                });
                if !on_face {
                    continue;
                }
                let mut tf = TraceFacet {
                    verts: [[0.0; 3]; 3],
                    nodes: [0; 6],
                };
                for (i, &g) in nodes.iter().enumerate() {
                    let next = local.len();
                    tf.nodes[i] = *local.entry(g).or_insert(next);
                    if i < d {
                        tf.verts[i] = m.coords[g];
                    }
                }
                facets.push(tf);
            }
        }
        TraceSpace {
            dim: d,
            n_nodes: local.len(),
            facets,
        }
    }

    /// Mesh nodes of the `∂Y` trace space in trace order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let m = &self.mesh;
        let d = m.dim;
        let n2 = 2 * m.divisions as i64;
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut order = Vec::new();
        for el in &m.elems {
            for k in 0..=d {
                let ln = facet_local_nodes(d, k);
                let nodes: Vec<usize> = ln.iter().map(|&l| el.nodes[l]).collect();
                let on_face = (0..d).any(|ax| {
                    nodes.iter().all(|&g| m.logical[g][ax] == 0)
                        || nodes.iter().all(|&g| m.logical[g][ax] == n2)
                });
                if !on_face {
                    continue;
                }
                for &g in &nodes {
                    if !local.contains_key(&g) {
                        local.insert(g, order.len());
                        order.push(g);
                    }
                }
            }
        }
        order
    }

    /// Pairs of nodes identified by periodicity, `(slave, master)` with the
    /// master on the lower face of every axis where they differ.
    pub fn periodic_pairs(&self) -> Vec<(usize, usize)> {
        let m = &self.mesh;
        let n2 = 2 * m.divisions as i64;
        let mut by_key: HashMap<[i64; 3], usize> = HashMap::new();
        for (i, k) in m.logical.iter().enumerate() {
            if !self.keys[i].1 {
                by_key.insert(*k, i);
            }
        }
        let mut pairs = Vec::new();
        for (i, k) in m.logical.iter().enumerate() {
            if self.keys[i].1 {
                continue;
            }
            let mut master = *k;
            let mut moved = false;
            for ax in 0..m.dim {
                if master[ax] == n2 {
                    master[ax] = 0;
                    moved = true;
                }
            }
            if moved {
                pairs.push((i, by_key[&master]));
            }
        }
        pairs
    }

    /// Logical (doubled) index of a reference node.
    pub fn logical(&self, node: usize) -> [i64; 3] {
        self.mesh.logical[node]
    }
}

impl CrackedMesh {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.coords.len() * self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_node(&self, cell: usize, r: usize) -> usize {
        self.cell_nodes[cell * self.ref_nodes + r]
    }

    pub fn cell_elem_range(&self, cell: usize) -> std::ops::Range<usize> {
        cell * self.ref_elems..(cell + 1) * self.ref_elems
    }

    pub fn cell_crack_nodes(&self, cell: usize) -> &[CrackNode] {
        &self.crack_nodes[cell * self.ref_crack_nodes..(cell + 1) * self.ref_crack_nodes]
    }

    pub fn cell_crack_facets(&self, cell: usize) -> &[CrackFacet] {
        &self.crack_facets[cell * self.ref_crack_facets..(cell + 1) * self.ref_crack_facets]
    }

    /// Vertex coordinates of an element.
    pub fn elem_verts(&self, e: usize) -> [Point; 4] {
        let el = &self.elems[e];
        let mut v = [[0.0; 3]; 4];
        for i in 0..=self.dim {
            v[i] = self.coords[el.nodes[i]];
        }
        v
    }

    /// Physical crack trace space of one cell with local node numbering equal
    /// to the reference one.
    pub fn crack_space(&self, cell: usize) -> TraceSpace {
        let base = cell * self.ref_crack_nodes;
        let facets = self
            .cell_crack_facets(cell)
            .iter()
            .map(|f| {
                let mut tf = TraceFacet {
                    verts: [[0.0; 3]; 3],
                    nodes: [0; 6],
                };
                for i in 0..nodes_per_facet(self.dim) {
                    tf.nodes[i] = f.trace[i] - base;
                }
                for i in 0..self.dim {
                    tf.verts[i] = self.coords[self.crack_nodes[f.trace[i]].outer];
                }
                tf
            })
            .collect();
        TraceSpace {
            dim: self.dim,
            n_nodes: self.ref_crack_nodes,
            facets,
        }
    }

    /// Physical inclusion-boundary trace space of one cell.
    pub fn interface_space(&self, cell: usize) -> TraceSpace {
        let base = cell * self.ref_interface_nodes;
        let fs = &self.interface_facets
            [cell * self.ref_interface_facets..(cell + 1) * self.ref_interface_facets];
        let facets = fs
            .iter()
            .map(|f| {
                let mut tf = TraceFacet {
                    verts: [[0.0; 3]; 3],
                    nodes: [0; 6],
                };
                for i in 0..nodes_per_facet(self.dim) {
                    tf.nodes[i] = f.trace[i] - base;
                }
                for i in 0..self.dim {
                    tf.verts[i] = self.coords[self.interface_nodes[f.trace[i]]];
                }
                tf
            })
            .collect();
        TraceSpace {
            dim: self.dim,
            n_nodes: self.ref_interface_nodes,
            facets,
        }
    }

    /// `|S_ε|`.
    pub fn crack_measure(&self) -> f64 {
        self.crack_facets.iter().map(|f| f.measure).sum()
    }

    /// Measure of the union of cells `Ω̂_ε`.
    pub fn interior_volume(&self) -> f64 {
        (0..self.lambda_elems).map(|e| self.elem_volume(e)).sum()
    }

    /// Measure of the boundary layer `Λ_ε`.
    pub fn layer_volume(&self) -> f64 {
        (self.lambda_elems..self.elems.len())
            .map(|e| self.elem_volume(e))
            .sum()
    }

    pub fn elem_volume(&self, e: usize) -> f64 {
        simplex_volume(self.dim, &self.elem_verts(e))
    }

    /// Dofs of Dirichlet nodes.
    pub fn dirichlet_dofs(&self) -> Vec<bool> {
        let d = self.dim;
        let mut out = vec![false; self.n_dofs()];
        for (i, &b) in self.dirichlet.iter().enumerate() {
            if b {
                for c in 0..d {
                    out[i * d + c] = true;
                }
            }
        }
        out
    }

    /// Number of duplicated (non-tip) crack nodes.
    pub fn n_duplicated(&self) -> usize {
        self.crack_nodes.iter().filter(|n| !n.is_tip()).count()
    }

    /// Center of cell `c` in physical coordinates.
    pub fn cell_center(&self, c: usize) -> Point {
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.epsilon * (self.cells[c][k] as f64 + 0.5);
        }
        x
    }

    /// Cell index of translate `ξ`, if present.
    pub fn cell_index(&self, xi: &[i64; 3]) -> Option<usize> {
        self.cells.iter().position(|c| c == xi)
    }
}

/// Signed volume of a simplex.
pub fn simplex_signed_volume(dim: usize, v: &[Point; 4]) -> f64 {
    let a = sub(&v[1], &v[0]);
    let b = sub(&v[2], &v[0]);
    if dim == 2 {
        0.5 * (a[0] * b[1] - a[1] * b[0])
    } else {
        let c = sub(&v[3], &v[0]);
        dot3(&a, &cross(&b, &c)) / 6.0
    }
}

pub fn simplex_volume(dim: usize, v: &[Point; 4]) -> f64 {
    simplex_signed_volume(dim, v).abs()
}

/// Radial map of the unit cell pulling the logical core box `[1/4, 3/4]^d`
/// onto the inclusion; the identity on `∂Y`.
fn radial_map(y: &Point, dim: usize, radius: f64, p: f64) -> Point {
    let mut q = [0.0; 3];
    let mut dinf: f64 = 0.0;
    for k in 0..dim {
        q[k] = y[k] - 0.5;
        dinf = dinf.max(q[k].abs());
    }
    if dinf >= 0.5 || dinf == 0.0 {
        return *y;
    }
    for k in 0..dim {
        q[k] /= dinf;
    }
    let np: f64 = (0..dim)
        .map(|k| q[k].abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p);
    let mut out = [0.0; 3];
    if dinf <= 0.25 {
        let s = dinf / 0.25;
        for k in 0..dim {
            out[k] = 0.5 + s * radius * (s * q[k] / np + (1.0 - s) * q[k]);
        }
    } else {
        let t = (dinf - 0.25) / 0.25;
        for k in 0..dim {
            out[k] = 0.5 + (1.0 - t) * radius * q[k] / np + t * q[k] * 0.5;
        }
    }
    out
}

/// Kuhn split of the unit hypercube, vertex offsets per simplex.
fn kuhn_simplices(dim: usize) -> Vec<Vec<[i64; 3]>> {
    let perms: Vec<Vec<usize>> = if dim == 2 {
        vec![vec![0, 1], vec![1, 0]]
    } else {
        vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ]
    };
    perms
        .into_iter()
        .map(|perm| {
            let mut v = vec![[0i64; 3]];
            let mut cur = [0i64; 3];
            for &ax in &perm {
                cur[ax] += 1;
                v.push(cur);
            }
            v
        })
        .collect()
}

fn on_core_boundary(keys: &[[i64; 3]], dim: usize, n: i64) -> bool {
    let lo = n / 2;
    let hi = 3 * n / 2;
    let inside = keys
        .iter()
        .all(|k| (0..dim).all(|a| k[a] >= lo && k[a] <= hi));
    inside && (0..dim).any(|a| keys.iter().all(|k| k[a] == lo) || keys.iter().all(|k| k[a] == hi))
}

/// Builds the reference cell.
pub fn build_reference_cell(spec: CellSpec) -> Result<ReferenceCell> {
    let dim = spec.dim;
    if dim != 2 && dim != 3 {
        return Err(invalid(format!("dimension {dim} not supported")));
    }
    spec.shape.validate(dim)?;
    let n = spec.divisions;
    if n == 0 || n % 4 != 0 {
        return Err(invalid(format!(
            "divisions {n} must be a positive multiple of 4"
        )));
    }
    if let CrackShape::Flat { half_length } = spec.shape {
        let m = half_length * n as f64;
        if (m - m.round()).abs() > 1e-9 {
            return Err(Error::Geometry(format!(
                "flat crack half length {half_length} is not aligned with {n} divisions"
            )));
        }
    }
    let ni = n as i64;
    let vcoord = |k: &[i64; 3]| -> Point {
        let mut y = [0.0; 3];
        for a in 0..dim {
            y[a] = k[a] as f64 / (2.0 * n as f64);
        }
        match spec.shape {
            CrackShape::Superellipse {
                radius, exponent, ..
            } => radial_map(&y, dim, radius, exponent),
            CrackShape::Flat { .. } => y,
        }
    };

    // simplices as doubled vertex keys
    let kuhn = kuhn_simplices(dim);
    let mut simplices: Vec<(Vec<[i64; 3]>, bool)> = Vec::new();
    let nb = [ni, ni, if dim == 3 { ni } else { 1 }];
    for bz in 0..nb[2] {
        for by in 0..nb[1] {
            for bx in 0..nb[0] {
                let base = [bx, by, if dim == 3 { bz } else { 0 }];
                for s in &kuhn {
                    let mut verts: Vec<[i64; 3]> = s
                        .iter()
                        .map(|o| {
                            [
                                2 * (base[0] + o[0]),
                                2 * (base[1] + o[1]),
                                2 * (base[2] + o[2]),
                            ]
                        })
                        .collect();
                    let mut vc = [[0.0; 3]; 4];
                    for (i, k) in verts.iter().enumerate() {
                        vc[i] = vcoord(k);
                    }
                    let vol = simplex_signed_volume(dim, &vc);
                    if vol < 0.0 {
                        verts.swap(1, 2);
                    }
                    let mut c = [0i64; 3];
                    for k in &verts {
                        for a in 0..3 {
                            c[a] += k[a];
                        }
                    }
                    // centroid in doubled units is c / (dim + 1)
                    let inner = match spec.shape {
                        CrackShape::Superellipse { .. } => {
                            let cc = [
                                c[0] as f64 / (dim + 1) as f64,
                                c[1] as f64 / (dim + 1) as f64,
                                c[2] as f64 / (dim + 1) as f64,
                            ];
                            (0..dim).all(|a| cc[a] > (ni / 2) as f64 && cc[a] < (3 * ni / 2) as f64)
                        }
                        CrackShape::Flat { .. } => (c[0] as f64 / (dim + 1) as f64) < ni as f64,
                    };
                    simplices.push((verts, inner));
                }
            }
        }
    }

    // validate the mapped mesh
    for (verts, _) in &simplices {
        let mut vc = [[0.0; 3]; 4];
        for (i, k) in verts.iter().enumerate() {
            vc[i] = vcoord(k);
        }
        let vol = simplex_signed_volume(dim, &vc);
        let h = 1.0 / n as f64;
        if vol <= 1e-6 * h.powi(dim as i32) {
            return Err(Error::Geometry(
                "inclusion map folds the cell mesh; reduce the radius or exponent".into(),
            ));
        }
    }

    // interface and crack facets, by vertex keys
    let center = [0.5, 0.5, if dim == 3 { 0.5 } else { 0.0 }];
    let mut face_owner: HashMap<Vec<[i64; 3]>, Vec<(usize, usize)>> = HashMap::new();
    for (si, (verts, _)) in simplices.iter().enumerate() {
        for k in 0..=dim {
            let mut fk: Vec<[i64; 3]> = (0..=dim).filter(|&v| v != k).map(|v| verts[v]).collect();
            fk.sort();
            face_owner.entry(fk).or_default().push((si, k));
        }
    }
    let is_interface = |fk: &[[i64; 3]]| -> bool {
        match spec.shape {
            CrackShape::Superellipse { .. } => on_core_boundary(fk, dim, ni),
            CrackShape::Flat { .. } => fk.iter().all(|k| k[0] == ni),
        }
    };
    let is_crack = |fk: &[[i64; 3]]| -> bool {
        match spec.shape {
            CrackShape::Superellipse { fraction, .. } => {
                let mut c = [0.0; 3];
                for k in fk {
                    let x = vcoord(k);
                    for a in 0..3 {
                        c[a] += x[a] / dim as f64;
                    }
                }
                let r = sub(&c, &center);
                let cosang = r[dim - 1] / norm(&r);
                if dim == 2 {
                    cosang >= (fraction * std::f64::consts::PI).cos() - 1e-12
                } else {
                    cosang >= 1.0 - 2.0 * fraction - 1e-12
                }
            }
            CrackShape::Flat { half_length } => {
                let lim = half_length * 2.0 * n as f64; // doubled units
                let mut c = [0.0; 3];
                for k in fk {
                    for a in 0..3 {
                        c[a] += k[a] as f64 / dim as f64;
                    }
                }
                (1..dim).all(|a| (c[a] - ni as f64).abs() <= lim + 1e-9)
            }
        }
    };
    let mut facet_pairs: Vec<(Vec<[i64; 3]>, (usize, usize), (usize, usize), bool)> = Vec::new();
    let mut sorted_faces: Vec<_> = face_owner.iter().collect();
    sorted_faces.sort_by(|a, b| a.0.cmp(b.0));
    for (fk, owners) in sorted_faces {
        if owners.len() != 2 || !is_interface(fk) {
            continue;
        }
        let (a, b) = (owners[0], owners[1]);
        let (outer, inner) = if simplices[a.0].1 { (b, a) } else { (a, b) };
        if simplices[outer.0].1 || !simplices[inner.0].1 {
            return Err(Error::Topology(
                "interface facet without an inner/outer pair".into(),
            ));
        }
        let cracked = !spec.glued && is_crack(fk);
        facet_pairs.push((fk.clone(), outer, inner, cracked));
    }
    if !spec.glued && !facet_pairs.iter().any(|f| f.3) {
        return Err(Error::Geometry(
            "crack resolves to no mesh facets; refine the mesh".into(),
        ));
    }

    // P2 node keys per simplex
    let es = edges(dim);
    let p2_keys = |verts: &[[i64; 3]]| -> Vec<[i64; 3]> {
        let mut out: Vec<[i64; 3]> = verts.iter().map(|k| *k).collect();
        for &(a, b) in es {
            let (ka, kb) = (verts[a], verts[b]);
            out.push([
                (ka[0] + kb[0]) / 2,
                (ka[1] + kb[1]) / 2,
                (ka[2] + kb[2]) / 2,
            ]);
        }
        out
    };
    // node counts on interface / crack facets decide duplication
    let mut on_iface: HashMap<[i64; 3], (usize, usize)> = HashMap::new();
    for (_, outer, _, cracked) in &facet_pairs {
        let verts = &simplices[outer.0].0;
        let keys = p2_keys(verts);
        for l in facet_local_nodes(dim, outer.1) {
            let e = on_iface.entry(keys[l]).or_insert((0, 0));
            e.0 += 1;
            if *cracked {
                e.1 += 1;
            }
        }
    }
    let duplicated = |k: &[i64; 3]| -> bool {
        match on_iface.get(k) {
            Some(&(tot, cr)) => cr > 0 && cr == tot,
            None => false,
        }
    };

    let mut key_index: HashMap<([i64; 3], bool), usize> = HashMap::new();
    let mut keys: Vec<([i64; 3], bool)> = Vec::new();
    let mut elem_keys: Vec<(Vec<usize>, bool)> = Vec::new();
    for (verts, inner) in &simplices {
        let pk = p2_keys(verts);
        let ids: Vec<usize> = pk
            .iter()
            .map(|k| {
                let dup = *inner && duplicated(k);
                let next = keys.len();
                *key_index.entry((*k, dup)).or_insert_with(|| {
                    keys.push((*k, dup));
                    next
                })
            })
            .collect();
        elem_keys.push((ids, *inner));
    }
    let node_coord = |key: &[i64; 3]| -> Point {
        // vertex keys are even in every component; midpoints average the ends
        let odd: Vec<usize> = (0..dim).filter(|&a| key[a] % 2 != 0).collect();
        if odd.is_empty() {
            return vcoord(key);
        }
        let mut lo = *key;
        let mut hi = *key;
        for &a in &odd {
            lo[a] -= 1;
            hi[a] += 1;
        }
        // Kuhn edges run along (1,..,1) sub-diagonals, so both ends shift together
        let pa = vcoord(&lo);
        let pb = vcoord(&hi);
        [
            0.5 * (pa[0] + pb[0]),
            0.5 * (pa[1] + pb[1]),
            0.5 * (pa[2] + pb[2]),
        ]
    };
    let coords: Vec<Point> = keys.iter().map(|(k, _)| node_coord(k)).collect();

    let topo = LocalTopology {
        dim,
        divisions: n,
        keys: keys.clone(),
        elem_keys: elem_keys.clone(),
        facet_pairs: facet_pairs
            .iter()
            .map(|(_, o, i, c)| (*o, *i, *c))
            .collect(),
    };
    let mesh = assemble_tiling(
        &topo,
        spec,
        &coords,
        BoxDomain::unit(dim),
        &[],
        1.0,
        &[[0, 0, 0]],
        &TilingGrid::single(dim, n),
    )?;
    Ok(ReferenceCell {
        spec,
        mesh,
        keys,
        elem_keys,
    })
}

struct LocalTopology {
    dim: usize,
    divisions: usize,
    keys: Vec<([i64; 3], bool)>,
    elem_keys: Vec<(Vec<usize>, bool)>,
    /// (outer simplex, face), (inner simplex, face), cracked
    facet_pairs: Vec<((usize, usize), (usize, usize), bool)>,
}

/// Per-axis global grid lines.
struct TilingGrid {
    /// Physical coordinate of each vertex line.
    lines: [Vec<f64>; 3],
    /// Line index of the first cell boundary.
    first: [i64; 3],
    /// Number of cells per axis.
    ncell: [i64; 3],
}

impl TilingGrid {
    fn single(dim: usize, n: usize) -> Self {
        let line: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut lines = [vec![0.0], vec![0.0], vec![0.0]];
        let mut ncell = [1, 1, 1];
        for a in 0..dim {
            lines[a] = line.clone();
            ncell[a] = 1;
        }
        Self {
            lines,
            first: [0; 3],
            ncell,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble_tiling(
    topo: &LocalTopology,
    spec: CellSpec,
    ref_coords: &[Point],
    domain: BoxDomain,
    gamma: &[Face],
    epsilon: f64,
    cells: &[[i64; 3]],
    grid: &TilingGrid,
) -> Result<CrackedMesh> {
    let dim = topo.dim;
    let n = topo.divisions as i64;
    let mut index: HashMap<([i64; 3], bool), usize> = HashMap::new();
    let mut logical: Vec<[i64; 3]> = Vec::new();
    let mut coords: Vec<Point> = Vec::new();
    let mut elems: Vec<Element> = Vec::new();
    let mut cell_nodes: Vec<usize> = Vec::with_capacity(cells.len() * topo.keys.len());
    let cell_lo = |xi: &[i64; 3]| -> [i64; 3] {
        let mut o = [0i64; 3];
        for a in 0..dim {
            o[a] = 2 * (grid.first[a] + n * (xi[a] - cells[0][a]));
        }
        o
    };
    // cells[0] has the smallest translate per axis by construction
    for (ci, xi) in cells.iter().enumerate() {
        let off = cell_lo(xi);
        for (r, (key, dup)) in topo.keys.iter().enumerate() {
            let g = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
            let next = coords.len();
            let id = *index.entry((g, *dup)).or_insert_with(|| {
                logical.push(g);
                let y = ref_coords[r];
                let mut x = [0.0; 3];
                for a in 0..dim {
                    x[a] = epsilon * (xi[a] as f64 + y[a]);
                }
                coords.push(x);
                next
            });
            cell_nodes.push(id);
        }
        for (ek, inner) in &topo.elem_keys {
            let mut nodes = [usize::MAX; 10];
            for (i, &r) in ek.iter().enumerate() {
                nodes[i] = cell_nodes[ci * topo.keys.len() + r];
            }
            elems.push(Element {
                nodes,
                cell: Some(ci),
                inner: *inner,
            });
        }
    }
    let lambda_elems = elems.len();

    // boundary layer: every grid box not covered by a cell
    let nl = [
        grid.lines[0].len() as i64 - 1,
        grid.lines[1].len() as i64 - 1,
        if dim == 3 {
            grid.lines[2].len() as i64 - 1
        } else {
            1
        },
    ];
    let in_cells = |b: &[i64; 3]| -> bool {
        (0..dim).all(|a| b[a] >= grid.first[a] && b[a] < grid.first[a] + n * grid.ncell[a])
    };
    let kuhn = kuhn_simplices(dim);
    let es = edges(dim);
    let line_coord = |k: &[i64; 3]| -> Point {
        let mut x = [0.0; 3];
        for a in 0..dim {
            let i = k[a];
            x[a] = if i % 2 == 0 {
                grid.lines[a][(i / 2) as usize]
            } else {
                0.5 * (grid.lines[a][(i / 2) as usize] + grid.lines[a][(i / 2 + 1) as usize])
            };
        }
        x
    };
    for bz in 0..nl[2] {
        for by in 0..nl[1] {
            for bx in 0..nl[0] {
                let b = [bx, by, if dim == 3 { bz } else { 0 }];
                if in_cells(&b) {
                    continue;
                }
                for s in &kuhn {
                    let mut verts: Vec<[i64; 3]> = s
                        .iter()
                        .map(|o| [2 * (b[0] + o[0]), 2 * (b[1] + o[1]), 2 * (b[2] + o[2])])
                        .collect();
                    let mut vc = [[0.0; 3]; 4];
                    for (i, k) in verts.iter().enumerate() {
                        vc[i] = line_coord(k);
                    }
                    if simplex_signed_volume(dim, &vc) < 0.0 {
                        verts.swap(1, 2);
                    }
                    let mut keys: Vec<[i64; 3]> = verts.clone();
                    for &(p, q) in es {
                        let (ka, kb) = (verts[p], verts[q]);
                        keys.push([
                            (ka[0] + kb[0]) / 2,
                            (ka[1] + kb[1]) / 2,
                            (ka[2] + kb[2]) / 2,
                        ]);
                    }
                    let mut nodes = [usize::MAX; 10];
                    for (i, k) in keys.iter().enumerate() {
                        let next = coords.len();
                        nodes[i] = *index.entry((*k, false)).or_insert_with(|| {
                            logical.push(*k);
                            coords.push(line_coord(k));
                            next
                        });
                    }
                    elems.push(Element {
                        nodes,
                        cell: None,
                        inner: false,
                    });
                }
            }
        }
    }

    // crack and interface data, cell-major
    let ref_nodes = topo.keys.len();
    let ref_elems = topo.elem_keys.len();
    let mut crack_local: HashMap<usize, usize> = HashMap::new(); // ref outer node -> trace idx
    let mut crack_order: Vec<(usize, usize)> = Vec::new(); // (ref outer, ref inner)
    let mut iface_local: HashMap<usize, usize> = HashMap::new();
    let mut iface_order: Vec<usize> = Vec::new();
    let nf = nodes_per_facet(dim);
    let elem_ref_nodes = |s: usize| -> &Vec<usize> { &topo.elem_keys[s].0 };
    let mut ref_cf: Vec<((usize, usize), (usize, usize), [usize; 6])> = Vec::new();
    let mut ref_if: Vec<((usize, usize), (usize, usize), [usize; 6], bool)> = Vec::new();
    for &(outer, inner, cracked) in &topo.facet_pairs {
        let lo = facet_local_nodes(dim, outer.1);
        let onodes: Vec<usize> = lo.iter().map(|&l| elem_ref_nodes(outer.0)[l]).collect();
        // inner facet nodes matched by logical key
        let li = facet_local_nodes(dim, inner.1);
        let inodes_raw: Vec<usize> = li.iter().map(|&l| elem_ref_nodes(inner.0)[l]).collect();
        let mut inodes = vec![usize::MAX; nf];
        for (i, &o) in onodes.iter().enumerate() {
            let key = topo.keys[o].0;
            inodes[i] = *inodes_raw
                .iter()
                .find(|&&r| topo.keys[r].0 == key)
                .ok_or_else(|| Error::Topology("facet without geometric twin".into()))?;
        }
        let mut it = [0usize; 6];
        for (i, &o) in onodes.iter().enumerate() {
            let next = iface_order.len();
            it[i] = *iface_local.entry(o).or_insert_with(|| {
                iface_order.push(o);
                next
            });
        }
        ref_if.push((outer, inner, it, cracked));
        if cracked {
            let mut tr = [0usize; 6];
            for i in 0..nf {
                let next = crack_order.len();
                tr[i] = *crack_local.entry(onodes[i]).or_insert_with(|| {
                    crack_order.push((onodes[i], inodes[i]));
                    next
                });
            }
            ref_cf.push((outer, inner, tr));
        }
    }
    for &(o, i) in &crack_order {
        if (o == i) != (topo.keys[o].0 == topo.keys[i].0 && !topo.keys[i].1) {
            return Err(Error::Topology("inconsistent crack duplication".into()));
        }
    }
    let nrc = crack_order.len();
    let nrcf = ref_cf.len();
    let nri = iface_order.len();
    let nrif = ref_if.len();
    let mut crack_nodes = Vec::with_capacity(cells.len() * nrc);
    let mut crack_facets = Vec::with_capacity(cells.len() * nrcf);
    let mut interface_facets = Vec::with_capacity(cells.len() * nrif);
    let mut interface_nodes = Vec::with_capacity(cells.len() * nri);
    for ci in 0..cells.len() {
        let cn = |r: usize| cell_nodes[ci * ref_nodes + r];
        let first_facet = crack_facets.len();
        for &(outer, inner, tr) in &ref_cf {
            let oe = ci * ref_elems + outer.0;
            let ie = ci * ref_elems + inner.0;
            let verts = face_verts(&coords, &elems[oe], dim, outer.1);
            let opp = coords[elems[oe].nodes[outer.1]];
            // the outer element's opposite vertex lies in the matrix; ν points
            // away from the inclusion, i.e. towards it
            let nrm = facet_normal(dim, &verts, &opp);
            let nrm = [-nrm[0], -nrm[1], -nrm[2]];
            let mut trace = [0usize; 6];
            for i in 0..nf {
                trace[i] = ci * nrc + tr[i];
            }
            crack_facets.push(CrackFacet {
                outer_elem: oe,
                outer_face: outer.1,
                inner_elem: ie,
                inner_face: inner.1,
                normal: nrm,
                measure: facet_measure(dim, &verts),
                trace,
            });
        }
        let mut acc = vec![[0.0f64; 3]; nrc];
        for f in &crack_facets[first_facet..] {
            for i in 0..nf {
                let t = f.trace[i] - ci * nrc;
                for a in 0..3 {
                    acc[t][a] += f.normal[a];
                }
            }
        }
        for (t, &(o, i)) in crack_order.iter().enumerate() {
            let l = norm(&acc[t]);
            let nm = [acc[t][0] / l, acc[t][1] / l, acc[t][2] / l];
            crack_nodes.push(CrackNode {
                outer: cn(o),
                inner: cn(i),
                normal: nm,
            });
        }
        for &o in &iface_order {
            interface_nodes.push(cn(o));
        }
        for &(outer, inner, it, cracked) in &ref_if {
            let oe = ci * ref_elems + outer.0;
            let ie = ci * ref_elems + inner.0;
            let verts = face_verts(&coords, &elems[oe], dim, outer.1);
            let opp = coords[elems[oe].nodes[outer.1]];
            let nrm = facet_normal(dim, &verts, &opp);
            let nrm = [-nrm[0], -nrm[1], -nrm[2]];
            let mut trace = [0usize; 6];
            for i in 0..nf {
                trace[i] = ci * nri + it[i];
            }
            interface_facets.push(InterfaceFacet {
                outer_elem: oe,
                outer_face: outer.1,
                inner_elem: ie,
                inner_face: inner.1,
                normal: nrm,
                measure: facet_measure(dim, &verts),
                cracked,
                trace,
            });
        }
    }

    // Dirichlet nodes by logical position
    let nmax = [
        2 * (grid.lines[0].len() as i64 - 1),
        2 * (grid.lines[1].len() as i64 - 1),
        2 * (grid.lines[2].len() as i64 - 1),
    ];
    let dirichlet: Vec<bool> = logical
        .iter()
        .map(|k| {
            gamma.iter().any(|f| {
                if f.upper {
                    k[f.axis] == nmax[f.axis]
                } else {
                    k[f.axis] == 0
                }
            })
        })
        .collect();

    Ok(CrackedMesh {
        dim,
        epsilon,
        domain,
        coords,
        elems,
        cells: cells.to_vec(),
        ref_elems,
        ref_nodes,
        cell_nodes,
        lambda_elems,
        crack_nodes,
        ref_crack_nodes: nrc,
        crack_facets,
        ref_crack_facets: nrcf,
        interface_facets,
        ref_interface_facets: nrif,
        interface_nodes,
        ref_interface_nodes: nri,
        dirichlet,
        gamma: gamma.to_vec(),
        shape: spec.shape,
        divisions: spec.divisions,
        glued: spec.glued,
        logical,
    })
}

fn face_verts(coords: &[Point], el: &Element, dim: usize, k: usize) -> [Point; 3] {
    let mut v = [[0.0; 3]; 3];
    let mut j = 0;
    for i in 0..=dim {
        if i != k {
            v[j] = coords[el.nodes[i]];
            j += 1;
        }
    }
    v
}

/// Tiles `domain` with `ε`-cells copied from `cell`; `Γ` is a union of faces.
pub fn tile_domain(
    domain: BoxDomain,
    gamma: &[Face],
    cell: &ReferenceCell,
    epsilon: f64,
) -> Result<CrackedMesh> {
    let dim = cell.dim();
    if domain.dim != dim {
        return Err(invalid("domain and cell dimensions differ"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon {epsilon} must be positive")));
    }
    for k in 0..dim {
        if !(domain.hi[k] > domain.lo[k]) {
            return Err(invalid("degenerate domain box"));
        }
    }
    if epsilon > domain.diameter() {
        return Err(Error::Geometry(format!(
            "epsilon {epsilon} exceeds the domain diameter {}",
            domain.diameter()
        )));
    }
    if gamma.is_empty() {
        return Err(invalid("Γ must contain at least one face"));
    }
    for f in gamma {
        if f.axis >= dim {
            return Err(invalid(format!("face axis {} out of range", f.axis)));
        }
    }
    let n = cell.spec.divisions as i64;
    let h = epsilon / n as f64;
    let mut lines: [Vec<f64>; 3] = [vec![0.0], vec![0.0], vec![0.0]];
    let mut first = [0i64; 3];
    let mut ncell = [1i64; 3];
    let mut xi_lo = [0i64; 3];
    for a in 0..dim {
        let (lo, hi) = (domain.lo[a], domain.hi[a]);
        let k0 = (lo / epsilon - 1e-9).ceil() as i64;
        let k1 = (hi / epsilon + 1e-9).floor() as i64;
        let m = k1 - k0;
        if m <= 0 {
            return Err(Error::Geometry(format!(
                "no ε-cell fits the domain along axis {a} (ε = {epsilon})"
            )));
        }
        let c0 = k0 as f64 * epsilon;
        let c1 = k1 as f64 * epsilon;
        let mut l = Vec::new();
        let gap_lo = c0 - lo;
        let p = if gap_lo > 1e-12 {
            (gap_lo / h - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        for i in 0..p {
            l.push(lo + gap_lo * i as f64 / p as f64);
        }
        for c in 0..m {
            for i in 0..n {
                l.push(epsilon * ((k0 + c) as f64 + i as f64 / n as f64));
            }
        }
        l.push(c1);
        let gap_hi = hi - c1;
        let q = if gap_hi > 1e-12 {
            (gap_hi / h - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        for i in 1..=q {
            l.push(c1 + gap_hi * i as f64 / q as f64);
        }
        if p == 0 {
            l[0] = lo;
        }
        if q == 0 {
            *l.last_mut().unwrap() = hi;
        }
        lines[a] = l;
        first[a] = p as i64;
        ncell[a] = m;
        xi_lo[a] = k0;
    }
    let mut cells = Vec::new();
    for z in 0..ncell[2] {
        for y in 0..ncell[1] {
            for x in 0..ncell[0] {
                let mut xi = [x + xi_lo[0], y + xi_lo[1], 0];
                if dim == 3 {
                    xi[2] = z + xi_lo[2];
                }
                cells.push(xi);
            }
        }
    }
    let grid = TilingGrid {
        lines,
        first,
        ncell,
    };
    let topo = LocalTopology {
        dim,
        divisions: cell.spec.divisions,
        keys: cell.keys.clone(),
        elem_keys: cell.elem_keys.clone(),
        facet_pairs: Vec::new(),
    };
    // facet pairs are re-derived from the reference mesh
    let topo = LocalTopology {
        facet_pairs: ref_facet_pairs(cell),
        ..topo
    };
    assemble_tiling(
        &topo,
        cell.spec,
        &cell.mesh.coords,
        domain,
        gamma,
        epsilon,
        &cells,
        &grid,
    )
}

fn ref_facet_pairs(cell: &ReferenceCell) -> Vec<((usize, usize), (usize, usize), bool)> {
    cell.mesh
        .interface_facets
        .iter()
        .map(|f| {
            (
                (f.outer_elem, f.outer_face),
                (f.inner_elem, f.inner_face),
                f.cracked,
            )
        })
        .collect()
}

/// Same mesh with the crack glued: duplicated nodes collapse onto their
/// outer twins. Node numbering is preserved for the surviving nodes.
pub fn glue_cracks(mesh: &CrackedMesh) -> CrackedMesh {
    let mut out = mesh.clone();
    let mut remap: Vec<usize> = (0..mesh.n_nodes()).collect();
    for cn in &mesh.crack_nodes {
        remap[cn.inner] = cn.outer;
    }
    for el in &mut out.elems {
        for v in el.nodes.iter_mut() {
            if *v != usize::MAX {
                *v = remap[*v];
            }
        }
    }
    for cn in &mut out.crack_nodes {
        cn.inner = cn.outer;
    }
    for c in &mut out.cell_nodes {
        *c = remap[*c];
    }
    out.glued = true;
    out
}

/// Duplicated-node bookkeeping check: every crack node pair shares geometry
/// and every crack facet has a twin on the other side.
pub fn duplicate_crack_dofs(mesh: &CrackedMesh) -> Result<()> {
    for cn in &mesh.crack_nodes {
        let a = mesh.coords[cn.outer];
        let b = mesh.coords[cn.inner];
        if norm(&sub(&a, &b)) > 1e-12 {
            return Err(Error::Topology(
                "crack node pair with distinct geometry".into(),
            ));
        }
    }
    for f in &mesh.crack_facets {
        let vo = face_verts(
            &mesh.coords,
            &mesh.elems[f.outer_elem],
            mesh.dim,
            f.outer_face,
        );
        let vi = face_verts(
            &mesh.coords,
            &mesh.elems[f.inner_elem],
            mesh.dim,
            f.inner_face,
        );
        for p in vo.iter().take(mesh.dim) {
            if !vi.iter().take(mesh.dim).any(|q| norm(&sub(p, q)) < 1e-12) {
                return Err(Error::Topology("facet without geometric twin".into()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disk(fraction: f64, n: usize) -> ReferenceCell {
        build_reference_cell(CellSpec::new(2, CrackShape::circle(0.25, fraction), n)).unwrap()
    }

    #[test]
    fn closed_circular_crack_length() {
        let c = disk(1.0, 32);
        let h = 1.0 / 32.0;
        assert!(
            (c.crack_measure() - PI / 2.0).abs() < 4.0 * h * h,
            "{}",
            c.crack_measure()
        );
        assert!(c.mesh.crack_nodes.iter().all(|n| !n.is_tip()));
    }

    #[test]
    fn half_circle_crack_length() {
        let c = disk(0.5, 32);
        let h = 1.0 / 32.0;
        assert!(
            (c.crack_measure() - PI / 4.0).abs() < 4.0 * h * h,
            "{}",
            c.crack_measure()
        );
        assert_eq!(c.mesh.crack_nodes.iter().filter(|n| n.is_tip()).count(), 2);
    }

    #[test]
    fn spherical_cap_area() {
        let n = 12;
        let c = build_reference_cell(CellSpec::new(3, CrackShape::circle(0.25, 0.5), n)).unwrap();
        let h = 1.0 / n as f64;
        // polar cap of half angle θ on a sphere of radius R has area 2πR²(1 - cos θ)
        let exact = 2.0 * PI * 0.25f64.powi(2);
        // facet centroids decide membership, so the discrete cap boundary is
        // ragged at the scale of one mapped facet
        let err = (c.crack_measure() - exact).abs();
        assert!(err < 2.0 * h * h + 0.02, "{} vs {exact}", c.crack_measure());
        let total: f64 = c.mesh.interface_facets.iter().map(|f| f.measure).sum();
        assert!((total - 4.0 * PI * 0.0625).abs() < 0.05);
    }

    #[test]
    fn cell_volume_is_one() {
        for c in [disk(0.5, 16), disk(1.0, 8)] {
            let v: f64 = (0..c.n_elems()).map(|e| c.mesh.elem_volume(e)).sum();
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn tiling_counts() {
        let c = disk(0.5, 8);
        let m = tile_domain(BoxDomain::unit(2), &[Face::parse("x0").unwrap()], &c, 0.5).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert!(m.layer_volume().abs() < 1e-15);
        let m = tile_domain(BoxDomain::unit(2), &[Face::parse("x0").unwrap()], &c, 0.3).unwrap();
        assert_eq!(m.n_cells(), 9);
        assert!((m.layer_volume() - 0.19).abs() < 1e-12);
        assert!((m.interior_volume() + m.layer_volume() - 1.0).abs() < 1e-12);
        let s = c.crack_measure();
        assert!((m.crack_measure() - 9.0 * 0.3 * s).abs() < 1e-12);
    }

    #[test]
    fn tiling_3d_counts() {
        let c = build_reference_cell(CellSpec::new(3, CrackShape::circle(0.25, 0.5), 4)).unwrap();
        let m = tile_domain(BoxDomain::unit(3), &[Face::parse("z0").unwrap()], &c, 0.5).unwrap();
        assert_eq!(m.n_cells(), 8);
        let s = c.crack_measure();
        assert!((m.crack_measure() - 8.0 * 0.25 * s).abs() < 1e-12);
    }

    #[test]
    fn epsilon_too_large_is_rejected() {
        let c = disk(0.5, 8);
        let r = tile_domain(BoxDomain::unit(2), &[Face::parse("x0").unwrap()], &c, 2.0);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        let r = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.5, 0.5), 8));
        assert!(matches!(r, Err(Error::Geometry(_))));
        let r = build_reference_cell(CellSpec::new(
            2,
            CrackShape::Superellipse {
                radius: 0.25,
                exponent: 1.5,
                fraction: 0.5,
            },
            8,
        ));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.5 }, 8));
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn glued_cell_has_no_duplicates() {
        let spec = CellSpec::new(2, CrackShape::circle(0.25, 0.5), 8).glued();
        let c = build_reference_cell(spec).unwrap();
        let cracked = disk(0.5, 8);
        assert_eq!(c.n_nodes() + cracked.mesh.n_duplicated(), cracked.n_nodes());
    }

    #[test]
    fn duplicated_nodes_count() {
        // one flat crack facet per cell row at n = 8: the interior midpoint and
        // nothing else is duplicated when the crack is a single facet long
        let c = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.125 }, 8))
            .unwrap();
        assert_eq!(c.mesh.crack_facets.len(), 2);
        // two facets: 5 P2 nodes, 2 tips, 3 interior
        assert_eq!(c.mesh.n_duplicated(), 3);
        duplicate_crack_dofs(&c.mesh).unwrap();
    }

    #[test]
    fn normals_point_out_of_inclusion() {
        let c = disk(1.0, 16);
        for f in &c.mesh.crack_facets {
            let x = c.mesh.coords[c.mesh.crack_nodes[f.trace[0]].outer];
            let r = sub(&x, &[0.5, 0.5, 0.0]);
            assert!(dot3(&r, &f.normal) > 0.9 * norm(&r));
        }
    }

    #[test]
    fn periodic_pairs_match_geometry() {
        let c = disk(0.5, 8);
        let pairs = c.periodic_pairs();
        assert!(!pairs.is_empty());
        for (s, m) in pairs {
            let (a, b) = (c.mesh.coords[s], c.mesh.coords[m]);
            for k in 0..2 {
                let d = (a[k] - b[k]).abs();
                assert!(d < 1e-14 || (d - 1.0).abs() < 1e-14);
            }
        }
    }
}
