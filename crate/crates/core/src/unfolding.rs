//! Periodic unfolding: `𝒯*_ε`, `𝒯^b_ε`, the averaging operator `𝒰^b_ε`,
//! dual unfolding, the `Q1` macroscopic interpolant and the shift `Δ_k`.
//!
//! Unfolded fields are stored cell-major: for every cell `ξ` the reference
//! coefficients follow contiguously, so unfolding is a pure re-indexing. Each
//! cell occupies the macroscopic slot `εξ + εY` of measure `ε^d`; the value on
//! `Λ_ε × Y*` is zero and never stored.

use std::collections::HashMap;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_grad_gram, assemble_mass, assemble_mass_range, assemble_regularization,
    assemble_strain_gram, element_affine, trace_mass,
};
use crate::error::{invalid, Error, Result};
use crate::fe::p2_values;
use crate::geometry::{
    facet_measure, nodes_per_element, nodes_per_facet, BoxDomain, CrackedMesh, Point,
    ReferenceCell, TraceSpace,
};
use crate::linalg::{Csr, DenseCholesky};
use crate::quadrature::{gauss_legendre, simplex_rule};
use crate::spaces::{quad_dense, slobodetsky_gram, FracQuadrature};

/// Reference layout of an unfolded field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One value set per reference node.
    Nodal,
    /// One value set per vertex of every reference element (broken P1).
    ElementVertex,
}

/// A function on `Ω × Y*`, piecewise constant in `x` over cell slots.
#[derive(Debug, Clone)]
pub struct UnfoldedField {
    pub epsilon: f64,
    pub dim: usize,
    pub comps: usize,
    pub layout: Layout,
    /// Mesh cell indices, in storage order.
    pub cells: Vec<usize>,
    /// Reference slots per cell.
    pub per_cell: usize,
    pub values: Vec<f64>,
}

impl UnfoldedField {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Coefficients of the `i`-th stored cell.
    pub fn cell(&self, i: usize) -> &[f64] {
        let w = self.per_cell * self.comps;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn value(&self, i: usize, slot: usize, comp: usize) -> f64 {
        self.values[(i * self.per_cell + slot) * self.comps + comp]
    }
}

/// `𝒯*_ε(φ)` of a nodal field with `comps` values per mesh node.
pub fn unfold_domain(mesh: &CrackedMesh, phi: &[f64], comps: usize) -> Result<UnfoldedField> {
    if phi.len() != mesh.n_nodes() * comps {
        return Err(invalid(format!(
            "field has {} values, mesh needs {} x {comps}",
            phi.len(),
            mesh.n_nodes()
        )));
    }
    if mesh.cell_nodes.len() != mesh.n_cells() * mesh.ref_nodes {
        return Err(Error::Topology("cell node table does not match the reference layout".into()));
    }
    let r = mesh.ref_nodes;
    let mut values = Vec::with_capacity(mesh.n_cells() * r * comps);
    for c in 0..mesh.n_cells() {
        for l in 0..r {
            let n = mesh.cell_node(c, l);
            values.extend_from_slice(&phi[n * comps..(n + 1) * comps]);
        }
    }
    Ok(UnfoldedField {
        epsilon: mesh.epsilon,
        dim: mesh.dim,
        comps,
        layout: Layout::Nodal,
        cells: (0..mesh.n_cells()).collect(),
        per_cell: r,
        values,
    })
}

/// Checks that every cell is a node-for-node copy of the reference cell.
pub fn check_layout(cell: &ReferenceCell, mesh: &CrackedMesh) -> Result<()> {
    if mesh.ref_nodes != cell.n_nodes() || mesh.ref_elems != cell.n_elems() {
        return Err(Error::Topology("mesh was not tiled from this reference cell".into()));
    }
    let npe = nodes_per_element(mesh.dim);
    for c in 0..mesh.n_cells() {
        for (le, e) in mesh.cell_elem_range(c).enumerate() {
            let re = &cell.mesh.elems[le];
            let pe = &mesh.elems[e];
            if re.inner != pe.inner {
                return Err(Error::Topology(format!("cell {c} element {le}: side tag differs")));
            }
            for a in 0..npe {
                if mesh.cell_node(c, re.nodes[a]) != pe.nodes[a] {
                    return Err(Error::Topology(format!(
                        "cell {c} element {le}: local node {a} differs"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `ε𝒯*_ε(∇φ)` sampled at element vertices, `comps · d` values per slot
/// ordered `[comp][axis]`.
pub fn unfold_gradient(mesh: &CrackedMesh, phi: &[f64], comps: usize) -> Result<UnfoldedField> {
    if phi.len() != mesh.n_nodes() * comps {
        return Err(invalid("field length does not match the mesh"));
    }
    let d = mesh.dim;
    let mut values = Vec::with_capacity(mesh.n_cells() * mesh.ref_elems * (d + 1) * comps * d);
    for c in 0..mesh.n_cells() {
        for e in mesh.cell_elem_range(c) {
            let nodes = &mesh.elems[e].nodes;
            push_vertex_gradients(mesh, e, |a, k| phi[nodes[a] * comps + k], comps, mesh.epsilon, &mut values);
        }
    }
    Ok(UnfoldedField {
        epsilon: mesh.epsilon,
        dim: d,
        comps: comps * d,
        layout: Layout::ElementVertex,
        cells: (0..mesh.n_cells()).collect(),
        per_cell: mesh.ref_elems * (d + 1),
        values,
    })
}

/// `∇_y` of an unfolded nodal field, in the layout of [`unfold_gradient`].
pub fn reference_gradient(cell: &ReferenceCell, u: &UnfoldedField) -> Result<UnfoldedField> {
    if u.layout != Layout::Nodal || u.per_cell != cell.n_nodes() {
        return Err(invalid("reference gradient needs a nodal field on this cell"));
    }
    let d = cell.dim();
    let m = &cell.mesh;
    let mut values = Vec::with_capacity(u.n_cells() * m.elems.len() * (d + 1) * u.comps * d);
    for i in 0..u.n_cells() {
        let v = u.cell(i);
        for e in 0..m.elems.len() {
            let nodes = &m.elems[e].nodes;
            push_vertex_gradients(m, e, |a, k| v[nodes[a] * u.comps + k], u.comps, 1.0, &mut values);
        }
    }
    Ok(UnfoldedField {
        epsilon: u.epsilon,
        dim: d,
        comps: u.comps * d,
        layout: Layout::ElementVertex,
        cells: u.cells.clone(),
        per_cell: m.elems.len() * (d + 1),
        values,
    })
}

fn push_vertex_gradients<F>(
    mesh: &CrackedMesh,
    e: usize,
    val: F,
    comps: usize,
    scale: f64,
    out: &mut Vec<f64>,
) where
    F: Fn(usize, usize) -> f64,
{
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let aff = element_affine(mesh, e);
    for vtx in 0..=d {
        let mut b = [0.0; 4];
        b[vtx] = 1.0;
        let g = aff.grads(&b);
        for k in 0..comps {
            for ax in 0..d {
                let s: f64 = (0..npe).map(|a| val(a, k) * g[a][ax]).sum();
                out.push(scale * s);
            }
        }
    }
}

/// Which side of the crack a trace is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Outer,
    Inner,
    /// `inner - outer`.
    Jump,
}

/// Nodal trace on `S_ε`, one value set per mesh crack node (cell-major).
#[derive(Debug, Clone)]
pub struct BoundaryTrace {
    pub comps: usize,
    pub side: Side,
    pub values: Vec<f64>,
}

/// Trace of a nodal field on the crack nodes.
pub fn crack_trace(mesh: &CrackedMesh, u: &[f64], comps: usize, side: Side) -> BoundaryTrace {
    let mut values = Vec::with_capacity(mesh.crack_nodes.len() * comps);
    for cn in &mesh.crack_nodes {
        for k in 0..comps {
            let o = u[cn.outer * comps + k];
            let i = u[cn.inner * comps + k];
            values.push(match side {
                Side::Outer => o,
                Side::Inner => i,
                Side::Jump => i - o,
            });
        }
    }
    BoundaryTrace {
        comps,
        side,
        values,
    }
}

/// A function on `Ω × S`, piecewise constant in `x` over cell slots.
#[derive(Debug, Clone)]
pub struct BoundaryUnfolded {
    pub epsilon: f64,
    pub dim: usize,
    pub comps: usize,
    pub side: Side,
    /// Reference crack nodes per cell.
    pub per_cell: usize,
    pub values: Vec<f64>,
}

impl BoundaryUnfolded {
    pub fn n_cells(&self) -> usize {
        self.values.len() / (self.per_cell * self.comps)
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        let w = self.per_cell * self.comps;
        &self.values[i * w..(i + 1) * w]
    }
}

/// `𝒯^b_ε(φ)`.
pub fn unfold_boundary(mesh: &CrackedMesh, trace: &BoundaryTrace) -> Result<BoundaryUnfolded> {
    if trace.values.len() != mesh.crack_nodes.len() * trace.comps {
        return Err(invalid("trace length does not match the crack nodes"));
    }
    Ok(BoundaryUnfolded {
        epsilon: mesh.epsilon,
        dim: mesh.dim,
        comps: trace.comps,
        side: trace.side,
        per_cell: mesh.ref_crack_nodes,
        values: trace.values.clone(),
    })
}

/// `𝒰^b_ε(Φ)` for cell-constant `Φ`: the slot mean is the stored value.
pub fn average_boundary(mesh: &CrackedMesh, phi: &BoundaryUnfolded) -> Result<BoundaryTrace> {
    if phi.per_cell != mesh.ref_crack_nodes || phi.n_cells() != mesh.n_cells() {
        return Err(invalid("unfolded trace does not match the mesh"));
    }
    Ok(BoundaryTrace {
        comps: phi.comps,
        side: phi.side,
        values: phi.values.clone(),
    })
}

/// `𝒰^b_ε(Φ)(x) = ∫_Y Φ(εξ + εz, {x/ε}) dz` for `Φ` given pointwise as
/// `f(x, y, out)`, with `n` Gauss points per axis.
pub fn average_boundary_sampled<F>(
    mesh: &CrackedMesh,
    comps: usize,
    side: Side,
    n: usize,
    f: F,
) -> BoundaryTrace
where
    F: Fn(&Point, &Point, &mut [f64]),
{
    let d = mesh.dim;
    let eps = mesh.epsilon;
    let g = gauss_legendre(n);
    let npts = n.pow(d as u32);
    let mut values = vec![0.0; mesh.crack_nodes.len() * comps];
    let mut buf = vec![0.0; comps];
    for c in 0..mesh.n_cells() {
        let xi = mesh.cells[c];
        for t in c * mesh.ref_crack_nodes..(c + 1) * mesh.ref_crack_nodes {
            let xn = mesh.coords[mesh.crack_nodes[t].outer];
            let mut y = [0.0; 3];
            for k in 0..d {
                y[k] = xn[k] / eps - xi[k] as f64;
            }
            for p in 0..npts {
                let mut x = [0.0; 3];
                let mut w = 1.0;
                let mut r = p;
                for k in 0..d {
                    let j = r % n;
                    r /= n;
                    x[k] = eps * (xi[k] as f64 + g.points[j]);
                    w *= g.weights[j];
                }
                f(&x, &y, &mut buf);
                for k in 0..comps {
                    values[t * comps + k] += w * buf[k];
                }
            }
        }
    }
    BoundaryTrace {
        comps,
        side,
        values,
    }
}

/// `𝒯^b_ε(g)` of a functional given by its moment vector against the
/// nodal trace basis of `S_ε`: `⟨𝒯^b_ε(g), Φ⟩ = ε⟨g, 𝒰^b_ε(Φ)⟩`, so the
/// moments against the cell-constant basis of `Ω × S` are `ε g`.
pub fn unfold_dual(mesh: &CrackedMesh, g: &BoundaryTrace) -> Result<BoundaryUnfolded> {
    let mut out = unfold_boundary(mesh, g)?;
    for v in &mut out.values {
        *v *= mesh.epsilon;
    }
    Ok(out)
}

/// `⟨G, Φ⟩` on `Ω × S` for moment vector `G` and nodal `Φ`.
pub fn pairing(g: &BoundaryUnfolded, phi: &BoundaryUnfolded) -> f64 {
    g.values.iter().zip(&phi.values).map(|(a, b)| a * b).sum()
}

/// `∫ |φ|^p` over a trace space by facet quadrature; `|·|` is Euclidean over
/// the `comps` values of each node.
pub fn trace_lp_power(space: &TraceSpace, values: &[f64], comps: usize, p: f64) -> f64 {
    let d = space.dim;
    let k = d - 1;
    let nf = nodes_per_facet(d);
    let rule = simplex_rule(k, 4);
    let fact = if k == 1 { 1.0 } else { 2.0 };
    let mut s = 0.0;
    for f in &space.facets {
        let area = facet_measure(d, &f.verts);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(k, b);
            let mut r2 = 0.0;
            for c in 0..comps {
                let x: f64 = (0..nf).map(|a| v[a] * values[f.nodes[a] * comps + c]).sum();
                r2 += x * x;
            }
            s += w * fact * area * r2.sqrt().powf(p);
        }
    }
    s
}

/// `∫` of a scalar trace over a trace space.
pub fn trace_integral(space: &TraceSpace, values: &[f64]) -> f64 {
    let d = space.dim;
    let k = d - 1;
    let nf = nodes_per_facet(d);
    let rule = simplex_rule(k, 2);
    let fact = if k == 1 { 1.0 } else { 2.0 };
    let mut s = 0.0;
    for f in &space.facets {
        let area = facet_measure(d, &f.verts);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(k, b);
            let x: f64 = (0..nf).map(|a| v[a] * values[f.nodes[a]]).sum();
            s += w * fact * area * x;
        }
    }
    s
}

/// Reference-cell Gram matrices reused across cells.
pub struct RefGrams {
    pub dim: usize,
    pub mass: Csr,
    pub grad: Csr,
    pub strain: Csr,
    /// Broken `∫ ∇e : ∇e` without facet terms.
    pub strain_grad: Csr,
}

impl RefGrams {
    pub fn new(cell: &ReferenceCell) -> Self {
        let m = &cell.mesh;
        Self {
            dim: m.dim,
            mass: assemble_mass(m),
            grad: assemble_grad_gram(m),
            strain: assemble_strain_gram(m),
            strain_grad: assemble_regularization(m, 0.0, &[]),
        }
    }

    /// `H¹(Y*)` Gram for vector fields.
    pub fn h1(&self) -> Csr {
        self.mass.add_scaled(&self.grad, 1.0)
    }
}

/// Widens scalar nodal values to `d` components (first slot).
fn widen(v: &[f64], comps: usize, d: usize) -> Vec<f64> {
    if comps == d {
        return v.to_vec();
    }
    let n = v.len() / comps;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..comps.min(d) {
            out[i * d + k] = v[i * comps + k];
        }
    }
    out
}

fn check_vector_like(comps: usize, d: usize) -> Result<()> {
    if comps == 1 || comps == d {
        Ok(())
    } else {
        Err(invalid(format!("nodal fields need 1 or {d} components, got {comps}")))
    }
}

/// `‖𝒯*_ε(φ)‖_{L²(Ω × Y*)}` from the reference mass.
pub fn unfolded_l2(grams: &RefGrams, u: &UnfoldedField) -> Result<f64> {
    check_vector_like(u.comps, u.dim)?;
    let mut s = 0.0;
    for i in 0..u.n_cells() {
        s += grams.mass.quad(&widen(u.cell(i), u.comps, u.dim));
    }
    Ok((u.epsilon.powi(u.dim as i32) * s).sqrt())
}

/// `𝐍_ε(φ)` restricted to the stored cells:
/// `(‖e(φ)‖² + ε²‖∇e(φ)‖²)^{1/2}` over their union.
pub fn n_eps(grams: &RefGrams, u: &UnfoldedField) -> Result<f64> {
    if u.comps != u.dim || u.layout != Layout::Nodal {
        return Err(invalid("𝐍_ε needs a nodal vector field"));
    }
    let sc = u.epsilon.powi(u.dim as i32 - 2);
    let mut s = 0.0;
    for i in 0..u.n_cells() {
        let v = u.cell(i);
        s += grams.strain.quad(v) + grams.strain_grad.quad(v);
    }
    Ok((sc * s).max(0.0).sqrt())
}

/// `Q^◇_ε(φ)`: the unfolded corner values `𝒯*_ε(φ)(εξ, ·)` interpolated
/// multilinearly in `x` over the cells of `ω`.
#[derive(Debug, Clone)]
pub struct QInterpolant {
    pub epsilon: f64,
    pub dim: usize,
    /// Storage indices into the source field of the cells covering `ω`.
    pub cells: Vec<usize>,
    /// Source storage index of corner `ξ + κ`, bit `k` of the corner index
    /// being `κ_k`; clamped one-sided where `ξ + κ ∉ Ξ_ε`.
    pub corners: Vec<[usize; 8]>,
    /// Number of clamped corners.
    pub clamped: usize,
    /// `dist(ω, ∂Ω) / ε`.
    pub margin: f64,
    source: UnfoldedField,
}

/// Macroscopic norms of a [`QInterpolant`].
#[derive(Debug, Clone, Copy)]
pub struct QNorms {
    /// `‖Q^◇_ε(φ)‖_{H¹(ω; H¹(Y*))}`.
    pub h1: f64,
    /// `‖Q^◇_ε(φ) − 𝒯*_ε(φ)‖_{L²(ω; H¹(Y*))}`.
    pub diff: f64,
    /// `‖𝒯*_ε(φ)‖_{L²(ω; H¹(Y*))}`.
    pub unfolded: f64,
}

/// Cells whose centre lies in the closed box `omega`.
pub fn cells_in(mesh: &CrackedMesh, omega: &BoxDomain) -> Vec<usize> {
    (0..mesh.n_cells())
        .filter(|&c| omega.contains_closed(&mesh.cell_center(c), 1e-9 * mesh.epsilon))
        .collect()
}

/// `Q^◇_ε` of an unfolded nodal field. `ω` must lie in the tiled part `Ω̂_ε`.
pub fn interpolate_q(mesh: &CrackedMesh, phi: &UnfoldedField, omega: &BoxDomain) -> Result<QInterpolant> {
    let d = mesh.dim;
    if phi.layout != Layout::Nodal || phi.cells.len() != mesh.n_cells() {
        return Err(invalid("Q interpolation needs a nodal field on all cells"));
    }
    let eps = mesh.epsilon;
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for xi in &mesh.cells {
        for k in 0..d {
            lo[k] = lo[k].min(xi[k]);
            hi[k] = hi[k].max(xi[k]);
        }
    }
    let mut margin = f64::INFINITY;
    for k in 0..d {
        let tiled_lo = lo[k] as f64 * eps;
        let tiled_hi = (hi[k] + 1) as f64 * eps;
        if omega.lo[k] < tiled_lo - 1e-12 || omega.hi[k] > tiled_hi + 1e-12 {
            return Err(Error::Geometry(format!(
                "ω leaves the tiled region along axis {k}: too close to ∂Ω for ε = {eps}"
            )));
        }
        margin = margin
            .min(omega.lo[k] - mesh.domain.lo[k])
            .min(mesh.domain.hi[k] - omega.hi[k]);
    }
    let cells = cells_in(mesh, omega);
    if cells.is_empty() {
        return Err(Error::Geometry(format!("no cell centre lies in ω at ε = {eps}")));
    }
    let index: HashMap<[i64; 3], usize> = mesh.cells.iter().enumerate().map(|(i, x)| (*x, i)).collect();
    let mut corners = Vec::with_capacity(cells.len());
    let mut clamped = 0;
    for &c in &cells {
        let xi = mesh.cells[c];
        let mut cs = [0usize; 8];
        for (kappa, slot) in cs.iter_mut().enumerate().take(1 << d) {
            let mut t = xi;
            for k in 0..d {
                t[k] = (xi[k] + ((kappa >> k) & 1) as i64).min(hi[k]);
            }
            let found = match index.get(&t) {
                Some(&i) => i,
                None => {
                    // one-sided: fall back towards ξ axis by axis
                    let mut t2 = t;
                    let mut hit = None;
                    for k in 0..d {
                        t2[k] = xi[k];
                        if let Some(&i) = index.get(&t2) {
                            hit = Some(i);
                            break;
                        }
                    }
                    hit.unwrap_or(c)
                }
            };
            if mesh.cells[found] != {
                let mut want = xi;
                for k in 0..d {
                    want[k] += ((kappa >> k) & 1) as i64;
                }
                want
            } {
                clamped += 1;
            }
            *slot = found;
        }
        corners.push(cs);
    }
    Ok(QInterpolant {
        epsilon: eps,
        dim: d,
        cells,
        corners,
        clamped,
        margin: margin / eps,
        source: phi.clone(),
    })
}

fn q1_mass_1d(a: usize, b: usize) -> f64 {
    if a == b {
        1.0 / 3.0
    } else {
        1.0 / 6.0
    }
}

fn q1_stiff_1d(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        -1.0
    }
}

impl QInterpolant {
    /// Value at macroscopic offset `z ∈ Y` inside the `i`-th cell of `ω`.
    pub fn value(&self, i: usize, z: &Point, node: usize, comp: usize) -> f64 {
        let mut s = 0.0;
        for kappa in 0..1usize << self.dim {
            let mut w = 1.0;
            for k in 0..self.dim {
                w *= if (kappa >> k) & 1 == 1 { z[k] } else { 1.0 - z[k] };
            }
            s += w * self.source.value(self.corners[i][kappa], node, comp);
        }
        s
    }

    /// Macroscopic Sobolev norms with the reference `H¹(Y*)` Gram.
    pub fn norms(&self, grams: &RefGrams) -> Result<QNorms> {
        let u = &self.source;
        check_vector_like(u.comps, u.dim)?;
        let d = self.dim;
        let h = grams.h1();
        let nk = 1usize << d;
        let mut mass = vec![0.0; nk * nk];
        let mut stiff = vec![0.0; nk * nk];
        for a in 0..nk {
            for b in 0..nk {
                let bit = |x: usize, k: usize| (x >> k) & 1;
                mass[a * nk + b] = (0..d).map(|k| q1_mass_1d(bit(a, k), bit(b, k))).product();
                stiff[a * nk + b] = (0..d)
                    .map(|j| {
                        (0..d)
                            .map(|k| {
                                if k == j {
                                    q1_stiff_1d(bit(a, k), bit(b, k))
                                } else {
                                    q1_mass_1d(bit(a, k), bit(b, k))
                                }
                            })
                            .product::<f64>()
                    })
                    .sum();
            }
        }
        let vol = self.epsilon.powi(d as i32);
        let (mut l2, mut grad, mut diff, mut base) = (0.0, 0.0, 0.0, 0.0);
        for (i, &c) in self.cells.iter().enumerate() {
            let v: Vec<Vec<f64>> = (0..nk)
                .map(|kappa| widen(u.cell(self.corners[i][kappa]), u.comps, d))
                .collect();
            let own = widen(u.cell(c), u.comps, d);
            let dv: Vec<Vec<f64>> = v
                .iter()
                .map(|x| x.iter().zip(&own).map(|(a, b)| a - b).collect())
                .collect();
            let hv: Vec<Vec<f64>> = v.iter().map(|x| h.matvec(x)).collect();
            let hdv: Vec<Vec<f64>> = dv.iter().map(|x| h.matvec(x)).collect();
            for a in 0..nk {
                for b in 0..nk {
                    let g = crate::linalg::dot(&v[a], &hv[b]);
                    l2 += mass[a * nk + b] * g;
                    grad += stiff[a * nk + b] * g;
                    diff += mass[a * nk + b] * crate::linalg::dot(&dv[a], &hdv[b]);
                }
            }
            base += h.quad(&own);
        }
        let eps2 = self.epsilon * self.epsilon;
        Ok(QNorms {
            h1: (vol * (l2 + grad / eps2)).max(0.0).sqrt(),
            diff: (vol * diff).max(0.0).sqrt(),
            unfolded: (vol * base).max(0.0).sqrt(),
        })
    }
}

/// `Δ_k φ = φ(· + εe_k) − φ` on the cells with centre in `ω`, by cell
/// re-indexing. The result is stored over those cells only.
pub fn shift_difference(
    mesh: &CrackedMesh,
    phi: &[f64],
    comps: usize,
    axis: usize,
    omega: &BoxDomain,
) -> Result<UnfoldedField> {
    let d = mesh.dim;
    if axis >= d {
        return Err(invalid(format!("shift axis {axis} out of range")));
    }
    let full = unfold_domain(mesh, phi, comps)?;
    let cells = cells_in(mesh, omega);
    if cells.is_empty() {
        return Err(Error::Geometry(format!(
            "no cell centre lies in ω at ε = {}",
            mesh.epsilon
        )));
    }
    let index: HashMap<[i64; 3], usize> = mesh.cells.iter().enumerate().map(|(i, x)| (*x, i)).collect();
    let w = full.per_cell * comps;
    let mut values = Vec::with_capacity(cells.len() * w);
    for &c in &cells {
        let mut t = mesh.cells[c];
        t[axis] += 1;
        let Some(&n) = index.get(&t) else {
            return Err(Error::Geometry(format!(
                "shift of cell {:?} along axis {axis} exits the tiled region",
                &mesh.cells[c][..d]
            )));
        };
        let (a, b) = (full.cell(n), full.cell(c));
        values.extend(a.iter().zip(b).map(|(x, y)| x - y));
    }
    Ok(UnfoldedField {
        epsilon: mesh.epsilon,
        dim: d,
        comps,
        layout: Layout::Nodal,
        cells,
        per_cell: full.per_cell,
        values,
    })
}

/// One row of the identity report.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    pub identity: String,
    pub epsilon: f64,
    pub alpha: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

impl IdentityCheck {
    pub fn new(identity: &str, epsilon: f64, alpha: Option<f64>, lhs: f64, rhs: f64) -> Self {
        Self {
            identity: identity.into(),
            epsilon,
            alpha,
            lhs,
            rhs,
            rel_err: rel(lhs, rhs),
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err <= tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Uniform random values in `[lo, hi)`.
pub fn random_values(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Exact unfolding identities on `n_fields` random fields: `L²` norm
/// preservation, the gradient identity, the boundary integral identity, the
/// `ε^{1/p}` boundary norm identities and `𝒰^b_ε ∘ 𝒯^b_ε = id`.
pub fn verify_exact(
    cell: &ReferenceCell,
    mesh: &CrackedMesh,
    n_fields: usize,
    seed: u64,
) -> Result<Vec<IdentityCheck>> {
    check_layout(cell, mesh)?;
    let d = mesh.dim;
    let eps = mesh.epsilon;
    let grams = RefGrams::new(cell);
    let phys_mass = assemble_mass_range(mesh, 0..mesh.lambda_elems);
    let ref_space = cell.crack_space();
    let phys_spaces: Vec<TraceSpace> = (0..mesh.n_cells()).map(|c| mesh.crack_space(c)).collect();
    let nt = mesh.ref_crack_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n_fields {
        let u = random_values(mesh.n_dofs(), -1.0, 1.0, &mut rng);
        let tu = unfold_domain(mesh, &u, d)?;
        out.push(IdentityCheck::new(
            "l2_domain",
            eps,
            None,
            unfolded_l2(&grams, &tu)?,
            phys_mass.quad(&u).sqrt(),
        ));

        let g = unfold_gradient(mesh, &u, d)?;
        let gy = reference_gradient(cell, &tu)?;
        let num: f64 = g.values.iter().zip(&gy.values).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = gy.values.iter().map(|b| b * b).sum();
        let mut chk = IdentityCheck::new("gradient", eps, None, crate::linalg::norm2(&g.values), den.sqrt());
        chk.rel_err = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        out.push(chk);

        // positive scalar traces keep the integral away from cancellation
        let s = random_values(mesh.n_nodes(), 0.5, 1.5, &mut rng);
        let tr = crack_trace(mesh, &s, 1, Side::Outer);
        let tb = unfold_boundary(mesh, &tr)?;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for c in 0..mesh.n_cells() {
            lhs += trace_integral(&ref_space, tb.cell(c));
            rhs += trace_integral(&phys_spaces[c], &tr.values[c * nt..(c + 1) * nt]);
        }
        out.push(IdentityCheck::new(
            "boundary_integral",
            eps,
            None,
            eps.powi(d as i32) * lhs,
            eps * rhs,
        ));

        let tr = crack_trace(mesh, &u, d, Side::Jump);
        let tb = unfold_boundary(mesh, &tr)?;
        for p in [1.0, 2.0] {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for c in 0..mesh.n_cells() {
                lhs += trace_lp_power(&ref_space, tb.cell(c), d, p);
                rhs += trace_lp_power(&phys_spaces[c], &tr.values[c * nt * d..(c + 1) * nt * d], d, p);
            }
            let name = if p == 1.0 { "boundary_l1" } else { "boundary_l2" };
            out.push(IdentityCheck::new(
                name,
                eps,
                None,
                (eps.powi(d as i32) * lhs).powf(1.0 / p),
                eps.powf(1.0 / p) * rhs.powf(1.0 / p),
            ));
        }

        let back = average_boundary(mesh, &tb)?;
        let err = back
            .values
            .iter()
            .zip(&tr.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut chk = IdentityCheck::new(
            "left_inverse",
            eps,
            None,
            crate::linalg::norm2(&back.values),
            crate::linalg::norm2(&tr.values),
        );
        chk.rel_err = err / crate::linalg::max_abs(&tr.values).max(f64::MIN_POSITIVE);
        out.push(chk);
    }
    Ok(out)
}

/// Per-cell physical and reference fractional Grams for one `α`.
struct FracPair {
    ref_mass: Mat<f64>,
    ref_gram: Mat<f64>,
    phys_mass: Vec<Mat<f64>>,
    phys_gram: Vec<Mat<f64>>,
}

impl FracPair {
    fn new(cell: &ReferenceCell, mesh: &CrackedMesh, alpha: f64, q: &FracQuadrature) -> Result<Self> {
        let rs = cell.crack_space();
        let mut phys_mass = Vec::new();
        let mut phys_gram = Vec::new();
        for c in 0..mesh.n_cells() {
            let s = mesh.crack_space(c);
            phys_mass.push(trace_mass(&s));
            phys_gram.push(slobodetsky_gram(&s, alpha, q)?);
        }
        Ok(Self {
            ref_mass: trace_mass(&rs),
            ref_gram: slobodetsky_gram(&rs, alpha, q)?,
            phys_mass,
            phys_gram,
        })
    }
}

fn scalar_component(v: &[f64], comps: usize, k: usize) -> Vec<f64> {
    v.iter().skip(k).step_by(comps).copied().collect()
}

fn dual_sq(h: &Mat<f64>, g: &[f64]) -> Result<f64> {
    let ch = DenseCholesky::factor(h)
        .map_err(|_| Error::LinearAlgebra("singular trace Gram matrix".into()))?;
    let x = ch.solve(g);
    Ok(crate::linalg::dot(g, &x))
}

fn add_scaled(a: &Mat<f64>, b: &Mat<f64>, s: f64) -> Mat<f64> {
    let mut out = a.clone();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[(i, j)] += s * b[(i, j)];
        }
    }
    out
}

/// Fractional scaling identities for each `α`: the seminorm factor
/// `ε^{1/2+α}`, the dual-norm factor `ε^{1/2}`, the duality pairing, and for
/// `α = 1/2` the jump norm factor `ε^{1/2}`. The physical side integrates on
/// the actual cracks of `mesh`, the unfolded side on the reference crack.
pub fn verify_scaling(
    cell: &ReferenceCell,
    mesh: &CrackedMesh,
    alphas: &[f64],
    n_fields: usize,
    seed: u64,
    q: &FracQuadrature,
) -> Result<Vec<IdentityCheck>> {
    check_layout(cell, mesh)?;
    let d = mesh.dim;
    let eps = mesh.epsilon;
    let vol = eps.powi(d as i32);
    let nt = mesh.ref_crack_nodes;
    let nc = mesh.n_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("α = {alpha} must lie in (0, 1)")));
        }
        let fp = FracPair::new(cell, mesh, alpha, q)?;
        let ref_h = add_scaled(&fp.ref_mass, &fp.ref_gram, 1.0);
        let phys_h: Vec<Mat<f64>> = (0..nc)
            .map(|c| add_scaled(&fp.phys_mass[c], &fp.phys_gram[c], eps.powf(2.0 * alpha)))
            .collect();
        for _ in 0..n_fields {
            let s = random_values(mesh.n_nodes(), -1.0, 1.0, &mut rng);
            let tr = crack_trace(mesh, &s, 1, Side::Outer);
            let tb = unfold_boundary(mesh, &tr)?;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for c in 0..nc {
                lhs += vol * quad_dense(&fp.ref_gram, tb.cell(c));
                rhs += quad_dense(&fp.phys_gram[c], &tr.values[c * nt..(c + 1) * nt]);
            }
            out.push(IdentityCheck::new(
                "seminorm_scaling",
                eps,
                Some(alpha),
                lhs.sqrt(),
                eps.powf(0.5 + alpha) * rhs.sqrt(),
            ));

            let g = BoundaryTrace {
                comps: 1,
                side: Side::Outer,
                values: random_values(mesh.crack_nodes.len(), -1.0, 1.0, &mut rng),
            };
            let tg = unfold_dual(mesh, &g)?;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for c in 0..nc {
                lhs += dual_sq(&ref_h, tg.cell(c))? / vol;
                rhs += dual_sq(&phys_h[c], &g.values[c * nt..(c + 1) * nt])?;
            }
            out.push(IdentityCheck::new(
                "dual_scaling",
                eps,
                Some(alpha),
                lhs.sqrt(),
                eps.sqrt() * rhs.sqrt(),
            ));

            // g = L² pairing against φ₀, moments from the physical mass
            let phi0 = random_values(mesh.n_nodes(), -1.0, 1.0, &mut rng);
            let t0 = crack_trace(mesh, &phi0, 1, Side::Outer);
            let mut mom = vec![0.0; t0.values.len()];
            for c in 0..nc {
                let m = matvec_dense(&fp.phys_mass[c], &t0.values[c * nt..(c + 1) * nt]);
                mom[c * nt..(c + 1) * nt].copy_from_slice(&m);
            }
            let g0 = BoundaryTrace {
                comps: 1,
                side: Side::Outer,
                values: mom,
            };
            let lhs = pairing(&unfold_dual(mesh, &g0)?, &tb);
            let tb0 = unfold_boundary(mesh, &t0)?;
            let mut rhs = 0.0;
            for c in 0..nc {
                rhs += vol * bilinear_dense(&fp.ref_mass, tb0.cell(c), tb.cell(c));
            }
            out.push(IdentityCheck::new("dual_pairing", eps, Some(alpha), lhs, rhs));

            if (alpha - 0.5).abs() < 1e-12 {
                let u = random_values(mesh.n_dofs(), -1.0, 1.0, &mut rng);
                let tr = crack_trace(mesh, &u, d, Side::Jump);
                let tb = unfold_boundary(mesh, &tr)?;
                let (mut lhs, mut rhs) = (0.0, 0.0);
                for c in 0..nc {
                    for k in 0..d {
                        lhs += vol * quad_dense(&ref_h, &scalar_component(tb.cell(c), d, k));
                        let pv = &tr.values[c * nt * d..(c + 1) * nt * d];
                        rhs += quad_dense(&phys_h[c], &scalar_component(pv, d, k));
                    }
                }
                out.push(IdentityCheck::new(
                    "jump_h12",
                    eps,
                    Some(alpha),
                    lhs.sqrt(),
                    eps.sqrt() * rhs.sqrt(),
                ));
            }
        }
    }
    Ok(out)
}

fn matvec_dense(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

fn bilinear_dense(m: &Mat<f64>, a: &[f64], b: &[f64]) -> f64 {
    crate::linalg::dot(a, &matvec_dense(m, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_regularization_range;
    use crate::geometry::{build_reference_cell, tile_domain, CellSpec, CrackShape, Face};

    fn setup(eps: f64) -> (ReferenceCell, CrackedMesh) {
        let cell = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.25, 0.5), 8)).unwrap();
        let mesh = tile_domain(
            BoxDomain::unit(2),
            &[Face { axis: 0, upper: false }],
            &cell,
            eps,
        )
        .unwrap();
        (cell, mesh)
    }

    fn scalar_of(mesh: &CrackedMesh, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        mesh.coords.iter().map(f).collect()
    }

    #[test]
    fn unfolding_a_linear_function() {
        let (cell, mesh) = setup(0.5);
        let phi = scalar_of(&mesh, |x| x[0]);
        let u = unfold_domain(&mesh, &phi, 1).unwrap();
        let c = mesh.cell_index(&[1, 0, 0]).unwrap();
        for r in 0..cell.n_nodes() {
            let y = cell.mesh.coords[r];
            assert!((u.value(c, r, 0) - 0.5 * (1.0 + y[0])).abs() < 1e-14);
        }
        let g = reference_gradient(&cell, &u).unwrap();
        for v in g.values.chunks(2) {
            assert!((v[0] - 0.5).abs() < 1e-12 && v[1].abs() < 1e-12);
        }
    }

    #[test]
    fn layout_matches_reference() {
        let (cell, mesh) = setup(0.25);
        check_layout(&cell, &mesh).unwrap();
    }

    #[test]
    fn exact_identities_hold() {
        let (cell, mesh) = setup(0.25);
        for chk in verify_exact(&cell, &mesh, 2, 3).unwrap() {
            assert!(chk.passes(1e-12), "{chk:?}");
        }
    }

    #[test]
    fn constant_trace_integral_scales_with_measure() {
        let (cell, mesh) = setup(0.25);
        let tr = BoundaryTrace {
            comps: 1,
            side: Side::Outer,
            values: vec![1.0; mesh.crack_nodes.len()],
        };
        let tb = unfold_boundary(&mesh, &tr).unwrap();
        let rs = cell.crack_space();
        let lhs: f64 = (0..mesh.n_cells())
            .map(|c| 0.0625 * trace_integral(&rs, tb.cell(c)))
            .sum();
        assert!((lhs - 0.25 * mesh.crack_measure()).abs() < 1e-13);
    }

    #[test]
    fn averaging_a_macroscopic_linear_gives_cell_means() {
        let (_, mesh) = setup(0.25);
        let tr = average_boundary_sampled(&mesh, 1, Side::Outer, 2, |x, _, o| o[0] = x[0]);
        for c in 0..mesh.n_cells() {
            let want = 0.25 * mesh.cells[c][0] as f64 + 0.125;
            for t in c * mesh.ref_crack_nodes..(c + 1) * mesh.ref_crack_nodes {
                assert!((tr.values[t] - want).abs() < 1e-14);
            }
        }
        // Φ(x, y) = g(y)
        let tr = average_boundary_sampled(&mesh, 1, Side::Outer, 2, |_, y, o| o[0] = y[1]);
        for (t, cn) in mesh.crack_nodes.iter().enumerate() {
            let x = mesh.coords[cn.outer][1] / 0.25;
            assert!((tr.values[t] - (x - x.floor())).abs() < 1e-12 || (tr.values[t] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_identities_hold() {
        let (cell, mesh) = setup(0.5);
        let q = FracQuadrature::for_dim(2);
        for chk in verify_scaling(&cell, &mesh, &[0.25, 0.5], 1, 5, &q).unwrap() {
            assert!(chk.passes(1e-9), "{chk:?}");
        }
    }

    #[test]
    fn q_reproduces_linears_and_constants() {
        let (cell, mesh) = setup(0.25);
        let omega = BoxDomain {
            dim: 2,
            lo: [0.25, 0.25, 0.0],
            hi: [0.75, 0.75, 0.0],
        };
        let phi = scalar_of(&mesh, |x| x[0]);
        let u = unfold_domain(&mesh, &phi, 1).unwrap();
        let q = interpolate_q(&mesh, &u, &omega).unwrap();
        assert_eq!(q.clamped, 0);
        for (i, &c) in q.cells.iter().enumerate() {
            for z in [[0.3, 0.7, 0.0], [0.9, 0.1, 0.0]] {
                for r in [0, 5, 17] {
                    let y = cell.mesh.coords[r];
                    let x0 = 0.25 * (mesh.cells[c][0] as f64 + z[0]);
                    assert!((q.value(i, &z, r, 0) - (x0 + 0.25 * y[0])).abs() < 1e-13);
                }
            }
        }
        let ones = vec![1.0; mesh.n_nodes()];
        let u = unfold_domain(&mesh, &ones, 1).unwrap();
        let q = interpolate_q(&mesh, &u, &omega).unwrap();
        let grams = RefGrams::new(&cell);
        let n = q.norms(&grams).unwrap();
        assert!(n.diff < 1e-12);
        assert!((n.h1 - n.unfolded).abs() < 1e-12);
    }

    #[test]
    fn q_rejects_omega_outside_tiling() {
        let cell = build_reference_cell(CellSpec::new(2, CrackShape::circle(0.25, 0.5), 8)).unwrap();
        let dom = BoxDomain {
            dim: 2,
            lo: [0.0; 3],
            hi: [1.1, 1.0, 0.0],
        };
        let mesh = tile_domain(dom, &[Face { axis: 0, upper: false }], &cell, 0.25).unwrap();
        let u = unfold_domain(&mesh, &vec![0.0; mesh.n_nodes()], 1).unwrap();
        let omega = BoxDomain {
            dim: 2,
            lo: [0.5, 0.25, 0.0],
            hi: [1.05, 0.75, 0.0],
        };
        assert!(matches!(interpolate_q(&mesh, &u, &omega), Err(Error::Geometry(_))));
    }

    #[test]
    fn shift_of_linear_and_periodic_fields() {
        let (cell, mesh) = setup(0.25);
        let omega = BoxDomain {
            dim: 2,
            lo: [0.0, 0.0, 0.0],
            hi: [0.7, 1.0, 0.0],
        };
        let phi = scalar_of(&mesh, |x| x[0]);
        let s = shift_difference(&mesh, &phi, 1, 0, &omega).unwrap();
        assert!(s.values.iter().all(|v| (v - 0.25).abs() < 1e-14));
        let per = scalar_of(&mesh, |x| (2.0 * std::f64::consts::PI * x[0] / 0.25).sin());
        let s = shift_difference(&mesh, &per, 1, 0, &omega).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-12));
        let omega_all = BoxDomain::unit(2);
        assert!(shift_difference(&mesh, &phi, 1, 0, &omega_all).is_err());
        let _ = cell;
    }

    #[test]
    fn n_eps_matches_physical_assembly() {
        let (cell, mesh) = setup(0.25);
        let grams = RefGrams::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_values(mesh.n_dofs(), -1.0, 1.0, &mut rng);
        let tu = unfold_domain(&mesh, &u, 2).unwrap();
        let got = n_eps(&grams, &tu).unwrap();
        let e_cells = crate::assembly::assemble_elasticity_range(
            &mesh,
            &crate::assembly::Stiffness::isotropic(0.0, 0.5),
            0..mesh.lambda_elems,
        );
        let b_cells = assemble_regularization_range(&mesh, 0.0, &[], 0..mesh.lambda_elems);
        let want = (e_cells.quad(&u) + 0.0625 * b_cells.quad(&u)).sqrt();
        assert!((got - want).abs() < 1e-11 * want, "{got} {want}");
    }
}
