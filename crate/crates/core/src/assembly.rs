//! Global operators on a cracked mesh.
//!
//! Dofs are interleaved, `node * dim + component`. Cell elements see the
//! elasticity tensor at their reference coordinate `y = x/ε - ξ`; boundary-layer
//! elements see it at `{x/ε}`.

use std::collections::HashMap;
use std::ops::Range;

use faer::Mat;

use crate::error::{invalid, Result};
use crate::fe::{p2_values, Affine};
use crate::geometry::{
    facet_local_nodes, nodes_per_element, nodes_per_facet, CrackShape, CrackedMesh, Point,
    TraceSpace,
};
use crate::linalg::{symmetric_eigen, Csr, DenseCholesky, Triplets};
use crate::quadrature::{simplex_rule, SimplexRule};

pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

/// Elasticity tensor field on the reference cell, extended periodically.
#[derive(Debug, Clone, PartialEq)]
pub enum Stiffness {
    Isotropic {
        lambda: f64,
        mu: f64,
    },
    /// Matrix outside the inclusion, inclusion inside, blended by a `C¹`
    /// smoothstep over a band of `width` inside the level set.
    TwoPhase {
        matrix: (f64, f64),
        inclusion: (f64, f64),
        width: f64,
        shape: CrackShape,
    },
    /// Constant anisotropic tensor.
    Constant(Box<Tensor4>),
}

fn isotropic_tensor(lambda: f64, mu: f64) -> Tensor4 {
    let mut a = [[[[0.0; 3]; 3]; 3]; 3];
    let dl = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    a[i][j][k][l] =
                        lambda * dl(i, j) * dl(k, l) + mu * (dl(i, k) * dl(j, l) + dl(i, l) * dl(j, k));
                }
            }
        }
    }
    a
}

impl Stiffness {
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        Stiffness::Isotropic { lambda, mu }
    }

    /// From Young's modulus and Poisson ratio.
    pub fn from_young(young: f64, poisson: f64) -> Self {
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        Stiffness::Isotropic { lambda, mu }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Stiffness::TwoPhase { .. })
    }

    pub fn at(&self, dim: usize, y: &Point) -> Tensor4 {
        match self {
            Stiffness::Isotropic { lambda, mu } => isotropic_tensor(*lambda, *mu),
            Stiffness::Constant(a) => **a,
            Stiffness::TwoPhase {
                matrix,
                inclusion,
                width,
                shape,
            } => {
                let phi = shape.level_set(y, dim);
                let t = if phi >= 0.0 {
                    0.0
                } else if phi <= -width {
                    1.0
                } else {
                    let s = -phi / width;
                    s * s * (3.0 - 2.0 * s)
                };
                let lambda = (1.0 - t) * matrix.0 + t * inclusion.0;
                let mu = (1.0 - t) * matrix.1 + t * inclusion.1;
                isotropic_tensor(lambda, mu)
            }
        }
    }

    fn samples(&self) -> Vec<Tensor4> {
        match self {
            Stiffness::TwoPhase {
                matrix, inclusion, ..
            } => vec![
                isotropic_tensor(matrix.0, matrix.1),
                isotropic_tensor(inclusion.0, inclusion.1),
            ],
            _ => vec![self.at(3, &[0.0; 3])],
        }
    }

    /// `(ᾱ, ‖a‖)`: coercivity and bound on symmetric matrices. Blends are
    /// convex combinations, so the phase tensors bracket every point.
    pub fn bounds(&self, dim: usize) -> Result<(f64, f64)> {
        let basis = strain_basis(dim);
        let m = basis.len();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for a in self.samples() {
            let mut q = Mat::<f64>::zeros(m, m);
            let mut asym: f64 = 0.0;
            for (p, ep) in basis.iter().enumerate() {
                for (r, er) in basis.iter().enumerate() {
                    q[(p, r)] = contract(&a, ep, er);
                }
            }
            for p in 0..m {
                for r in 0..m {
                    asym = asym.max((q[(p, r)] - q[(r, p)]).abs());
                }
            }
            if asym > 1e-12 * (1.0 + q.norm_max()) {
                return Err(invalid("elasticity tensor lacks major symmetry"));
            }
            let (vals, _) = symmetric_eigen(&q)?;
            lo = lo.min(vals[0]);
            hi = hi.max(vals[m - 1]);
        }
        if !(lo > 0.0) {
            return Err(invalid(format!(
                "elasticity tensor is not coercive (smallest eigenvalue {lo})"
            )));
        }
        Ok((lo, hi))
    }
}

/// Orthonormal basis of symmetric `d×d` matrices.
pub fn strain_basis(dim: usize) -> Vec<[[f64; 3]; 3]> {
    let mut out = Vec::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        let mut e = [[0.0; 3]; 3];
        e[i][i] = 1.0;
        out.push(e);
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut e = [[0.0; 3]; 3];
            e[i][j] = s;
            e[j][i] = s;
            out.push(e);
        }
    }
    out
}

/// `a e : f`.
pub fn contract(a: &Tensor4, e: &[[f64; 3]; 3], f: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    s += a[i][j][k][l] * f[k][l] * e[i][j];
                }
            }
        }
    }
    s
}

/// `a e`.
pub fn apply_tensor(a: &Tensor4, e: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    s[i][j] += a[i][j][k][l] * e[k][l];
                }
            }
        }
    }
    s
}

/// Reference-cell coordinate seen by element `e` at physical point `x`.
pub fn cell_coordinate(mesh: &CrackedMesh, e: usize, x: &Point) -> Point {
    let mut y = [0.0; 3];
    match mesh.elems[e].cell {
        Some(c) => {
            for k in 0..mesh.dim {
                y[k] = x[k] / mesh.epsilon - mesh.cells[c][k] as f64;
            }
        }
        None => {
            for k in 0..mesh.dim {
                let t = x[k] / mesh.epsilon;
                y[k] = t - t.floor();
            }
        }
    }
    y
}

pub fn element_affine(mesh: &CrackedMesh, e: usize) -> Affine {
    Affine::new(mesh.dim, &mesh.elem_verts(e))
}

fn assemble_local<F>(mesh: &CrackedMesh, elems: Range<usize>, kernel: F) -> Csr
where
    F: Fn(usize, &Affine, &mut [f64]),
{
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let nl = npe * d;
    let mut t = Triplets::with_capacity(elems.len() * nl * nl);
    let mut local = vec![0.0; nl * nl];
    for e in elems {
        let aff = element_affine(mesh, e);
        local.iter_mut().for_each(|v| *v = 0.0);
        kernel(e, &aff, &mut local);
        let nodes = &mesh.elems[e].nodes;
        for a in 0..npe {
            for c in 0..d {
                let r = nodes[a] * d + c;
                for b in 0..npe {
                    for dd in 0..d {
                        let v = local[(a * d + c) * nl + b * d + dd];
                        if v != 0.0 {
                            t.push(r, nodes[b] * d + dd, v);
                        }
                    }
                }
            }
        }
    }
    let n = mesh.n_dofs();
    t.into_csr(n, n)
}

/// Elasticity stiffness `∫ a e(u) : e(v)`.
pub fn assemble_elasticity(mesh: &CrackedMesh, stiffness: &Stiffness) -> Csr {
    assemble_elasticity_range(mesh, stiffness, 0..mesh.elems.len())
}

pub fn assemble_elasticity_range(
    mesh: &CrackedMesh,
    stiffness: &Stiffness,
    elems: Range<usize>,
) -> Csr {
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let nl = npe * d;
    let rule = simplex_rule(d, if stiffness.is_constant() { 2 } else { 3 });
    let fact = if d == 2 { 2.0 } else { 6.0 };
    assemble_local(mesh, elems, |e, aff, local| {
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let g = aff.grads(b);
            let x = aff.point(b);
            let a = stiffness.at(d, &cell_coordinate(mesh, e, &x));
            let wq = w * fact * aff.volume;
            for p in 0..npe {
                for c in 0..d {
                    for q in 0..npe {
                        for dd in 0..d {
                            let mut s = 0.0;
                            for j in 0..d {
                                for l in 0..d {
                                    s += a[c][j][dd][l] * g[p][j] * g[q][l];
                                }
                            }
                            local[(p * d + c) * nl + q * d + dd] += wq * s;
                        }
                    }
                }
            }
        }
    })
}

/// `∫ e(u) : e(v)`.
pub fn assemble_strain_gram(mesh: &CrackedMesh) -> Csr {
    assemble_elasticity(mesh, &Stiffness::isotropic(0.0, 0.5))
}

/// Vector mass matrix `∫ u · v`.
pub fn assemble_mass(mesh: &CrackedMesh) -> Csr {
    assemble_mass_range(mesh, 0..mesh.elems.len())
}

pub fn assemble_mass_range(mesh: &CrackedMesh, elems: Range<usize>) -> Csr {
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let nl = npe * d;
    let rule = simplex_rule(d, 3);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    assemble_local(mesh, elems, |_, aff, local| {
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(d, b);
            let wq = w * fact * aff.volume;
            for p in 0..npe {
                for q in 0..npe {
                    for c in 0..d {
                        local[(p * d + c) * nl + q * d + c] += wq * v[p] * v[q];
                    }
                }
            }
        }
    })
}

/// `∫ ∇u : ∇v`.
pub fn assemble_grad_gram(mesh: &CrackedMesh) -> Csr {
    assemble_grad_gram_range(mesh, 0..mesh.elems.len())
}

pub fn assemble_grad_gram_range(mesh: &CrackedMesh, elems: Range<usize>) -> Csr {
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let nl = npe * d;
    let rule = simplex_rule(d, 2);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    assemble_local(mesh, elems, |_, aff, local| {
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let g = aff.grads(b);
            let wq = w * fact * aff.volume;
            for p in 0..npe {
                for q in 0..npe {
                    let s: f64 = (0..d).map(|k| g[p][k] * g[q][k]).sum();
                    for c in 0..d {
                        local[(p * d + c) * nl + q * d + c] += wq * s;
                    }
                }
            }
        }
    })
}

/// `∂_k e_ij` of basis function `(node a, component c)`, constant per element.
fn strain_gradients(aff: &Affine) -> Vec<[[[f64; 3]; 3]; 3]> {
    let d = aff.dim;
    let npe = nodes_per_element(d);
    let h = aff.hessians();
    let mut out = vec![[[[0.0; 3]; 3]; 3]; npe * d];
    for a in 0..npe {
        for c in 0..d {
            let g = &mut out[a * d + c];
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let mut v = 0.0;
                        if i == c {
                            v += 0.5 * h[a][j][k];
                        }
                        if j == c {
                            v += 0.5 * h[a][i][k];
                        }
                        g[i][j][k] = v;
                    }
                }
            }
        }
    }
    out
}

/// Strain of basis `(a, c)` at element barycentric `b`.
fn basis_strains(aff: &Affine, b: &[f64; 4]) -> Vec<[[f64; 3]; 3]> {
    let d = aff.dim;
    let npe = nodes_per_element(d);
    let g = aff.grads(b);
    let mut out = vec![[[0.0; 3]; 3]; npe * d];
    for a in 0..npe {
        for c in 0..d {
            let e = &mut out[a * d + c];
            for j in 0..d {
                e[c][j] += 0.5 * g[a][j];
                e[j][c] += 0.5 * g[a][j];
            }
        }
    }
    out
}

/// Broken strain-gradient regularization `Σ_K ∫_K ∇e : ∇e` plus the penalty
/// `η/h_F ∫_F [e] : [e]` over interior facets. Crack faces carry distinct
/// node ids and never match. `periodic` identifies nodes `(slave, master)`
/// so opposite cell faces pair up.
pub fn assemble_regularization(
    mesh: &CrackedMesh,
    eta: f64,
    periodic: &[(usize, usize)],
) -> Csr {
    assemble_regularization_range(mesh, eta, periodic, 0..mesh.elems.len())
}

pub fn assemble_regularization_range(
    mesh: &CrackedMesh,
    eta: f64,
    periodic: &[(usize, usize)],
    elems: Range<usize>,
) -> Csr {
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let nl = npe * d;
    let volume = assemble_local(mesh, elems.clone(), |_, aff, local| {
        let sg = strain_gradients(aff);
        for p in 0..nl {
            for q in 0..nl {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        for k in 0..d {
                            s += sg[p][i][j][k] * sg[q][i][j][k];
                        }
                    }
                }
                local[p * nl + q] = aff.volume * s;
            }
        }
    });
    let mut master: Vec<usize> = (0..mesh.n_nodes()).collect();
    for &(s, m) in periodic {
        master[s] = m;
    }
    // facets keyed by mapped P2 node sets
    let nf = nodes_per_facet(d);
    let mut owners: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
    for e in elems {
        for k in 0..=d {
            let mut key: Vec<usize> = facet_local_nodes(d, k)
                .iter()
                .map(|&l| master[mesh.elems[e].nodes[l]])
                .collect();
            key.sort_unstable();
            owners.entry(key).or_default().push((e, k));
        }
    }
    let frule = simplex_rule(d - 1, 2);
    let ffact = if d == 2 { 1.0 } else { 2.0 };
    let mut t = Triplets::with_capacity(0);
    let mut keys: Vec<_> = owners.into_iter().filter(|(_, o)| o.len() == 2).collect();
    keys.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    for (_, o) in keys {
        let (e1, k1) = o[0];
        let (e2, k2) = o[1];
        let a1 = element_affine(mesh, e1);
        let a2 = element_affine(mesh, e2);
        let v1: Vec<usize> = (0..=d).filter(|&v| v != k1).collect();
        // vertex of e2 matching each facet vertex of e1
        let v2: Vec<usize> = v1
            .iter()
            .map(|&v| {
                let id = master[mesh.elems[e1].nodes[v]];
                (0..=d)
                    .find(|&w| w != k2 && master[mesh.elems[e2].nodes[w]] == id)
                    .expect("matched facets share vertices")
            })
            .collect();
        let fv = {
            let mut fv = [[0.0; 3]; 3];
            for (i, &v) in v1.iter().enumerate() {
                fv[i] = a1.verts[v];
            }
            fv
        };
        let area = crate::geometry::facet_measure(d, &fv);
        let hf = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| crate::geometry::norm(&crate::geometry::sub(&fv[i], &fv[j])))
            .fold(0.0, f64::max);
        let hf = if d == 2 { area } else { hf };
        let mut local = vec![0.0; 4 * nl * nl];
        for (fb, w) in frule.bary.iter().zip(&frule.weights) {
            let mut b1 = [0.0; 4];
            let mut b2 = [0.0; 4];
            for i in 0..d {
                b1[v1[i]] = fb[i];
                b2[v2[i]] = fb[i];
            }
            let s1 = basis_strains(&a1, &b1);
            let s2 = basis_strains(&a2, &b2);
            let wq = eta / hf * w * ffact * area;
            // rows/cols: first element's dofs then the second's, jump = e1 - e2
            let all: Vec<(f64, &[[f64; 3]; 3])> = s1
                .iter()
                .map(|s| (1.0, s))
                .chain(s2.iter().map(|s| (-1.0, s)))
                .collect();
            for (p, (sp, ep)) in all.iter().enumerate() {
                for (q, (sq, eq)) in all.iter().enumerate() {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += ep[i][j] * eq[i][j];
                        }
                    }
                    local[p * 2 * nl + q] += wq * sp * sq * s;
                }
            }
        }
        let dof = |p: usize| -> usize {
            let (e, l) = if p < nl { (e1, p) } else { (e2, p - nl) };
            mesh.elems[e].nodes[l / d] * d + l % d
        };
        for p in 0..2 * nl {
            for q in 0..2 * nl {
                let v = local[p * 2 * nl + q];
                if v != 0.0 {
                    t.push(dof(p), dof(q), v);
                }
            }
        }
    }
    let _ = nf;
    let n = mesh.n_dofs();
    volume.add_scaled(&t.into_csr(n, n), 1.0)
}

/// Load vector `∫ f · v`.
pub fn assemble_load<F>(mesh: &CrackedMesh, f: F) -> Vec<f64>
where
    F: Fn(&Point) -> [f64; 3],
{
    let d = mesh.dim;
    let npe = nodes_per_element(d);
    let rule = simplex_rule(d, 3);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let mut out = vec![0.0; mesh.n_dofs()];
    for e in 0..mesh.elems.len() {
        let aff = element_affine(mesh, e);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(d, b);
            let fx = f(&aff.point(b));
            let wq = w * fact * aff.volume;
            for a in 0..npe {
                let n = mesh.elems[e].nodes[a];
                for c in 0..d {
                    out[n * d + c] += wq * v[a] * fx[c];
                }
            }
        }
    }
    out
}

/// Nodal interpolation of a vector field.
pub fn interpolate<F>(mesh: &CrackedMesh, f: F) -> Vec<f64>
where
    F: Fn(&Point) -> [f64; 3],
{
    let d = mesh.dim;
    let mut out = vec![0.0; mesh.n_dofs()];
    for (i, x) in mesh.coords.iter().enumerate() {
        let v = f(x);
        out[i * d..i * d + d].copy_from_slice(&v[..d]);
    }
    out
}

/// Nodal interpolation where the field may depend on the side of the crack.
pub fn interpolate_sided<F>(mesh: &CrackedMesh, f: F) -> Vec<f64>
where
    F: Fn(&Point, bool) -> [f64; 3],
{
    let d = mesh.dim;
    let mut out = vec![0.0; mesh.n_dofs()];
    for el in &mesh.elems {
        for &n in el.nodes.iter().take(nodes_per_element(d)) {
            let v = f(&mesh.coords[n], el.inner);
            out[n * d..n * d + d].copy_from_slice(&v[..d]);
        }
    }
    out
}

/// Nodal values of element `e` as `[node][comp]`.
pub fn element_values(mesh: &CrackedMesh, e: usize, u: &[f64]) -> Vec<[f64; 3]> {
    let d = mesh.dim;
    mesh.elems[e]
        .nodes
        .iter()
        .take(nodes_per_element(d))
        .map(|&n| {
            let mut v = [0.0; 3];
            v[..d].copy_from_slice(&u[n * d..n * d + d]);
            v
        })
        .collect()
}

/// Per-node frame on the crack: normal plus orthonormal tangents.
pub fn tangent_frame(dim: usize, nu: &Point) -> [Point; 2] {
    if dim == 2 {
        return [[-nu[1], nu[0], 0.0], [0.0; 3]];
    }
    // Gram-Schmidt against the coordinate axis least aligned with ν
    let k = (0..3)
        .min_by(|&a, &b| nu[a].abs().total_cmp(&nu[b].abs()))
        .unwrap();
    let mut t = [0.0; 3];
    t[k] = 1.0;
    let p = crate::geometry::dot3(&t, nu);
    for i in 0..3 {
        t[i] -= p * nu[i];
    }
    let l = crate::geometry::norm(&t);
    t.iter_mut().for_each(|x| *x /= l);
    let s = crate::geometry::cross(nu, &t);
    [t, s]
}

/// Nodal jump operator on the crack, `[v] = v_inner - v_outer`.
#[derive(Debug, Clone)]
pub struct CrackJumps {
    pub dim: usize,
    /// Crack node indices that are duplicated.
    pub nodes: Vec<usize>,
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
    pub normals: Vec<Point>,
    pub tangents: Vec<[Point; 2]>,
    /// Lumped quadrature weights.
    pub weights: Vec<f64>,
}

/// Lumped crack weights per crack node (tips included).
pub fn crack_lumped_weights(mesh: &CrackedMesh) -> Vec<f64> {
    let d = mesh.dim;
    let mut w = vec![0.0; mesh.crack_nodes.len()];
    for f in &mesh.crack_facets {
        let (wv, wm) = if d == 2 {
            (f.measure / 4.0, f.measure / 2.0)
        } else {
            (f.measure / 12.0, f.measure / 4.0)
        };
        for i in 0..nodes_per_facet(d) {
            w[f.trace[i]] += if i < d { wv } else { wm };
        }
    }
    w
}

impl CrackJumps {
    pub fn new(mesh: &CrackedMesh) -> Self {
        let w = crack_lumped_weights(mesh);
        let mut out = CrackJumps {
            dim: mesh.dim,
            nodes: Vec::new(),
            outer: Vec::new(),
            inner: Vec::new(),
            normals: Vec::new(),
            tangents: Vec::new(),
            weights: Vec::new(),
        };
        for (t, cn) in mesh.crack_nodes.iter().enumerate() {
            if cn.is_tip() {
                continue;
            }
            out.nodes.push(t);
            out.outer.push(cn.outer);
            out.inner.push(cn.inner);
            out.normals.push(cn.normal);
            out.tangents.push(tangent_frame(mesh.dim, &cn.normal));
            out.weights.push(w[t]);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn jump_vector(&self, u: &[f64], i: usize) -> Point {
        let d = self.dim;
        let mut j = [0.0; 3];
        for c in 0..d {
            j[c] = u[self.inner[i] * d + c] - u[self.outer[i] * d + c];
        }
        j
    }

    /// Normal jump `[u_ν]` per duplicated node.
    pub fn normal(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| crate::geometry::dot3(&self.jump_vector(u, i), &self.normals[i]))
            .collect()
    }

    /// Tangential jump components per duplicated node.
    pub fn tangential(&self, u: &[f64]) -> Vec<[f64; 2]> {
        (0..self.len())
            .map(|i| {
                let j = self.jump_vector(u, i);
                [
                    crate::geometry::dot3(&j, &self.tangents[i][0]),
                    crate::geometry::dot3(&j, &self.tangents[i][1]),
                ]
            })
            .collect()
    }
}

/// P2 mass matrix on a trace space.
pub fn trace_mass(space: &TraceSpace) -> Mat<f64> {
    let d = space.dim;
    let k = d - 1;
    let nf = nodes_per_facet(d);
    let rule: SimplexRule = simplex_rule(k, 3);
    let fact = if k == 1 { 1.0 } else { 2.0 };
    let mut m = Mat::<f64>::zeros(space.n_nodes, space.n_nodes);
    for f in &space.facets {
        let area = crate::geometry::facet_measure(d, &f.verts);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(k, b);
            for p in 0..nf {
                for q in 0..nf {
                    m[(f.nodes[p], f.nodes[q])] += w * fact * area * v[p] * v[q];
                }
            }
        }
    }
    m
}

/// Nodal values of `σ_ν = (a e(u) ν)·ν` projected onto continuous P2 crack
/// traces, from each side.
#[derive(Debug, Clone)]
pub struct NormalStress {
    pub outer: Vec<f64>,
    pub inner: Vec<f64>,
}

/// Per-cell `L²` projection onto crack traces; every cell shares the
/// reference factor scaled by `ε^{d-1}`.
pub struct StressProjector {
    mass: DenseCholesky,
    scale: f64,
    nrc: usize,
}

impl StressProjector {
    pub fn new(mesh: &CrackedMesh) -> Result<Self> {
        let space = mesh.crack_space(0);
        let m = trace_mass(&space);
        // the first cell's physical mass is ε^{d-1} times the reference mass,
        // so factor it once and rescale
        Ok(Self {
            mass: DenseCholesky::factor(&m)?,
            scale: 1.0,
            nrc: mesh.ref_crack_nodes,
        })
    }

    pub fn project(&self, mesh: &CrackedMesh, stiffness: &Stiffness, u: &[f64]) -> NormalStress {
        let rhs_o = stress_moments(mesh, stiffness, u, false);
        let rhs_i = stress_moments(mesh, stiffness, u, true);
        let mut outer = vec![0.0; rhs_o.len()];
        let mut inner = vec![0.0; rhs_i.len()];
        for c in 0..mesh.n_cells() {
            let r = c * self.nrc..(c + 1) * self.nrc;
            let so = self.mass.solve(&rhs_o[r.clone()]);
            let si = self.mass.solve(&rhs_i[r.clone()]);
            for (k, i) in r.enumerate() {
                outer[i] = so[k] / self.scale;
                inner[i] = si[k] / self.scale;
            }
        }
        NormalStress { outer, inner }
    }
}

/// `∫_F σ_ν φ_t` over crack facets from one side.
fn stress_moments(mesh: &CrackedMesh, stiffness: &Stiffness, u: &[f64], inner: bool) -> Vec<f64> {
    let d = mesh.dim;
    let k = d - 1;
    let nf = nodes_per_facet(d);
    let rule = simplex_rule(k, 3);
    let fact = if k == 1 { 1.0 } else { 2.0 };
    let mut out = vec![0.0; mesh.crack_nodes.len()];
    for f in &mesh.crack_facets {
        let (e, face) = if inner {
            (f.inner_elem, f.inner_face)
        } else {
            (f.outer_elem, f.outer_face)
        };
        let aff = element_affine(mesh, e);
        let ue = element_values(mesh, e, u);
        // local vertex of `e` under facet vertex i
        let verts: Vec<usize> = (0..d)
            .map(|i| {
                let cn = &mesh.crack_nodes[f.trace[i]];
                let id = if inner { cn.inner } else { cn.outer };
                (0..=d)
                    .find(|&v| v != face && mesh.elems[e].nodes[v] == id)
                    .expect("crack facet vertex on its element")
            })
            .collect();
        for (fb, w) in rule.bary.iter().zip(&rule.weights) {
            let mut b = [0.0; 4];
            for i in 0..d {
                b[verts[i]] = fb[i];
            }
            let x = aff.point(&b);
            let a = stiffness.at(d, &cell_coordinate(mesh, e, &x));
            let eps = crate::fe::strain(&aff, &b, &ue);
            let sig = apply_tensor(&a, &eps);
            let nu = &f.normal;
            let mut sn = 0.0;
            for i in 0..d {
                for j in 0..d {
                    sn += nu[i] * sig[i][j] * nu[j];
                }
            }
            let v = p2_values(k, fb);
            for p in 0..nf {
                out[f.trace[p]] += w * fact * f.measure * sn * v[p];
            }
        }
    }
    out
}

/// Strain of `u` at the centroid of each element.
pub fn centroid_strains(mesh: &CrackedMesh, u: &[f64]) -> Vec<[[f64; 3]; 3]> {
    let d = mesh.dim;
    let c = 1.0 / (d as f64 + 1.0);
    let mut b = [0.0; 4];
    b[..=d].iter_mut().for_each(|x| *x = c);
    (0..mesh.elems.len())
        .map(|e| {
            let aff = element_affine(mesh, e);
            crate::fe::strain(&aff, &b, &element_values(mesh, e, u))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, Face};
    use crate::linalg::dot;

    fn cell(n: usize) -> crate::geometry::ReferenceCell {
        build_reference_cell(CellSpec::new(2, CrackShape::circle(0.25, 0.5), n)).unwrap()
    }

    fn rigid(mesh: &CrackedMesh) -> Vec<Vec<f64>> {
        vec![
            interpolate(mesh, |_| [1.0, 0.0, 0.0]),
            interpolate(mesh, |_| [0.0, 1.0, 0.0]),
            interpolate(mesh, |x| [-x[1], x[0], 0.0]),
        ]
    }

    #[test]
    fn rigid_motions_have_zero_energy() {
        let c = cell(8);
        let st = Stiffness::isotropic(1.0, 1.0);
        let a = assemble_elasticity(&c.mesh, &st);
        let b = assemble_regularization(&c.mesh, 10.0, &[]);
        for r in rigid(&c.mesh) {
            assert!(a.quad(&r).abs() < 1e-12);
            // penalty entries scale like 1/h³
            assert!(b.quad(&r).abs() < 1e-14 * b.max_abs() * dot(&r, &r));
        }
        assert!(a.asymmetry() < 1e-12);
        assert!(b.asymmetry() < 1e-10);
    }

    #[test]
    fn mass_integrates_constants_and_quadratics() {
        let c = cell(8);
        let m = assemble_mass(&c.mesh);
        let one = interpolate(&c.mesh, |_| [1.0, 0.0, 0.0]);
        assert!((m.quad(&one) - 1.0).abs() < 1e-13);
        let q = interpolate(&c.mesh, |x| [x[0] * x[1], 0.0, 0.0]);
        // ∫ (xy)² over the unit square
        assert!((m.bilinear(&q, &q) - 1.0 / 9.0).abs() < 1e-13);
        let f = assemble_load(&c.mesh, |x| [x[0], 0.0, 0.0]);
        assert!((dot(&f, &one) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn quadratic_field_energy_is_exact() {
        // u = (x², 0): e11 = 2x, ∫ e:e = 4/3 and ∇e constant
        let c = cell(8);
        let e = assemble_strain_gram(&c.mesh);
        let u = interpolate(&c.mesh, |x| [x[0] * x[0], 0.0, 0.0]);
        assert!((e.quad(&u) - 4.0 / 3.0).abs() < 1e-12);
        let b = assemble_regularization(&c.mesh, 10.0, &[]);
        assert!((b.quad(&u) - 4.0).abs() < 1e-10);
        let g = assemble_grad_gram(&c.mesh);
        assert!((g.quad(&u) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_sees_strain_jumps_only() {
        // piecewise-quadratic field with a kink in e across x = 1/2 on the glued mesh
        let spec = CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8).glued();
        let c = build_reference_cell(spec).unwrap();
        let u = interpolate(&c.mesh, |x| {
            let s = (x[0] - 0.5).max(0.0);
            [s * s, 0.0, 0.0]
        });
        let b0 = assemble_regularization(&c.mesh, 0.0, &[]);
        let b1 = assemble_regularization(&c.mesh, 1.0, &[]);
        // volume part: ∫_{x>1/2} |∂₁e₁₁|² = 4 · 1/2
        assert!((b0.quad(&u) - 2.0).abs() < 1e-10);
        // e11 = 2s is continuous, so the penalty adds nothing
        assert!((b1.quad(&u) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn isotropic_bounds() {
        let (lo, hi) = Stiffness::isotropic(1.0, 1.0).bounds(2).unwrap();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 4.0).abs() < 1e-12);
        assert!(Stiffness::isotropic(-2.0, 1.0).bounds(2).is_err());
    }

    #[test]
    fn jump_of_rigid_field_vanishes() {
        let c = cell(8);
        let m = tile_domain(BoxDomain::unit(2), &[Face::parse("x0").unwrap()], &c, 0.5).unwrap();
        let j = CrackJumps::new(&m);
        let u = interpolate(&m, |x| [x[1], -x[0], 0.0]);
        assert!(j.normal(&u).iter().all(|v| v.abs() < 1e-14));
        let w: f64 = crack_lumped_weights(&m).iter().sum();
        assert!((w - m.crack_measure()).abs() < 1e-12);
    }

    #[test]
    fn projected_stress_of_uniform_strain() {
        // u = (x, 0) with λ = μ = 1: σ = diag(3, 1), σ_ν = 3ν₁² + ν₂²
        let c = cell(16);
        let st = Stiffness::isotropic(1.0, 1.0);
        let u = interpolate(&c.mesh, |x| [x[0], 0.0, 0.0]);
        let p = StressProjector::new(&c.mesh).unwrap();
        let s = p.project(&c.mesh, &st, &u);
        for (t, cn) in c.mesh.crack_nodes.iter().enumerate() {
            let n = cn.normal;
            let want = 3.0 * n[0] * n[0] + n[1] * n[1];
            // nodal normals average facets, so agreement is O(h)
            assert!((s.outer[t] - want).abs() < 0.3, "{} vs {want}", s.outer[t]);
            assert!((s.outer[t] - s.inner[t]).abs() < 1e-10);
        }
    }
}
