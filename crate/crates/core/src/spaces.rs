//! Norms on cracked domains: rigid projections, Slobodetsky norms on cracks,
//! discrete dual norms and empirical Korn-type constants.
//!
//! Fractional Gram matrices integrate
//! `∫∫ (φ_a(x) - φ_a(y))(φ_b(x) - φ_b(y)) |x - y|^{-(d-1) - 2α}`
//! facet pair by facet pair. Coincident, edge- and vertex-adjacent pairs use
//! singularity-removing coordinate maps whose Jacobians absorb the kernel
//! into Gauss-Jacobi weights.

use faer::Mat;

use crate::assembly::{
    assemble_grad_gram, assemble_mass, assemble_regularization, assemble_strain_gram,
    element_affine, element_values, interpolate, trace_mass, CrackJumps,
};
use crate::error::{invalid, Error, Result};
use crate::fe::p2_values;
use crate::geometry::{
    dot3, facet_measure, nodes_per_facet, norm, sub, CrackedMesh, Point, ReferenceCell, TraceFacet,
    TraceSpace,
};
use crate::linalg::{
    dense_generalized_max, dot, lanczos_max, Cholesky, Csr, DenseCholesky, LanczosOptions,
};
use crate::quadrature::{gauss_jacobi, simplex_rule};

/// Points per axis for the facet-pair rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracQuadrature {
    pub singular: usize,
    pub near: usize,
    pub far: usize,
}

impl FracQuadrature {
    pub fn for_dim(dim: usize) -> Self {
        if dim == 2 {
            Self {
                singular: 10,
                near: 8,
                far: 4,
            }
        } else {
            Self {
                singular: 5,
                near: 4,
                far: 2,
            }
        }
    }
}

/// Point pairs in facet parameters with weights; `x̂, ŷ` live on `[0,1]`
/// (segments) or `{0 ≤ x₂ ≤ x₁ ≤ 1}` (triangles).
type PairRule = Vec<([f64; 2], [f64; 2], f64)>;

/// Tensor Gauss-Jacobi rule in up to four variables; `exps[k]` is the
/// exponent of `t^{exps[k]}` absorbed by axis `k`.
fn tensor_rule(exps: &[f64], n: usize) -> Vec<([f64; 4], f64)> {
    let rules: Vec<_> = exps.iter().map(|&b| gauss_jacobi(n, 0.0, b)).collect();
    let mut out = vec![([0.0; 4], 1.0)];
    for (k, r) in rules.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * n);
        for (p, w) in &out {
            for (t, wt) in r.points.iter().zip(&r.weights) {
                let mut q = *p;
                q[k] = *t;
                next.push((q, w * wt));
            }
        }
        out = next;
    }
    out
}

/// Pair rules for integrands behaving like `|x - y|^{-s}` near the shared
/// set; `s = 0` gives rules exact for polynomials.
pub(crate) struct SingularRules {
    pub identical: PairRule,
    pub adjacent_edge: PairRule,
    pub adjacent_vertex: PairRule,
}

impl SingularRules {
    pub fn new(dim: usize, s: f64, n: usize) -> Self {
        if dim == 2 {
            Self::segments(s, n)
        } else {
            Self::triangles(s, n)
        }
    }

    fn segments(s: f64, n: usize) -> Self {
        // coincident: t = (1-w)τ, x = t + w, plus the mirrored half
        let mut identical = Vec::new();
        for (p, w) in tensor_rule(&[-s, 0.0], n) {
            let (wv, tau) = (p[0], p[1]);
            let t = (1.0 - wv) * tau;
            let wt = w * (1.0 - wv) * wv.powf(s);
            identical.push(([t + wv, 0.0], [t, 0.0], wt));
            identical.push(([t, 0.0], [t + wv, 0.0], wt));
        }
        // shared vertex at parameter 0 of both: Duffy in each half
        let mut adjacent = Vec::new();
        for (p, w) in tensor_rule(&[1.0 - s, 0.0], n) {
            let (rho, u) = (p[0], p[1]);
            let wt = w * rho.powf(s);
            adjacent.push(([rho, 0.0], [rho * u, 0.0], wt));
            adjacent.push(([rho * u, 0.0], [rho, 0.0], wt));
        }
        Self {
            identical,
            adjacent_edge: Vec::new(),
            adjacent_vertex: adjacent,
        }
    }

    fn triangles(s: f64, n: usize) -> Self {
        type Map = fn(f64, f64, f64, f64) -> ([f64; 2], [f64; 2]);
        let mut identical = Vec::new();
        let maps: [Map; 3] = [
            |x, a, b, c| ([x, x * (1.0 - a + a * b)], [x * (1.0 - a * b * c), x * (1.0 - a)]),
            |x, a, b, c| ([x, x * a * (1.0 - b + b * c)], [x * (1.0 - a * b), x * a * (1.0 - b)]),
            |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * (1.0 - b)]),
        ];
        for (p, w) in tensor_rule(&[3.0 - s, 2.0 - s, 1.0 - s, 0.0], n) {
            let wt = w * (p[0] * p[1] * p[2]).powf(s);
            for m in &maps {
                let (x, y) = m(p[0], p[1], p[2], p[3]);
                identical.push((x, y, wt));
                identical.push((y, x, wt));
            }
        }
        let mut edge = Vec::new();
        for (p, w) in tensor_rule(&[3.0 - s, 2.0 - s, 0.0, 0.0], n) {
            let (x, a, b, c) = (p[0], p[1], p[2], p[3]);
            let wt = w * (x * a).powf(s);
            edge.push(([x, x * a * c], [x * (1.0 - a * b), x * a * (1.0 - b)], wt));
        }
        let edge_maps: [Map; 4] = [
            |x, a, b, c| ([x, x * a], [x * (1.0 - a * b * c), x * a * b * (1.0 - c)]),
            |x, a, b, c| ([x * (1.0 - a * b), x * a * (1.0 - b)], [x, x * a * b * c]),
            |x, a, b, c| ([x * (1.0 - a * b * c), x * a * b * (1.0 - c)], [x, x * a]),
            |x, a, b, c| ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * b]),
        ];
        for (p, w) in tensor_rule(&[3.0 - s, 2.0 - s, 1.0, 0.0], n) {
            let wt = w * (p[0] * p[1]).powf(s);
            for m in &edge_maps {
                let (x, y) = m(p[0], p[1], p[2], p[3]);
                edge.push((x, y, wt));
            }
        }
        let mut vertex = Vec::new();
        for (p, w) in tensor_rule(&[3.0 - s, 0.0, 1.0, 0.0], n) {
            let (x, a, b, c) = (p[0], p[1], p[2], p[3]);
            let wt = w * x.powf(s);
            let xa = [x, x * a];
            let yb = [x * b, x * b * c];
            vertex.push((xa, yb, wt));
            vertex.push((yb, xa, wt));
        }
        Self {
            identical,
            adjacent_edge: edge,
            adjacent_vertex: vertex,
        }
    }
}

/// Facet with vertices reordered so shared vertices come first; `perm[i]` is
/// the original local vertex under reordered vertex `i`.
struct Panel<'a> {
    f: &'a TraceFacet,
    perm: [usize; 3],
}

impl Panel<'_> {
    fn bary(&self, dim: usize, p: &[f64; 2]) -> [f64; 4] {
        let re = if dim == 2 {
            [1.0 - p[0], p[0], 0.0]
        } else {
            [1.0 - p[0], p[0] - p[1], p[1]]
        };
        let mut b = [0.0; 4];
        for i in 0..dim {
            b[self.perm[i]] = re[i];
        }
        b
    }

    fn point(&self, dim: usize, b: &[f64; 4]) -> Point {
        let mut x = [0.0; 3];
        for i in 0..dim {
            for k in 0..3 {
                x[k] += b[i] * self.f.verts[i][k];
            }
        }
        x
    }
}

/// Scalar fractional Gram matrix on a trace space.
pub fn slobodetsky_gram(space: &TraceSpace, alpha: f64, q: &FracQuadrature) -> Result<Mat<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("fractional order {alpha} outside (0, 1)")));
    }
    let d = space.dim;
    let expo = (d - 1) as f64 + 2.0 * alpha;
    let s = if d == 2 { 2.0 * alpha - 1.0 } else { 2.0 * alpha };
    let rules = SingularRules::new(d, s, q.singular);
    let near: Vec<([f64; 4], f64)> = facet_points(d, q.near);
    let far: Vec<([f64; 4], f64)> = facet_points(d, q.far);
    let nf = nodes_per_facet(d);
    let nfac = space.facets.len();
    let sizes: Vec<(Point, f64, f64)> = space
        .facets
        .iter()
        .map(|f| {
            let mut c = [0.0; 3];
            for v in f.verts.iter().take(d) {
                for k in 0..3 {
                    c[k] += v[k] / d as f64;
                }
            }
            let diam = (0..d)
                .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
                .map(|(i, j)| norm(&sub(&f.verts[i], &f.verts[j])))
                .fold(0.0, f64::max);
            (c, diam, facet_measure(d, &f.verts))
        })
        .collect();
    let pfact = if d == 2 { 1.0 } else { 2.0 };
    let mut g = Mat::<f64>::zeros(space.n_nodes, space.n_nodes);
    let mut union: Vec<usize> = Vec::with_capacity(12);
    let mut dv = vec![0.0; 12];
    let mut local = vec![0.0; 144];
    for i in 0..nfac {
        for j in i..nfac {
            let (f1, f2) = (&space.facets[i], &space.facets[j]);
            union.clear();
            union.extend_from_slice(&f1.nodes[..nf]);
            for &n in &f2.nodes[..nf] {
                if !union.contains(&n) {
                    union.push(n);
                }
            }
            let nu = union.len();
            let pos1: Vec<usize> = f1.nodes[..nf]
                .iter()
                .map(|n| union.iter().position(|u| u == n).unwrap())
                .collect();
            let pos2: Vec<usize> = f2.nodes[..nf]
                .iter()
                .map(|n| union.iter().position(|u| u == n).unwrap())
                .collect();
            // shared vertices by trace node id
            let mut shared: Vec<(usize, usize)> = Vec::new();
            for a in 0..d {
                for b in 0..d {
                    if f1.nodes[a] == f2.nodes[b] {
                        shared.push((a, b));
                    }
                }
            }
            local[..nu * nu].iter_mut().for_each(|v| *v = 0.0);
            let mut acc = |b1: &[f64; 4], b2: &[f64; 4], x: &Point, y: &Point, w: f64| {
                let r = norm(&sub(x, y));
                if r == 0.0 {
                    return;
                }
                let kern = w / r.powf(expo);
                let v1 = p2_values(d - 1, b1);
                let v2 = p2_values(d - 1, b2);
                dv[..nu].iter_mut().for_each(|v| *v = 0.0);
                for k in 0..nf {
                    dv[pos1[k]] += v1[k];
                    dv[pos2[k]] -= v2[k];
                }
                for p in 0..nu {
                    if dv[p] == 0.0 {
                        continue;
                    }
                    for q in 0..nu {
                        local[p * nu + q] += kern * dv[p] * dv[q];
                    }
                }
            };
            let scale = pfact * pfact * sizes[i].2 * sizes[j].2;
            if i == j || !shared.is_empty() {
                let (rule, p1, p2) = if i == j {
                    (&rules.identical, [0, 1, 2], [0, 1, 2])
                } else {
                    let mut p1: Vec<usize> = shared.iter().map(|s| s.0).collect();
                    let mut p2: Vec<usize> = shared.iter().map(|s| s.1).collect();
                    for a in 0..d {
                        if !p1.contains(&a) {
                            p1.push(a);
                        }
                        if !p2.contains(&a) {
                            p2.push(a);
                        }
                    }
                    p1.resize(3, 2);
                    p2.resize(3, 2);
                    let rule = if shared.len() == 2 && d == 3 {
                        &rules.adjacent_edge
                    } else {
                        &rules.adjacent_vertex
                    };
                    (rule, [p1[0], p1[1], p1[2]], [p2[0], p2[1], p2[2]])
                };
                let pa = Panel { f: f1, perm: p1 };
                let pb = Panel { f: f2, perm: p2 };
                for (xh, yh, w) in rule {
                    let b1 = pa.bary(d, xh);
                    let b2 = pb.bary(d, yh);
                    let x = pa.point(d, &b1);
                    let y = pb.point(d, &b2);
                    acc(&b1, &b2, &x, &y, w * scale);
                }
            } else {
                let dist = norm(&sub(&sizes[i].0, &sizes[j].0));
                let rule = if dist < 2.0 * (sizes[i].1 + sizes[j].1) {
                    &near
                } else {
                    &far
                };
                for (b1, w1) in rule {
                    let x = Panel { f: f1, perm: [0, 1, 2] }.point(d, b1);
                    for (b2, w2) in rule {
                        let y = Panel { f: f2, perm: [0, 1, 2] }.point(d, b2);
                        acc(b1, b2, &x, &y, w1 * w2 * scale);
                    }
                }
            }
            let mult = if i == j { 1.0 } else { 2.0 };
            for p in 0..nu {
                for q in 0..nu {
                    g[(union[p], union[q])] += mult * local[p * nu + q];
                }
            }
        }
    }
    Ok(g)
}

fn facet_points(dim: usize, n: usize) -> Vec<([f64; 4], f64)> {
    let r = simplex_rule(dim - 1, n);
    r.bary.iter().zip(&r.weights).map(|(b, w)| (*b, *w)).collect()
}

/// `|v|_{H^α}` of a scalar nodal trace.
pub fn slobodetsky_seminorm(
    space: &TraceSpace,
    alpha: f64,
    values: &[f64],
    q: &FracQuadrature,
) -> Result<f64> {
    let g = slobodetsky_gram(space, alpha, q)?;
    Ok(quad_dense(&g, values).max(0.0).sqrt())
}

pub fn quad_dense(m: &Mat<f64>, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        let mut r = 0.0;
        for j in 0..m.ncols() {
            r += m[(i, j)] * v[j];
        }
        s += v[i] * r;
    }
    s
}

fn matvec_dense(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// `H^α` norm on one reference trace space, scaled per cell to `S_ε` with
/// the `ε^{2α}`-weighted seminorm. Traces are nodal vectors, `d` values per
/// trace node, cell-major.
pub struct CrackNorm {
    pub dim: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// Reference mass and seminorm Gram.
    pub mass: Mat<f64>,
    pub gram: Mat<f64>,
    nodes: usize,
    riesz: DenseCholesky,
}

impl CrackNorm {
    /// From the reference trace space of the mesh's cell.
    pub fn new(space: &TraceSpace, alpha: f64, epsilon: f64, q: &FracQuadrature) -> Result<Self> {
        let mass = trace_mass(space);
        let gram = slobodetsky_gram(space, alpha, q)?;
        let mut h = mass.clone();
        h += &gram;
        let riesz = DenseCholesky::factor(&h)
            .map_err(|_| Error::LinearAlgebra("singular trace Gram matrix".into()))?;
        Ok(Self {
            dim: space.dim,
            alpha,
            epsilon,
            mass,
            gram,
            nodes: space.n_nodes,
            riesz,
        })
    }

    /// Crack norm for a tiled mesh, built from its reference crack copy.
    pub fn for_mesh(cell: &ReferenceCell, epsilon: f64, alpha: f64, q: &FracQuadrature) -> Result<Self> {
        Self::new(&cell.crack_space(), alpha, epsilon, q)
    }

    fn cells(&self, v: &[f64]) -> usize {
        v.len() / (self.nodes * self.dim)
    }

    fn component(&self, v: &[f64], cell: usize, c: usize) -> Vec<f64> {
        let d = self.dim;
        (0..self.nodes)
            .map(|t| v[(cell * self.nodes + t) * d + c])
            .collect()
    }

    /// `‖v‖_{L²(S_ε)}`.
    pub fn l2(&self, v: &[f64]) -> f64 {
        let sc = self.epsilon.powi(self.dim as i32 - 1);
        let mut s = 0.0;
        for cell in 0..self.cells(v) {
            for c in 0..self.dim {
                s += quad_dense(&self.mass, &self.component(v, cell, c));
            }
        }
        (sc * s).sqrt()
    }

    /// Unweighted `(Σ_ξ |v|²_{H^α(εξ + εS)})^{1/2}`.
    pub fn seminorm(&self, v: &[f64]) -> f64 {
        let d = self.dim as i32;
        let sc = self.epsilon.powf((d - 1) as f64 - 2.0 * self.alpha);
        let mut s = 0.0;
        for cell in 0..self.cells(v) {
            for c in 0..self.dim {
                s += quad_dense(&self.gram, &self.component(v, cell, c));
            }
        }
        (sc * s).max(0.0).sqrt()
    }

    /// `(‖v‖² + ε^{2α} Σ_ξ |v|²)^{1/2}`.
    pub fn norm(&self, v: &[f64]) -> f64 {
        let l = self.l2(v);
        let s = self.seminorm(v);
        (l * l + self.epsilon.powf(2.0 * self.alpha) * s * s).sqrt()
    }

    /// Dual norm of moment vectors `g_t = ∫ σ φ_t`, cell-major, `d` per node.
    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        let sc = self.epsilon.powi(self.dim as i32 - 1);
        let mut s = 0.0;
        for cell in 0..self.cells(g) {
            for c in 0..self.dim {
                let gc = self.component(g, cell, c);
                let x = self.riesz.solve(&gc);
                s += dot(&gc, &x);
            }
        }
        (s / sc).sqrt()
    }

    /// Riesz representative of `g` in the same layout.
    pub fn riesz(&self, g: &[f64]) -> Vec<f64> {
        let sc = self.epsilon.powi(self.dim as i32 - 1);
        let d = self.dim;
        let mut out = vec![0.0; g.len()];
        for cell in 0..self.cells(g) {
            for c in 0..d {
                let x = self.riesz.solve(&self.component(g, cell, c));
                for t in 0..self.nodes {
                    out[(cell * self.nodes + t) * d + c] = x[t] / sc;
                }
            }
        }
        out
    }

    /// Moment vector of a nodal trace against the physical mass.
    pub fn moments(&self, v: &[f64]) -> Vec<f64> {
        let sc = self.epsilon.powi(self.dim as i32 - 1);
        let d = self.dim;
        let mut out = vec![0.0; v.len()];
        for cell in 0..self.cells(v) {
            for c in 0..d {
                let m = matvec_dense(&self.mass, &self.component(v, cell, c));
                for t in 0..self.nodes {
                    out[(cell * self.nodes + t) * d + c] = sc * m[t];
                }
            }
        }
        out
    }

    /// Scalar variants: one value per trace node.
    pub fn scalar(&self) -> CrackNormScalar<'_> {
        CrackNormScalar(self)
    }
}

/// View of a [`CrackNorm`] acting on scalar traces.
pub struct CrackNormScalar<'a>(&'a CrackNorm);

impl CrackNormScalar<'_> {
    fn widen(&self, v: &[f64]) -> Vec<f64> {
        let d = self.0.dim;
        let mut out = vec![0.0; v.len() * d];
        for (i, x) in v.iter().enumerate() {
            out[i * d] = *x;
        }
        out
    }

    pub fn l2(&self, v: &[f64]) -> f64 {
        self.0.l2(&self.widen(v))
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.0.norm(&self.widen(v))
    }

    pub fn dual_norm(&self, g: &[f64]) -> f64 {
        self.0.dual_norm(&self.widen(g))
    }

    pub fn moments(&self, v: &[f64]) -> Vec<f64> {
        let d = self.0.dim;
        let w = self.0.moments(&self.widen(v));
        (0..v.len()).map(|i| w[i * d]).collect()
    }
}

/// Vector jump `[u] = u_inner - u_outer` at every crack node (zero at tips),
/// cell-major with `d` values per node.
pub fn jump_trace(mesh: &CrackedMesh, u: &[f64]) -> Vec<f64> {
    let d = mesh.dim;
    let mut out = vec![0.0; mesh.crack_nodes.len() * d];
    for (t, cn) in mesh.crack_nodes.iter().enumerate() {
        for c in 0..d {
            out[t * d + c] = u[cn.inner * d + c] - u[cn.outer * d + c];
        }
    }
    out
}

/// Mean of component `comp` over elements `elems`.
pub fn mean_value(
    mesh: &CrackedMesh,
    u: &[f64],
    comp: usize,
    elems: std::ops::Range<usize>,
) -> Result<f64> {
    let d = mesh.dim;
    let rule = simplex_rule(d, 3);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let (mut s, mut vol) = (0.0, 0.0);
    for e in elems {
        let aff = element_affine(mesh, e);
        let ue = element_values(mesh, e, u);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = p2_values(d, b);
            let val: f64 = ue.iter().zip(v.iter()).map(|(x, p)| x[comp] * p).sum();
            s += w * fact * aff.volume * val;
            vol += w * fact * aff.volume;
        }
    }
    if vol <= 0.0 {
        return Err(invalid("mean value over an empty region"));
    }
    Ok(s / vol)
}

/// `ℛ` orthonormalized for `(u, v) = ∫ e:e + ∫ u·v`, which reduces to the
/// mass inner product on rigid fields.
pub struct RigidBasis {
    pub fields: Vec<Vec<f64>>,
    mass_fields: Vec<Vec<f64>>,
}

/// Rigid displacement fields about `center`.
pub fn rigid_fields(mesh: &CrackedMesh, center: &Point) -> Vec<Vec<f64>> {
    let d = mesh.dim;
    let mut out = Vec::new();
    for k in 0..d {
        out.push(interpolate(mesh, |_| {
            let mut v = [0.0; 3];
            v[k] = 1.0;
            v
        }));
    }
    let c = *center;
    if d == 2 {
        out.push(interpolate(mesh, |x| [-(x[1] - c[1]), x[0] - c[0], 0.0]));
    } else {
        for k in 0..3 {
            out.push(interpolate(mesh, |x| {
                let mut e = [0.0; 3];
                e[k] = 1.0;
                crate::geometry::cross(&e, &sub(x, &c))
            }));
        }
    }
    out
}

impl RigidBasis {
    pub fn new(mesh: &CrackedMesh, mass: &Csr) -> Result<Self> {
        let mut center = [0.0; 3];
        for k in 0..mesh.dim {
            center[k] = 0.5 * (mesh.domain.lo[k] + mesh.domain.hi[k]);
        }
        let mut fields: Vec<Vec<f64>> = Vec::new();
        for mut f in rigid_fields(mesh, &center) {
            for _ in 0..2 {
                for g in &fields {
                    let p = mass.bilinear(g, &f);
                    crate::linalg::axpy(-p, g, &mut f);
                }
            }
            let n = mass.quad(&f).sqrt();
            if !(n > 1e-12) {
                return Err(invalid("degenerate region for rigid projection"));
            }
            f.iter_mut().for_each(|x| *x /= n);
            fields.push(f);
        }
        let mass_fields = fields.iter().map(|f| mass.matvec(f)).collect();
        Ok(Self {
            fields,
            mass_fields,
        })
    }

    /// Coefficients of the (PS)-orthogonal projection.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        self.mass_fields.iter().map(|m| dot(m, v)).collect()
    }

    /// `r ∈ ℛ` closest to `v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; v.len()];
        for (c, f) in self.coefficients(v).iter().zip(&self.fields) {
            crate::linalg::axpy(*c, f, &mut r);
        }
        r
    }

    /// `v - project(v)`.
    pub fn remove(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        for (c, f) in self.coefficients(v).iter().zip(&self.fields) {
            crate::linalg::axpy(-c, f, &mut w);
        }
        w
    }

    /// `(I - P_R)ᵀ y = y - M R Rᵀ y`.
    pub fn remove_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut w = y.to_vec();
        for (f, m) in self.fields.iter().zip(&self.mass_fields) {
            let c = dot(f, y);
            crate::linalg::axpy(-c, m, &mut w);
        }
        w
    }
}

/// Dofs that fix rigid motions: chosen greedily among far-apart nodes so the
/// rigid fields restricted to them are nonsingular.
pub fn pinned_dofs(mesh: &CrackedMesh) -> Vec<usize> {
    let d = mesh.dim;
    let nr = d * (d + 1) / 2;
    let mut center = [0.0; 3];
    for k in 0..d {
        center[k] = 0.5 * (mesh.domain.lo[k] + mesh.domain.hi[k]);
    }
    let rig = rigid_fields(mesh, &center);
    let mut order: Vec<usize> = (0..mesh.n_nodes()).collect();
    order.sort_by(|&a, &b| {
        let da = norm(&sub(&mesh.coords[a], &center));
        let db = norm(&sub(&mesh.coords[b], &center));
        db.total_cmp(&da).then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    'outer: for &n in &order {
        for c in 0..d {
            let dof = n * d + c;
            let mut row: Vec<f64> = rig.iter().map(|f| f[dof]).collect();
            for r in &rows {
                let p = dot(r, &row);
                crate::linalg::axpy(-p, r, &mut row);
            }
            let l = dot(&row, &row).sqrt();
            if l > 0.1 {
                row.iter_mut().for_each(|x| *x /= l);
                rows.push(row);
                chosen.push(dof);
                if chosen.len() == nr {
                    break 'outer;
                }
            }
        }
    }
    chosen
}

/// Korn variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KornVariant {
    /// Modulo rigid motions, `W(𝒪)`.
    Wirtinger,
    /// Fields vanishing on `Γ`.
    Dirichlet,
}

#[derive(Debug, Clone)]
pub struct KornReport {
    pub tag: String,
    pub constant: f64,
    /// Extremal field on all dofs.
    pub field: Vec<f64>,
    pub iterations: usize,
}

/// Largest `sqrt(vᵀ H v / vᵀ E v)` over free dofs, `H` applied on full
/// vectors, by Lanczos in the `E` inner product.
fn extremal_ratio<H>(free: &[bool], h_apply: H, e: &Csr, tag: &str) -> Result<KornReport>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let (epin, map) = e.restrict_symmetric(free);
    let n = epin.nrows;
    let full_len = free.len();
    let embed = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; full_len];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                out[i] = v[*k];
            }
        }
        out
    };
    let restrict = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                out[*k] = v[i];
            }
        }
        out
    };
    let fac = Cholesky::factor(&epin)
        .map_err(|_| Error::Eigen(format!("{tag}: strain form is singular on the free space")))?;
    let opts = LanczosOptions::default();
    let res = lanczos_max(
        n,
        |v| restrict(&h_apply(&embed(v))),
        |v| epin.matvec(v),
        &fac,
        &opts,
    )?;
    Ok(KornReport {
        tag: tag.to_string(),
        constant: res.value.max(0.0).sqrt(),
        field: embed(&res.vector),
        iterations: res.iterations,
    })
}

/// Dense variant of [`korn_constant`]; the oracle for small meshes.
pub fn korn_constant_dense(mesh: &CrackedMesh, variant: KornVariant) -> Result<f64> {
    let (free, hmat, e) = korn_forms(mesh, variant)?;
    let (ep, map) = e.restrict_symmetric(&free);
    let n = ep.nrows;
    let mut h = Mat::<f64>::zeros(n, n);
    for j in 0..free.len() {
        let Some(jj) = map[j] else { continue };
        let mut unit = vec![0.0; free.len()];
        unit[j] = 1.0;
        let col = hmat(&unit);
        for i in 0..free.len() {
            if let Some(ii) = map[i] {
                h[(ii, jj)] = col[i];
            }
        }
    }
    Ok(dense_generalized_max(&h, &ep.to_dense())?.max(0.0).sqrt())
}

type Apply = Box<dyn Fn(&[f64]) -> Vec<f64>>;

fn korn_forms(mesh: &CrackedMesh, variant: KornVariant) -> Result<(Vec<bool>, Apply, Csr)> {
    let m = assemble_mass(mesh);
    let g = assemble_grad_gram(mesh);
    let e = assemble_strain_gram(mesh);
    let h1 = m.add_scaled(&g, 1.0);
    match variant {
        KornVariant::Wirtinger => {
            let rb = RigidBasis::new(mesh, &m)?;
            let mut free = vec![true; mesh.n_dofs()];
            for p in pinned_dofs(mesh) {
                free[p] = false;
            }
            let apply: Apply = Box::new(move |v: &[f64]| {
                let w = rb.remove(v);
                rb.remove_transpose(&h1.matvec(&w))
            });
            Ok((free, apply, e))
        }
        KornVariant::Dirichlet => {
            if !mesh.dirichlet.iter().any(|&b| b) {
                return Err(invalid("Dirichlet Korn variant needs a nonempty Γ"));
            }
            let free: Vec<bool> = mesh.dirichlet_dofs().iter().map(|b| !b).collect();
            let apply: Apply = Box::new(move |v: &[f64]| h1.matvec(v));
            Ok((free, apply, e))
        }
    }
}

/// Smallest `C` with `‖v‖_{H¹} ≤ C‖e(v)‖` on the discrete space.
pub fn korn_constant(mesh: &CrackedMesh, variant: KornVariant) -> Result<KornReport> {
    let (free, apply, e) = korn_forms(mesh, variant)?;
    let tag = match variant {
        KornVariant::Wirtinger => "korn-wirtinger",
        KornVariant::Dirichlet => "korn-dirichlet",
    };
    extremal_ratio(&free, apply, &e, tag)
}

/// `C₀` in `‖[v]‖_{H^{1/2}(S)} ≤ C₀‖e(v)‖` on the reference cell.
pub fn jump_constant(cell: &ReferenceCell, q: &FracQuadrature) -> Result<KornReport> {
    let mesh = &cell.mesh;
    let norm = CrackNorm::new(&cell.crack_space(), 0.5, 1.0, q)?;
    let mut h = norm.mass.clone();
    h += &norm.gram;
    let e = assemble_strain_gram(mesh);
    let mut free = vec![true; mesh.n_dofs()];
    for p in pinned_dofs(mesh) {
        free[p] = false;
    }
    let d = mesh.dim;
    let nodes = mesh.crack_nodes.clone();
    let apply = move |v: &[f64]| -> Vec<f64> {
        let j = jump_trace_nodes(&nodes, d, v);
        let mut out = vec![0.0; v.len()];
        for c in 0..d {
            let jc: Vec<f64> = (0..nodes.len()).map(|t| j[t * d + c]).collect();
            let hj = matvec_dense(&h, &jc);
            for (t, cn) in nodes.iter().enumerate() {
                out[cn.inner * d + c] += hj[t];
                out[cn.outer * d + c] -= hj[t];
            }
        }
        out
    };
    extremal_ratio(&free, apply, &e, "jump")
}

fn jump_trace_nodes(nodes: &[crate::geometry::CrackNode], d: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len() * d];
    for (t, cn) in nodes.iter().enumerate() {
        for c in 0..d {
            out[t * d + c] = u[cn.inner * d + c] - u[cn.outer * d + c];
        }
    }
    out
}

/// `C₁` in `‖e(v)|_S‖_{H^{1/2}(S)} ≤ C₁(‖e(v)‖² + ‖∇e(v)‖²)^{1/2}` on the
/// reference cell; the strain trace is taken from the matrix side and
/// projected onto continuous quadratic traces componentwise.
pub fn strain_trace_constant(
    cell: &ReferenceCell,
    eta: f64,
    q: &FracQuadrature,
) -> Result<KornReport> {
    let mesh = &cell.mesh;
    let space = cell.crack_space();
    let norm = CrackNorm::new(&space, 0.5, 1.0, q)?;
    let mut h = norm.mass.clone();
    h += &norm.gram;
    let mass = DenseCholesky::factor(&norm.mass)?;
    let e = assemble_strain_gram(mesh);
    let b = assemble_regularization(mesh, eta, &[]);
    let eb = e.add_scaled(&b, 1.0);
    let mut free = vec![true; mesh.n_dofs()];
    for p in pinned_dofs(mesh) {
        free[p] = false;
    }
    let d = mesh.dim;
    let pairs: Vec<(usize, usize, f64)> = {
        let mut v = Vec::new();
        for i in 0..d {
            for j in i..d {
                v.push((i, j, if i == j { 1.0 } else { 2.0 }));
            }
        }
        v
    };
    // P maps dofs to projected strain-component traces; H = Σ w Pᵀ G P
    let pmat = strain_trace_operator(mesh, &mass)?;
    let apply = move |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &(_, _, w)) in pairs.iter().enumerate() {
            let t = pmat[k].matvec(v);
            let ht = matvec_dense(&h, &t);
            let back = pmat[k].transpose().matvec(&ht);
            crate::linalg::axpy(w, &back, &mut out);
        }
        out
    };
    extremal_ratio(&free, apply, &eb, "strain-trace")
}

/// Per strain component `(i ≤ j)`, the sparse map from dofs to the `L²`
/// projection of the outer-side `e_ij` onto crack traces (cell 0 only).
fn strain_trace_operator(mesh: &CrackedMesh, mass: &DenseCholesky) -> Result<Vec<Csr>> {
    let d = mesh.dim;
    let k = d - 1;
    let nf = nodes_per_facet(d);
    let nt = mesh.ref_crack_nodes;
    let rule = simplex_rule(k, 3);
    let fact = if k == 1 { 1.0 } else { 2.0 };
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            // moments[t][dof]
            let mut mom = Mat::<f64>::zeros(nt, mesh.n_dofs());
            for f in mesh.cell_crack_facets(0) {
                let e = f.outer_elem;
                let aff = element_affine(mesh, e);
                let verts: Vec<usize> = (0..d)
                    .map(|a| {
                        let id = mesh.crack_nodes[f.trace[a]].outer;
                        (0..=d)
                            .find(|&v| v != f.outer_face && mesh.elems[e].nodes[v] == id)
                            .unwrap()
                    })
                    .collect();
                for (fb, w) in rule.bary.iter().zip(&rule.weights) {
                    let mut b = [0.0; 4];
                    for a in 0..d {
                        b[verts[a]] = fb[a];
                    }
                    let g = aff.grads(&b);
                    let v = p2_values(k, fb);
                    for p in 0..nf {
                        let t = f.trace[p];
                        let wt = w * fact * f.measure * v[p];
                        for (a, &node) in mesh.elems[e]
                            .nodes
                            .iter()
                            .take(crate::geometry::nodes_per_element(d))
                            .enumerate()
                        {
                            // e_ij of basis (a, c) = (δ_ic ∂_j + δ_jc ∂_i)/2
                            mom[(t, node * d + i)] += wt * 0.5 * g[a][j];
                            mom[(t, node * d + j)] += wt * 0.5 * g[a][i];
                        }
                    }
                }
            }
            let mut trip = crate::linalg::Triplets::with_capacity(0);
            for col in 0..mesh.n_dofs() {
                let c: Vec<f64> = (0..nt).map(|t| mom[(t, col)]).collect();
                if c.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let s = mass.solve(&c);
                for (t, v) in s.iter().enumerate() {
                    if *v != 0.0 {
                        trip.push(t, col, *v);
                    }
                }
            }
            out.push(trip.into_csr(nt, mesh.n_dofs()));
        }
    }
    Ok(out)
}

/// Trace constant on `∂Y`: `‖v‖_{H^{1/2}(∂Y)} ≤ C(‖e(v)‖² + ‖v‖²)^{1/2}`.
pub fn trace_constant(cell: &ReferenceCell, q: &FracQuadrature) -> Result<KornReport> {
    let mesh = &cell.mesh;
    let space = cell.boundary_space();
    let bnodes = cell.boundary_nodes();
    let mass = trace_mass(&space);
    let gram = slobodetsky_gram(&space, 0.5, q)?;
    let mut h = mass;
    h += &gram;
    let ps = assemble_strain_gram(mesh).add_scaled(&assemble_mass(mesh), 1.0);
    let d = mesh.dim;
    let apply = move |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for c in 0..d {
            let tc: Vec<f64> = bnodes.iter().map(|&n| v[n * d + c]).collect();
            let ht = matvec_dense(&h, &tc);
            for (k, &n) in bnodes.iter().enumerate() {
                out[n * d + c] += ht[k];
            }
        }
        out
    };
    extremal_ratio(&vec![true; mesh.n_dofs()], apply, &ps, "trace")
}

/// Conormal estimate on the inclusion boundaries.
#[derive(Debug, Clone, Copy)]
pub struct ConormalReport {
    pub dual_norm: f64,
    pub h_norm: f64,
    pub v_norm: f64,
    /// `√ε ‖v·ν‖_{H^{-1/2}(∂𝒮_ε)} / (ε‖h‖ + ‖v‖)`.
    pub ratio: f64,
}

/// `‖v·ν‖_{H^{-1/2}(∂𝒮_ε)}` for `div v = h` in the inclusions, measured
/// per cell with the `ε`-scaled `H^{1/2}` norm on `∂𝒮`.
pub fn conormal_dual_estimate<V, H>(
    cell: &ReferenceCell,
    mesh: &CrackedMesh,
    v: V,
    h: H,
    q: &FracQuadrature,
) -> Result<ConormalReport>
where
    V: Fn(&Point) -> [f64; 3],
    H: Fn(&Point) -> f64,
{
    if matches!(mesh.shape, crate::geometry::CrackShape::Flat { .. }) {
        return Err(invalid("conormal estimate needs a closed inclusion"));
    }
    let d = mesh.dim;
    let eps = mesh.epsilon;
    let space = cell.interface_space();
    let mut hmat = trace_mass(&space);
    hmat += &slobodetsky_gram(&space, 0.5, q)?;
    let riesz = DenseCholesky::factor(&hmat)?;
    let nri = mesh.ref_interface_nodes;
    let k = d - 1;
    let frule = simplex_rule(k, 4);
    let ffact = if k == 1 { 1.0 } else { 2.0 };
    let vrule = simplex_rule(d, 4);
    let vfact = if d == 2 { 2.0 } else { 6.0 };
    let mut dual2 = 0.0;
    let (mut h2, mut v2) = (0.0, 0.0);
    for c in 0..mesh.n_cells() {
        let mut g = vec![0.0; nri];
        let mut flux = 0.0;
        let fs = &mesh.interface_facets
            [c * mesh.ref_interface_facets..(c + 1) * mesh.ref_interface_facets];
        for f in fs {
            let mut fv = [[0.0; 3]; 3];
            for a in 0..d {
                fv[a] = mesh.coords[mesh.interface_nodes[f.trace[a]]];
            }
            for (fb, w) in frule.bary.iter().zip(&frule.weights) {
                let mut x = [0.0; 3];
                for a in 0..d {
                    for kk in 0..3 {
                        x[kk] += fb[a] * fv[a][kk];
                    }
                }
                let vn = dot3(&v(&x), &f.normal);
                let pv = p2_values(k, fb);
                let wq = w * ffact * f.measure;
                flux += wq * vn;
                for p in 0..nodes_per_facet(d) {
                    g[f.trace[p] - c * nri] += wq * vn * pv[p];
                }
            }
        }
        let mut hint = 0.0;
        for e in mesh.cell_elem_range(c) {
            if !mesh.elems[e].inner {
                continue;
            }
            let aff = element_affine(mesh, e);
            for (b, w) in vrule.bary.iter().zip(&vrule.weights) {
                let x = aff.point(b);
                let wq = w * vfact * aff.volume;
                let hv = h(&x);
                let vv = v(&x);
                hint += wq * hv;
                h2 += wq * hv * hv;
                v2 += wq * dot3(&vv, &vv);
            }
        }
        let scale = flux.abs().max(hint.abs()).max(1e-300);
        if (flux - hint).abs() > 1e-6 * scale + 1e-12 * eps.powi(d as i32) {
            return Err(invalid(format!(
                "divergence data inconsistent with the flux in cell {c}: {hint} vs {flux}"
            )));
        }
        let x = riesz.solve(&g);
        dual2 += dot(&g, &x) / eps.powi(d as i32 - 1);
    }
    let dual = dual2.sqrt();
    let (hn, vn) = (h2.sqrt(), v2.sqrt());
    let denom = eps * hn + vn;
    let ratio = if denom > 0.0 {
        eps.sqrt() * dual / denom
    } else {
        0.0
    };
    Ok(ConormalReport {
        dual_norm: dual,
        h_norm: hn,
        v_norm: vn,
        ratio,
    })
}

/// Crack norm for jumps of the regularized problem: `Σ_c ‖·‖` on `S_ε`.
pub fn jump_norm(norm: &CrackNorm, mesh: &CrackedMesh, u: &[f64]) -> f64 {
    norm.norm(&jump_trace(mesh, u))
}

/// Nodal normal jump per crack node (zero at tips) as scalar trace.
pub fn normal_jump_trace(mesh: &CrackedMesh, u: &[f64]) -> Vec<f64> {
    let j = CrackJumps::new(mesh);
    let mut out = vec![0.0; mesh.crack_nodes.len()];
    for (k, v) in j.normal(u).into_iter().enumerate() {
        out[j.nodes[k]] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reference_cell, CellSpec, CrackShape};

    fn segment_space(n: usize, len: f64) -> TraceSpace {
        // P2 nodes along [0, len] × {0}: vertices 0..=n then midpoints
        let facets = (0..n)
            .map(|i| TraceFacet {
                verts: [
                    [len * i as f64 / n as f64, 0.0, 0.0],
                    [len * (i + 1) as f64 / n as f64, 0.0, 0.0],
                    [0.0; 3],
                ],
                nodes: [i, i + 1, n + 1 + i, 0, 0, 0],
            })
            .collect();
        TraceSpace {
            dim: 2,
            n_nodes: 2 * n + 1,
            facets,
        }
    }

    fn segment_values(n: usize, len: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..=n).map(|i| f(len * i as f64 / n as f64)).collect();
        v.extend((0..n).map(|i| f(len * (i as f64 + 0.5) / n as f64)));
        v
    }

    #[test]
    fn linear_trace_half_order_seminorm_is_one() {
        let s = segment_space(6, 1.0);
        let q = FracQuadrature::for_dim(2);
        let v = segment_values(6, 1.0, |t| t);
        let n = slobodetsky_seminorm(&s, 0.5, &v, &q).unwrap();
        assert!((n - 1.0).abs() < 1e-12, "{n}");
    }

    #[test]
    fn constants_have_zero_seminorm() {
        let s = segment_space(4, 1.0);
        let g = slobodetsky_gram(&s, 0.3, &FracQuadrature::for_dim(2)).unwrap();
        let one = vec![1.0; s.n_nodes];
        assert!(quad_dense(&g, &one).abs() < 1e-12);
    }

    #[test]
    fn quadratic_trace_matches_closed_form() {
        // ∫∫ (s² - t²)² / |s - t|^{1+2α} = ∫∫ (s + t)² |s - t|^{1-2α}
        let alpha = 0.25;
        let s = segment_space(5, 1.0);
        let v = segment_values(5, 1.0, |t| t * t);
        let got = slobodetsky_seminorm(&s, alpha, &v, &FracQuadrature::for_dim(2))
            .unwrap()
            .powi(2);
        // reference by tensor Gauss-Jacobi in (w = s - t, m = s + t) over the triangle s > t
        let b = 1.0 - 2.0 * alpha;
        let rw = gauss_jacobi(40, 0.0, b);
        let rm = gauss_jacobi(40, 0.0, 0.0);
        let mut exact = 0.0;
        for (w, ww) in rw.points.iter().zip(&rw.weights) {
            // m ranges over (w, 2 - w); Jacobian 1/2, doubled by symmetry
            for (m, wm) in rm.points.iter().zip(&rm.weights) {
                let mm = w + (2.0 - 2.0 * w) * m;
                exact += ww * wm * (2.0 - 2.0 * w) * mm * mm;
            }
        }
        assert!((got - exact).abs() < 1e-9 * exact, "{got} vs {exact}");
    }

    #[test]
    fn seminorm_scales_under_dilation() {
        let q = FracQuadrature::for_dim(2);
        for &alpha in &[0.25, 0.5, 0.75] {
            let eps: f64 = 0.25;
            let s1 = segment_space(4, 1.0);
            let s2 = segment_space(4, eps);
            let v = segment_values(4, 1.0, |t| (3.0 * t).sin());
            let a = slobodetsky_seminorm(&s1, alpha, &v, &q).unwrap();
            let b = slobodetsky_seminorm(&s2, alpha, &v, &q).unwrap();
            let want = eps.powf((1.0 - 2.0 * alpha) / 2.0) * a;
            assert!((b - want).abs() < 1e-12 * want);
        }
    }

    fn triangle_pairs_reference(f: impl Fn(&[f64; 2], &[f64; 2]) -> f64) -> f64 {
        // tensor rule over {0 ≤ x₂ ≤ x₁ ≤ 1}²
        let r = gauss_jacobi(6, 0.0, 1.0);
        let l = gauss_jacobi(6, 0.0, 0.0);
        let mut pts = Vec::new();
        for (a, wa) in r.points.iter().zip(&r.weights) {
            for (b, wb) in l.points.iter().zip(&l.weights) {
                pts.push(([*a, a * b], wa * wb));
            }
        }
        let mut s = 0.0;
        for (x, wx) in &pts {
            for (y, wy) in &pts {
                s += wx * wy * f(x, y);
            }
        }
        s
    }

    #[test]
    fn triangle_pair_maps_cover_the_product_domain() {
        let rules = SingularRules::new(3, 0.0, 5);
        let f = |x: &[f64; 2], y: &[f64; 2]| {
            1.0 + x[0] * x[1] + 2.0 * y[0] * y[0] * x[1] - x[0] * y[1] * y[1] + y[0] * x[0]
        };
        let exact = triangle_pairs_reference(f);
        for rule in [&rules.identical, &rules.adjacent_edge, &rules.adjacent_vertex] {
            let got: f64 = rule.iter().map(|(x, y, w)| w * f(x, y)).sum();
            assert!((got - exact).abs() < 1e-13, "{got} vs {exact}");
        }
        let seg = SingularRules::new(2, 0.0, 6);
        let g = |x: &[f64; 2], y: &[f64; 2]| 1.0 + x[0] * y[0] * y[0] + x[0].powi(3);
        let exact = 1.0 + 1.0 / 6.0 + 0.25;
        for rule in [&seg.identical, &seg.adjacent_vertex] {
            let got: f64 = rule.iter().map(|(x, y, w)| w * g(x, y)).sum();
            assert!((got - exact).abs() < 1e-13, "{got} vs {exact}");
        }
    }

    #[test]
    fn planar_linear_trace_in_3d() {
        // unit square split in two triangles, v = x₁, α = 1/2:
        // ∫∫ (x₁ - y₁)² / |x - y|³ against a fine separated-rule reference
        let verts = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        // node ids: vertices 0..4, midpoints 4.. on edges 01,02,12 of each triangle
        let mid = |a: usize, b: usize| -> Point {
            let (p, q) = (verts[a], verts[b]);
            [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, 0.0]
        };
        let facets = vec![
            TraceFacet {
                verts: [verts[0], verts[1], verts[2]],
                nodes: [0, 1, 2, 4, 5, 6],
            },
            TraceFacet {
                verts: [verts[0], verts[2], verts[3]],
                nodes: [0, 2, 3, 5, 7, 8],
            },
        ];
        let coords = [
            verts[0],
            verts[1],
            verts[2],
            verts[3],
            mid(0, 1),
            mid(0, 2),
            mid(1, 2),
            mid(0, 3),
            mid(2, 3),
        ];
        let space = TraceSpace {
            dim: 3,
            n_nodes: 9,
            facets,
        };
        let v: Vec<f64> = coords.iter().map(|x| x[0]).collect();
        let q = FracQuadrature {
            singular: 8,
            near: 6,
            far: 6,
        };
        let got = slobodetsky_seminorm(&space, 0.5, &v, &q).unwrap().powi(2);
        // closed form over the unit square: ∫∫ (x₁-y₁)²/|x-y|³ = 4∫₀¹∫₀¹ (1-a)(1-b) a²/(a²+b²)^{3/2}
        let r = gauss_jacobi(60, 0.0, 0.0);
        let mut exact = 0.0;
        // polar split of (a, b) ∈ (0,1)² removes the origin singularity
        for (t, wt) in r.points.iter().zip(&r.weights) {
            for (s, ws) in r.points.iter().zip(&r.weights) {
                // half with b ≤ a: b = a s, jac a
                let (a, b) = (*t, t * s);
                let rr = (a * a + b * b).sqrt();
                exact += wt * ws * a * (1.0 - a) * (1.0 - b) * a * a / rr.powi(3);
                let (a2, b2) = (t * s, *t);
                let rr2 = (a2 * a2 + b2 * b2).sqrt();
                exact += wt * ws * b2 * (1.0 - a2) * (1.0 - b2) * a2 * a2 / rr2.powi(3);
            }
        }
        exact *= 4.0;
        assert!((got - exact).abs() < 2e-3 * exact, "{got} vs {exact}");
    }

    fn small_cell() -> ReferenceCell {
        build_reference_cell(CellSpec::new(2, CrackShape::circle(0.25, 0.5), 8)).unwrap()
    }

    #[test]
    fn rigid_projection_properties() {
        let c = small_cell();
        let m = assemble_mass(&c.mesh);
        let rb = RigidBasis::new(&c.mesh, &m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let g = m.bilinear(&rb.fields[i], &rb.fields[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let v = interpolate(&c.mesh, |x| [x[0], 0.0, 0.0]);
        let p = rb.project(&v);
        let pp = rb.project(&p);
        assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-13));
        // symmetric about the center: no rotation component
        let rot = interpolate(&c.mesh, |x| [-(x[1] - 0.5), x[0] - 0.5, 0.0]);
        assert!(m.bilinear(&rot, &p).abs() < 1e-12);
        let r = rb.remove(&v);
        for f in &rb.fields {
            assert!(m.bilinear(f, &r).abs() < 1e-12);
        }
    }

    #[test]
    fn korn_constant_matches_dense_and_bounds_dilation() {
        let c = small_cell();
        let k = korn_constant(&c.mesh, KornVariant::Wirtinger).unwrap();
        let kd = korn_constant_dense(&c.mesh, KornVariant::Wirtinger).unwrap();
        assert!((k.constant - kd).abs() < 1e-6 * kd, "{} vs {kd}", k.constant);
        let m = assemble_mass(&c.mesh);
        let h1 = m.add_scaled(&assemble_grad_gram(&c.mesh), 1.0);
        let e = assemble_strain_gram(&c.mesh);
        let rb = RigidBasis::new(&c.mesh, &m).unwrap();
        let v = rb.remove(&interpolate(&c.mesh, |x| [x[0], x[1], 0.0]));
        let ratio = (h1.quad(&v) / e.quad(&v)).sqrt();
        assert!(ratio <= k.constant * (1.0 + 1e-8));
    }

    #[test]
    fn crack_norm_riesz_identity() {
        let c = small_cell();
        let q = FracQuadrature::for_dim(2);
        let n = CrackNorm::new(&c.crack_space(), 0.5, 1.0, &q).unwrap();
        let w: Vec<f64> = (0..c.mesh.ref_crack_nodes * 2)
            .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
            .collect();
        let sc = n.scalar();
        let _ = sc;
        // g = H w → dual norm of g equals the norm of w
        let mut g = vec![0.0; w.len()];
        let mut h = n.mass.clone();
        h += &n.gram;
        for comp in 0..2 {
            let wc: Vec<f64> = (0..n.nodes).map(|t| w[t * 2 + comp]).collect();
            let hc = matvec_dense(&h, &wc);
            for t in 0..n.nodes {
                g[t * 2 + comp] = hc[t];
            }
        }
        assert!((n.dual_norm(&g) - n.norm(&w)).abs() < 1e-10 * n.norm(&w));
    }

    #[test]
    fn conormal_constant_field_has_bounded_ratio() {
        let c = small_cell();
        let q = FracQuadrature::for_dim(2);
        let r = conormal_dual_estimate(&c, &c.mesh, |_| [1.0, 0.5, 0.0], |_| 0.0, &q).unwrap();
        assert!(r.ratio > 0.0 && r.ratio < 10.0);
        let z = conormal_dual_estimate(&c, &c.mesh, |_| [0.0; 3], |_| 0.0, &q).unwrap();
        assert_eq!(z.ratio, 0.0);
        let bad = conormal_dual_estimate(&c, &c.mesh, |x| [x[0], 0.0, 0.0], |_| 0.0, &q);
        assert!(bad.is_err());
    }
}
