//! The unfolded two-scale limit problem.
//!
//! Unknowns are a macroscopic P1 field `u` on `Ω` and, at every macro node
//! `a`, a periodic corrector `û_a` on the reference cell. The `x`-integrals of
//! `Ω × Y*` use nodal quadrature: with `ω_K = |K|/(d+1)` the energy is
//! `Σ_K Σ_{a∈K} ω_K ∫_{Y*} a (e(u)|_K + e_y(û_a)) : (e(u)|_K + e_y(û_a))`,
//! and the crack terms sit at `(x_a, y_i)` with weight `m_a w_i`,
//! `m_a = Σ_{K∋a} ω_K`. Correctors are solved with one node pinned and
//! shifted to zero mean afterwards; `e_y` and the jumps do not see the shift.

use std::ops::Deref;

use crate::assembly::{
    assemble_elasticity, assemble_mass, assemble_regularization, cell_coordinate, element_affine,
    strain_basis, CrackJumps, Stiffness,
};
use crate::contact::{
    coulomb_fixed_point, solve_given_friction, ContactSolution, ContactSystem, IterationLog,
    PairedProblem, SolverOptions,
};
use crate::error::{invalid, Error, Result};
use crate::fe::{strain, Affine};
use crate::geometry::{tile_domain, BoxDomain, CrackedMesh, Face, Point, ReferenceCell};
use crate::linalg::{symmetric_eigen, Cholesky, Csr, Triplets};
use crate::quadrature::{gauss_legendre, simplex_rule};

type Sym = [[f64; 3]; 3];

fn permutations(d: usize) -> Vec<[usize; 3]> {
    if d == 2 {
        vec![[0, 1, 2], [1, 0, 2]]
    } else {
        vec![
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ]
    }
}

/// Structured simplicial mesh of a box; each grid cell splits into `d!` Kuhn
/// simplices.
#[derive(Debug, Clone)]
pub struct MacroMesh {
    pub dim: usize,
    pub domain: BoxDomain,
    pub divisions: [usize; 3],
    pub coords: Vec<Point>,
    pub elems: Vec<[usize; 4]>,
    /// Nodes on `Γ`.
    pub dirichlet: Vec<bool>,
}

impl MacroMesh {
    /// Grid spacing close to `h` along every axis.
    pub fn structured(domain: BoxDomain, h: f64, gamma: &[Face]) -> Result<Self> {
        let d = domain.dim;
        if !(2..=3).contains(&d) {
            return Err(invalid(format!("macro mesh needs d ∈ {{2, 3}}, got {d}")));
        }
        if !(h > 0.0) {
            return Err(invalid(format!("macro mesh size {h} must be positive")));
        }
        if gamma.iter().any(|f| f.axis >= d) {
            return Err(invalid("Γ face axis exceeds the dimension"));
        }
        let mut divisions = [1usize; 3];
        for k in 0..d {
            let len = domain.hi[k] - domain.lo[k];
            if !(len > 0.0) {
                return Err(Error::Geometry("empty domain box".into()));
            }
            divisions[k] = ((len / h).round() as usize).max(1);
        }
        let np = [divisions[0] + 1, divisions[1] + 1, if d == 3 { divisions[2] + 1 } else { 1 }];
        let id = |i: [usize; 3]| i[0] + np[0] * (i[1] + np[1] * i[2]);
        let mut coords = Vec::with_capacity(np[0] * np[1] * np[2]);
        for k in 0..np[2] {
            for j in 0..np[1] {
                for i in 0..np[0] {
                    let ix = [i, j, k];
                    let mut x = [0.0; 3];
                    for a in 0..d {
                        let t = ix[a] as f64 / divisions[a] as f64;
                        x[a] = domain.lo[a] + t * (domain.hi[a] - domain.lo[a]);
                    }
                    coords.push(x);
                }
            }
        }
        let perms = permutations(d);
        let mut elems = Vec::new();
        let nc2 = if d == 3 { divisions[2] } else { 1 };
        for k in 0..nc2 {
            for j in 0..divisions[1] {
                for i in 0..divisions[0] {
                    for p in &perms {
                        let mut v = [0usize; 4];
                        let mut ix = [i, j, k];
                        v[0] = id(ix);
                        for s in 0..d {
                            ix[p[s]] += 1;
                            v[s + 1] = id(ix);
                        }
                        elems.push(v);
                    }
                }
            }
        }
        let tol = 1e-12 * domain.diameter();
        let dirichlet = coords
            .iter()
            .map(|x| {
                gamma.iter().any(|f| {
                    let b = if f.upper { domain.hi[f.axis] } else { domain.lo[f.axis] };
                    (x[f.axis] - b).abs() <= tol
                })
            })
            .collect();
        Ok(Self {
            dim: d,
            domain,
            divisions,
            coords,
            elems,
            dirichlet,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn affine(&self, e: usize) -> Affine {
        let mut v = [[0.0; 3]; 4];
        for i in 0..=self.dim {
            v[i] = self.coords[self.elems[e][i]];
        }
        Affine::new(self.dim, &v)
    }

    /// `m_a = ∫_Ω N_a`.
    pub fn nodal_weights(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_nodes()];
        for e in 0..self.elems.len() {
            let w = self.affine(e).volume / (self.dim + 1) as f64;
            for i in 0..=self.dim {
                m[self.elems[e][i]] += w;
            }
        }
        m
    }

    /// Element containing `x` and the barycentric coordinates there.
    pub fn locate(&self, x: &Point) -> Option<(usize, [f64; 4])> {
        let d = self.dim;
        let tol = 1e-10;
        if !self.domain.contains_closed(x, tol * self.domain.diameter()) {
            return None;
        }
        let mut ix = [0usize; 3];
        for k in 0..d {
            let len = self.domain.hi[k] - self.domain.lo[k];
            let t = (x[k] - self.domain.lo[k]) / len * self.divisions[k] as f64;
            ix[k] = (t.floor().max(0.0) as usize).min(self.divisions[k] - 1);
        }
        let per = permutations(d).len();
        let cell = ix[0] + self.divisions[0] * (ix[1] + self.divisions[1] * ix[2]);
        let mut best = (usize::MAX, [0.0; 4], f64::NEG_INFINITY);
        for s in 0..per {
            let e = cell * per + s;
            let b = self.affine(e).bary(x);
            let m = (0..=d).map(|i| b[i]).fold(f64::INFINITY, f64::min);
            if m > best.2 {
                best = (e, b, m);
            }
        }
        (best.2 >= -tol).then_some((best.0, best.1))
    }
}

/// Periodic reference cell data shared by every macro node.
#[derive(Debug, Clone)]
pub struct MicroCell {
    pub dim: usize,
    /// Periodic index of every reference node.
    pub index: Vec<usize>,
    pub n_nodes: usize,
    /// `∫_{Y*} φ_j` per periodic node.
    pub volume_weights: Vec<f64>,
    /// `|Y*|`.
    pub volume: f64,
    /// Crack pairs in periodic indices.
    pub jumps: CrackJumps,
    /// Node whose displacement is pinned while solving.
    pub pin: usize,
    /// Periodic interior-penalty form for `∫ ∇_y e_y : ∇_y e_y`.
    pub reg: Csr,
    /// Reference dofs to periodic dofs, `u_ref = P u_per`.
    fold: Csr,
}

impl MicroCell {
    pub fn new(cell: &ReferenceCell, eta: f64) -> Result<Self> {
        let mesh = &cell.mesh;
        let d = mesh.dim;
        let pairs = cell.periodic_pairs();
        let mut master: Vec<usize> = (0..mesh.n_nodes()).collect();
        for &(s, m) in &pairs {
            master[s] = m;
        }
        let mut index = vec![usize::MAX; mesh.n_nodes()];
        let mut n = 0;
        for r in 0..mesh.n_nodes() {
            if master[r] == r {
                index[r] = n;
                n += 1;
            }
        }
        for r in 0..mesh.n_nodes() {
            index[r] = index[master[r]];
        }
        let mut t = Triplets::with_capacity(mesh.n_dofs());
        for r in 0..mesh.n_nodes() {
            for c in 0..d {
                t.push(r * d + c, index[r] * d + c, 1.0);
            }
        }
        let fold = t.into_csr(mesh.n_dofs(), n * d);
        let reg_ref = assemble_regularization(mesh, eta, &pairs);
        let reg = fold_form(&fold, &reg_ref);
        let mass = assemble_mass(mesh);
        let mut volume_weights = vec![0.0; n];
        for r in 0..mesh.n_nodes() {
            let (_, vals) = mass.row(r * d);
            volume_weights[index[r]] += vals.iter().sum::<f64>();
        }
        let volume: f64 = (0..mesh.elems.len()).map(|e| mesh.elem_volume(e)).sum();
        let mut jumps = CrackJumps::new(mesh);
        let mut on_crack = vec![false; n];
        for i in 0..jumps.len() {
            jumps.outer[i] = index[jumps.outer[i]];
            jumps.inner[i] = index[jumps.inner[i]];
            on_crack[jumps.outer[i]] = true;
            on_crack[jumps.inner[i]] = true;
        }
        for cn in &mesh.crack_nodes {
            on_crack[index[cn.outer]] = true;
            on_crack[index[cn.inner]] = true;
        }
        let pin = (0..n)
            .find(|&j| !on_crack[j])
            .ok_or_else(|| Error::Topology("every cell node lies on the crack".into()))?;
        Ok(Self {
            dim: d,
            index,
            n_nodes: n,
            volume_weights,
            volume,
            jumps,
            pin,
            reg,
            fold,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes * self.dim
    }

    pub fn n_pairs(&self) -> usize {
        self.jumps.len()
    }

    /// Sums slave rows into masters.
    pub fn fold_vector(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for r in 0..self.fold.nrows {
            let (ix, vals) = self.fold.row(r);
            for (&c, &x) in ix.iter().zip(vals) {
                out[c] += x * v[r];
            }
        }
        out
    }

    /// Periodic field on every reference node.
    pub fn unfold_vector(&self, v: &[f64]) -> Vec<f64> {
        self.fold.matvec(v)
    }

    /// Mean over `Y*`, per component.
    pub fn mean(&self, v: &[f64]) -> [f64; 3] {
        let d = self.dim;
        let mut m = [0.0; 3];
        for j in 0..self.n_nodes {
            for c in 0..d {
                m[c] += self.volume_weights[j] * v[j * d + c];
            }
        }
        m.iter_mut().for_each(|x| *x /= self.volume);
        m
    }
}

fn fold_form(fold: &Csr, k: &Csr) -> Csr {
    fold.transpose().matmul(&k.matmul(fold))
}

/// Periodic cell operators for one tensor.
#[derive(Debug, Clone)]
pub struct TensorBlocks {
    /// `∫ a e_y(φ) : e_y(ψ)` on periodic dofs.
    pub k: Csr,
    /// `∫ a (e_c ⊗ e_l) : e_y(φ)` per `c * d + l`.
    pub coupling: Vec<Vec<f64>>,
    /// `∫ a (e_c ⊗ e_l) : (e_{c'} ⊗ e_{l'})`, row-major over `(c d + l)`.
    pub averaged: Vec<f64>,
}

impl TensorBlocks {
    pub fn new(cell: &ReferenceCell, micro: &MicroCell, stiffness: &Stiffness) -> Self {
        let mesh = &cell.mesh;
        let d = mesh.dim;
        let kref = assemble_elasticity(mesh, stiffness);
        let k = fold_form(&micro.fold, &kref);
        // linear fields y ↦ y_l e_c, reproduced exactly by P2
        let fields: Vec<Vec<f64>> = (0..d * d)
            .map(|cl| {
                let (c, l) = (cl / d, cl % d);
                let mut v = vec![0.0; mesh.n_dofs()];
                for (r, x) in mesh.coords.iter().enumerate() {
                    v[r * d + c] = x[l];
                }
                v
            })
            .collect();
        let kv: Vec<Vec<f64>> = fields.iter().map(|v| kref.matvec(v)).collect();
        let coupling = kv.iter().map(|v| micro.fold_vector(v)).collect();
        let mut averaged = vec![0.0; d * d * d * d];
        for p in 0..d * d {
            for q in 0..d * d {
                averaged[p * d * d + q] = crate::linalg::dot(&fields[p], &kv[q]);
            }
        }
        Self {
            k,
            coupling,
            averaged,
        }
    }

    /// `∫ a S : e_y(φ)` for a macro strain `S`.
    pub fn load_for(&self, s: &Sym, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k.nrows];
        for c in 0..d {
            for l in 0..d {
                if s[c][l] != 0.0 {
                    crate::linalg::axpy(s[c][l], &self.coupling[c * d + l], &mut out);
                }
            }
        }
        out
    }
}

/// Global dof layout: macro nodes first, then the corrector of macro node
/// `a` at periodic node `j` as node `n_macro + a n_micro + j`.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub dim: usize,
    pub n_macro: usize,
    pub n_micro: usize,
}

impl Layout {
    pub fn macro_dof(&self, a: usize, c: usize) -> usize {
        a * self.dim + c
    }

    pub fn micro_node(&self, a: usize, j: usize) -> usize {
        self.n_macro + a * self.n_micro + j
    }

    pub fn micro_dof(&self, a: usize, j: usize, c: usize) -> usize {
        self.micro_node(a, j) * self.dim + c
    }

    pub fn n_dofs(&self) -> usize {
        (self.n_macro * (1 + self.n_micro)) * self.dim
    }
}

/// Two-scale quadratic form for `blocks`, plus `micro_extra` weighted by
/// `m_a` on each corrector block.
fn assemble_form(
    mm: &MacroMesh,
    lay: &Layout,
    blocks: &TensorBlocks,
    weights: &[f64],
    micro_extra: Option<&Csr>,
) -> Csr {
    let d = mm.dim;
    let nm = lay.n_dofs();
    let per_block = blocks.k.nnz() + micro_extra.map_or(0, |b| b.nnz());
    let mut t = Triplets::with_capacity(mm.n_nodes() * per_block);
    let dd = d * d;
    for e in 0..mm.elems.len() {
        let aff = mm.affine(e);
        let vol = aff.volume;
        let g = aff.grad_bary;
        let verts = &mm.elems[e][..=d];
        for (bi, &b) in verts.iter().enumerate() {
            for c in 0..d {
                for (bj, &b2) in verts.iter().enumerate() {
                    for c2 in 0..d {
                        let mut s = 0.0;
                        for l in 0..d {
                            for l2 in 0..d {
                                s += g[bi][l] * g[bj][l2] * blocks.averaged[(c * d + l) * dd + c2 * d + l2];
                            }
                        }
                        if s != 0.0 {
                            t.push(lay.macro_dof(b, c), lay.macro_dof(b2, c2), vol * s);
                        }
                    }
                }
            }
        }
        let omega = vol / (d + 1) as f64;
        for &a in verts {
            for (bi, &b) in verts.iter().enumerate() {
                for c in 0..d {
                    let mut s: Sym = [[0.0; 3]; 3];
                    s[c][..d].copy_from_slice(&g[bi][..d]);
                    let col = blocks.load_for(&s, d);
                    let row = lay.macro_dof(b, c);
                    for (k, &v) in col.iter().enumerate() {
                        if v != 0.0 {
                            let m = lay.micro_node(a, k / d) * d + k % d;
                            t.push(row, m, omega * v);
                            t.push(m, row, omega * v);
                        }
                    }
                }
            }
        }
    }
    let block = match micro_extra {
        Some(b) => blocks.k.add_scaled(b, 1.0),
        None => blocks.k.clone(),
    };
    for (a, &w) in weights.iter().enumerate() {
        let off = lay.micro_node(a, 0) * d;
        for r in 0..block.nrows {
            let (ix, vals) = block.row(r);
            for (&c, &v) in ix.iter().zip(vals) {
                t.push(off + r, off + c, w * v);
            }
        }
    }
    t.into_csr(nm, nm)
}

/// Assembled limit problem.
pub struct TwoScaleSystem {
    pub dim: usize,
    pub kappa: f64,
    pub macro_mesh: MacroMesh,
    pub micro: MicroCell,
    pub layout: Layout,
    /// `m_a`.
    pub nodal_weights: Vec<f64>,
    /// Energy form (κ-term included), load and the crack pairs at every
    /// macro node, pair index `a · n_cell_pairs + i`.
    pub problem: PairedProblem,
    /// `‖e(u) + e_y(û)‖²_{L²(Ω×Y*)}`.
    pub strain: Csr,
    /// `‖∇_y e_y(û)‖²_{L²(Ω×Y*)}`.
    pub reg: Csr,
    /// `‖f‖_{L²(Ω)}`.
    pub f_norm: f64,
    /// `(x_a, y_i)` per pair.
    pub positions: Vec<(Point, Point)>,
}

impl Deref for TwoScaleSystem {
    type Target = PairedProblem;

    fn deref(&self) -> &PairedProblem {
        &self.problem
    }
}

impl TwoScaleSystem {
    /// `κ = 0` gives the given-friction limit problem without the
    /// strain-gradient term.
    pub fn new<F>(
        macro_mesh: MacroMesh,
        cell: &ReferenceCell,
        stiffness: &Stiffness,
        kappa: f64,
        eta: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&Point) -> [f64; 3],
    {
        if macro_mesh.dim != cell.dim() {
            return Err(invalid("macro mesh and cell dimensions differ"));
        }
        if !(kappa >= 0.0) {
            return Err(invalid(format!("κ = {kappa} must be non-negative")));
        }
        stiffness.bounds(cell.dim())?;
        let d = cell.dim();
        let micro = MicroCell::new(cell, eta)?;
        let layout = Layout {
            dim: d,
            n_macro: macro_mesh.n_nodes(),
            n_micro: micro.n_nodes,
        };
        let weights = macro_mesh.nodal_weights();
        let blocks = TensorBlocks::new(cell, &micro, stiffness);
        let reg_block = micro.reg.scaled(kappa);
        let k = assemble_form(&macro_mesh, &layout, &blocks, &weights, (kappa > 0.0).then_some(&reg_block));
        let identity = TensorBlocks::new(cell, &micro, &Stiffness::isotropic(0.0, 0.5));
        let strain = assemble_form(&macro_mesh, &layout, &identity, &weights, None);
        let reg = {
            let mut t = Triplets::with_capacity(weights.len() * micro.reg.nnz());
            for (a, &w) in weights.iter().enumerate() {
                let off = layout.micro_node(a, 0) * d;
                for r in 0..micro.reg.nrows {
                    let (ix, vals) = micro.reg.row(r);
                    for (&c, &v) in ix.iter().zip(vals) {
                        t.push(off + r, off + c, w * v);
                    }
                }
            }
            t.into_csr(layout.n_dofs(), layout.n_dofs())
        };
        let (load, f_norm) = macro_load(&macro_mesh, &f);
        let mut full_load = vec![0.0; layout.n_dofs()];
        full_load[..load.len()].copy_from_slice(&load);

        let mut fixed = vec![false; layout.n_dofs()];
        for a in 0..layout.n_macro {
            for c in 0..d {
                if macro_mesh.dirichlet[a] {
                    fixed[layout.macro_dof(a, c)] = true;
                }
                fixed[layout.micro_dof(a, micro.pin, c)] = true;
            }
        }
        let cj = &micro.jumps;
        let mut jumps = CrackJumps {
            dim: d,
            nodes: Vec::new(),
            outer: Vec::new(),
            inner: Vec::new(),
            normals: Vec::new(),
            tangents: Vec::new(),
            weights: Vec::new(),
        };
        let mut positions = Vec::new();
        let ref_jumps = CrackJumps::new(&cell.mesh);
        for a in 0..layout.n_macro {
            for i in 0..cj.len() {
                jumps.nodes.push(a * cj.len() + i);
                jumps.outer.push(layout.micro_node(a, cj.outer[i]));
                jumps.inner.push(layout.micro_node(a, cj.inner[i]));
                jumps.normals.push(cj.normals[i]);
                jumps.tangents.push(cj.tangents[i]);
                jumps.weights.push(weights[a] * cj.weights[i]);
                positions.push((macro_mesh.coords[a], cell.mesh.coords[ref_jumps.outer[i]]));
            }
        }
        let problem = PairedProblem::new(d, k, full_load, jumps, &fixed)?;
        Ok(Self {
            dim: d,
            kappa,
            macro_mesh,
            micro,
            layout,
            nodal_weights: weights,
            problem,
            strain,
            reg,
            f_norm,
            positions,
        })
    }

    pub fn n_cell_pairs(&self) -> usize {
        self.micro.n_pairs()
    }

    /// Per-pair values of `G(x, y)`, checked non-negative.
    pub fn friction_values<G: Fn(&Point, &Point) -> f64>(&self, g: G) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.positions.iter().map(|(x, y)| g(x, y)).collect();
        if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
            return Err(invalid(format!("friction value {x} must be non-negative")));
        }
        Ok(v)
    }

    /// `‖v‖_{L²(Ω×S)}` of a per-pair scalar.
    pub fn pair_l2(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.problem.jumps.weights)
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// `𝐍(v, v̂)` of a full coefficient vector.
    pub fn n_norm(&self, w: &[f64]) -> f64 {
        (self.strain.quad(w) + self.reg.quad(w)).max(0.0).sqrt()
    }

    /// Splits a full vector into macro values and zero-mean correctors.
    pub fn split(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lay = &self.layout;
        let d = self.dim;
        let u = w[..lay.n_macro * d].to_vec();
        let mut hat = w[lay.n_macro * d..].to_vec();
        let nd = self.micro.n_dofs();
        for a in 0..lay.n_macro {
            let blk = &mut hat[a * nd..(a + 1) * nd];
            let m = self.micro.mean(blk);
            for j in 0..self.micro.n_nodes {
                for c in 0..d {
                    blk[j * d + c] -= m[c];
                }
            }
        }
        (u, hat)
    }
}

fn macro_load<F: Fn(&Point) -> [f64; 3]>(mm: &MacroMesh, f: &F) -> (Vec<f64>, f64) {
    let d = mm.dim;
    let rule = simplex_rule(d, 3);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let mut out = vec![0.0; mm.n_nodes() * d];
    let mut norm2 = 0.0;
    for e in 0..mm.elems.len() {
        let aff = mm.affine(e);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let fx = f(&aff.point(b));
            let wq = w * fact * aff.volume;
            for i in 0..=d {
                for c in 0..d {
                    out[mm.elems[e][i] * d + c] += wq * b[i] * fx[c];
                }
            }
            norm2 += wq * (0..d).map(|c| fx[c] * fx[c]).sum::<f64>();
        }
    }
    (out, norm2.sqrt())
}

/// Limit solution `(u, û, Σ_ν)`.
#[derive(Debug, Clone)]
pub struct TwoScaleSolution {
    pub dim: usize,
    /// Macro nodal values.
    pub u: Vec<f64>,
    /// Zero-mean correctors, `n_micro · d` values per macro node.
    pub correctors: Vec<f64>,
    /// `Σ_ν` per pair.
    pub sigma_n: Vec<f64>,
    /// `σ_τ` per pair in the tangent frame.
    pub sigma_t: Vec<[f64; 2]>,
    /// `[û_ν]` per pair.
    pub gap: Vec<f64>,
    pub slip: Vec<[f64; 2]>,
    pub energy: f64,
    pub log: Vec<IterationLog>,
    /// Solver output on the full coefficient vector.
    pub raw: ContactSolution,
}

impl TwoScaleSolution {
    pub fn corrector(&self, a: usize, n_micro: usize) -> &[f64] {
        let nd = n_micro * self.dim;
        &self.correctors[a * nd..(a + 1) * nd]
    }

    /// Macro strain on element `e`.
    pub fn macro_strain(&self, mm: &MacroMesh, e: usize) -> Sym {
        let d = self.dim;
        let g = mm.affine(e).grad_bary;
        let mut s = [[0.0; 3]; 3];
        for i in 0..=d {
            let a = mm.elems[e][i];
            for c in 0..d {
                for l in 0..d {
                    let v = 0.5 * self.u[a * d + c] * g[i][l];
                    s[c][l] += v;
                    s[l][c] += v;
                }
            }
        }
        s
    }
}

fn wrap(sys: &TwoScaleSystem, raw: ContactSolution) -> TwoScaleSolution {
    let (u, correctors) = sys.split(&raw.u);
    TwoScaleSolution {
        dim: sys.dim,
        u,
        correctors,
        sigma_n: raw.sigma_n(),
        sigma_t: raw.sigma_t(),
        gap: raw.gap.clone(),
        slip: raw.slip.clone(),
        energy: raw.energy,
        log: raw.log.clone(),
        raw,
    }
}

/// Given-friction limit problem for `G` per pair.
pub fn solve_limit_given_friction(
    sys: &TwoScaleSystem,
    g: &[f64],
    opts: &SolverOptions,
) -> Result<TwoScaleSolution> {
    let raw = solve_given_friction(&sys.problem, g, opts, None)?;
    Ok(wrap(sys, raw))
}

/// Outcome of the limit Coulomb fixed point.
#[derive(Debug, Clone)]
pub struct TwoScaleCoulomb {
    pub solution: TwoScaleSolution,
    pub g: Vec<f64>,
    /// `‖Ĝ_{k+1} − Ĝ_k‖_{L²(Ω×S)}` per outer iteration.
    pub history: Vec<f64>,
    pub contraction: f64,
    pub converged: bool,
}

/// `Ĝ_{k+1} = μ|Σ_ν(Ĝ_k)|` on the problem with the strain-gradient term.
pub fn solve_limit_coulomb(
    sys: &TwoScaleSystem,
    mu: &[f64],
    g0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
) -> Result<TwoScaleCoulomb> {
    if !(sys.kappa > 0.0) {
        return Err(invalid("the limit Coulomb problem needs κ > 0"));
    }
    let r = coulomb_fixed_point(&sys.problem, mu, g0, tol, max_iter, opts, |v| sys.pair_l2(v))?;
    Ok(TwoScaleCoulomb {
        solution: wrap(sys, r.solution),
        g: r.g,
        history: r.history,
        contraction: r.contraction,
        converged: r.converged,
    })
}

/// Per-pair `μ(x_a)`.
pub fn macro_friction<M: Fn(&Point) -> f64>(sys: &TwoScaleSystem, mu: M) -> Result<Vec<f64>> {
    sys.friction_values(|x, _| mu(x))
}

/// Constant of `C*(|ζ| + ‖e_y(ŵ)‖) ≤ ‖ζ + e_y(ŵ)‖`.
#[derive(Debug, Clone)]
pub struct TwoScaleKorn {
    pub constant: f64,
    /// Largest cosine between constant strains and periodic strain fields.
    pub cosine: f64,
    /// Symmetric matrix and corrector attaining the constant.
    pub zeta: Sym,
    pub corrector: Vec<f64>,
}

/// With `c` the largest cosine between `ζ` and `e_y(W(Y*))`, the quotient is
/// smallest at `|ζ| = ‖e_y(ŵ)‖` with opposite alignment, giving
/// `C* = √((1 − c)/2)`. `c² = λ_max(M)`, `M_pq = ‖P ζ_p‖` Gram of the
/// projections of an orthonormal basis onto periodic strains.
pub fn two_scale_korn_constant(cell: &ReferenceCell) -> Result<TwoScaleKorn> {
    let d = cell.dim();
    let micro = MicroCell::new(cell, 1.0)?;
    let blocks = TensorBlocks::new(cell, &micro, &Stiffness::isotropic(0.0, 0.5));
    let mut keep = vec![true; micro.n_dofs()];
    for c in 0..d {
        keep[micro.pin * d + c] = false;
    }
    let (kr, map) = blocks.k.restrict_symmetric(&keep);
    let chol = Cholesky::factor(&kr)
        .map_err(|e| Error::Eigen(format!("periodic strain form is singular: {e}")))?;
    let basis = strain_basis(d);
    let m = basis.len();
    let mut w = Vec::with_capacity(m);
    for z in &basis {
        let b = blocks.load_for(z, d);
        let mut rhs = vec![0.0; kr.nrows];
        for (i, mi) in map.iter().enumerate() {
            if let Some(k) = mi {
                rhs[*k] = -b[i];
            }
        }
        let x = chol.solve(&rhs);
        let mut full = vec![0.0; micro.n_dofs()];
        for (i, mi) in map.iter().enumerate() {
            if let Some(k) = mi {
                full[i] = x[*k];
            }
        }
        w.push(full);
    }
    let mut gram = faer::Mat::<f64>::zeros(m, m);
    for p in 0..m {
        let kp = blocks.k.matvec(&w[p]);
        for q in 0..m {
            gram[(p, q)] = crate::linalg::dot(&kp, &w[q]) / micro.volume;
        }
    }
    let (vals, vecs) = symmetric_eigen(&gram)?;
    let c = vals[m - 1].max(0.0).sqrt().min(1.0);
    // extremal pair: ζ along the top eigenvector, ŵ its corrector scaled so
    // ‖e_y(ŵ)‖ = |ζ| (the projection is −e_y(w_ζ), so the sign is kept)
    let mut zeta = [[0.0; 3]; 3];
    let mut corrector = vec![0.0; micro.n_dofs()];
    for p in 0..m {
        let s = vecs[(p, m - 1)];
        for i in 0..3 {
            for j in 0..3 {
                zeta[i][j] += s * basis[p][i][j];
            }
        }
        crate::linalg::axpy(s, &w[p], &mut corrector);
    }
    if c > 0.0 {
        corrector.iter_mut().for_each(|v| *v /= c);
    }
    Ok(TwoScaleKorn {
        constant: ((1.0 - c) / 2.0).max(0.0).sqrt(),
        cosine: c,
        zeta,
        corrector: micro.unfold_vector(&corrector),
    })
}

/// `‖ζ + e_y(ŵ)‖ / (|ζ| + ‖e_y(ŵ)‖)` by quadrature, `ŵ` on reference nodes.
pub fn korn_quotient(cell: &ReferenceCell, zeta: &Sym, w: &[f64]) -> f64 {
    let mesh = &cell.mesh;
    let d = mesh.dim;
    let rule = simplex_rule(d, 2);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let (mut sum, mut ew, mut vol) = (0.0, 0.0, 0.0);
    for e in 0..mesh.elems.len() {
        let aff = element_affine(mesh, e);
        let vals = node_values(mesh, e, w);
        for (b, wt) in rule.bary.iter().zip(&rule.weights) {
            let s = strain(&aff, b, &vals);
            let wq = wt * fact * aff.volume;
            let (mut a2, mut b2) = (0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    a2 += (zeta[i][j] + s[i][j]).powi(2);
                    b2 += s[i][j] * s[i][j];
                }
            }
            sum += wq * a2;
            ew += wq * b2;
            vol += wq;
        }
    }
    let z: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| zeta[i][j].powi(2)).sum();
    sum.sqrt() / ((z * vol).sqrt() + ew.sqrt())
}

fn node_values(mesh: &CrackedMesh, e: usize, u: &[f64]) -> Vec<[f64; 3]> {
    let d = mesh.dim;
    let npe = crate::geometry::nodes_per_element(d);
    (0..npe)
        .map(|a| {
            let n = mesh.elems[e].nodes[a];
            let mut v = [0.0; 3];
            v[..d].copy_from_slice(&u[n * d..n * d + d]);
            v
        })
        .collect()
}

/// Quantities of the limit solution evaluated at reference quadrature points,
/// for comparison with unfolded `ε`-fields.
struct LimitSampler<'a> {
    sys: &'a TwoScaleSystem,
    sol: &'a TwoScaleSolution,
    /// `e_y(û_a)` per macro node, element, quadrature point.
    micro_strain: Vec<Vec<Sym>>,
    rule_len: usize,
    /// `[û_a]` per macro node and cell pair.
    micro_jump: Vec<Vec<Point>>,
}

impl<'a> LimitSampler<'a> {
    fn new(cell: &ReferenceCell, sys: &'a TwoScaleSystem, sol: &'a TwoScaleSolution) -> Self {
        let mesh = &cell.mesh;
        let d = mesh.dim;
        let rule = simplex_rule(d, 2);
        let nm = sys.layout.n_macro;
        let mut micro_strain = Vec::with_capacity(nm);
        let mut micro_jump = Vec::with_capacity(nm);
        let np = sys.n_cell_pairs();
        for a in 0..nm {
            let w = sys.micro.unfold_vector(sol.corrector(a, sys.micro.n_nodes));
            let mut s = Vec::with_capacity(mesh.elems.len() * rule.len());
            for e in 0..mesh.elems.len() {
                let aff = element_affine(mesh, e);
                let vals = node_values(mesh, e, &w);
                for b in &rule.bary {
                    s.push(strain(&aff, b, &vals));
                }
            }
            micro_strain.push(s);
            let full_idx = |i: usize| a * np + i;
            let j: Vec<Point> = (0..np)
                .map(|i| sys.problem.jumps.jump_vector(&sol.raw.u, full_idx(i)))
                .collect();
            micro_jump.push(j);
        }
        Self {
            sys,
            sol,
            micro_strain,
            rule_len: rule.len(),
            micro_jump,
        }
    }

    /// Macro element, nodes and shape values at `x`.
    fn at(&self, x: &Point) -> Option<(usize, [usize; 4], [f64; 4])> {
        let mm = &self.sys.macro_mesh;
        mm.locate(x).map(|(e, b)| (e, mm.elems[e], b))
    }
}

/// Tensor Gauss points on a box.
fn box_points(lo: &Point, hi: &Point, d: usize, n: usize) -> Vec<(Point, f64)> {
    let r = gauss_legendre(n);
    let mut out = Vec::new();
    let count = n.pow(d as u32);
    for idx in 0..count {
        let mut x = [0.0; 3];
        let mut w = 1.0;
        let mut k = idx;
        for a in 0..d {
            let i = k % n;
            k /= n;
            x[a] = lo[a] + r.points[i] * (hi[a] - lo[a]);
            w *= r.weights[i] * (hi[a] - lo[a]);
        }
        out.push((x, w));
    }
    out
}

/// Unfolded errors of one `ε`-field against the limit on `Ω′ × Y*`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnfoldedErrors {
    /// `‖𝒯*_ε(e(u_ε)) − (e(u) + e_y(û))‖_{L²(Ω′×Y*)}`.
    pub strain: f64,
    /// `‖𝒯^b_ε(σ_ν(u_ε)) − Σ_ν‖_{L²(Ω′×S)}`; zero without stresses.
    pub sigma: f64,
    /// `‖ε⁻¹𝒯^b_ε([u_ε]) − [û]‖_{L²(Ω′×S)}`.
    pub jump: f64,
    /// `‖e(u) + e_y(û)‖_{L²(Ω′×Y*)}`.
    pub reference: f64,
}

/// Compares `u_eps` on the tiled `mesh` with the limit over `omega`.
/// `sigma_eps` is `σ_ν` per pair of `mesh`, if available.
pub fn unfolded_errors(
    cell: &ReferenceCell,
    sys: &TwoScaleSystem,
    sol: &TwoScaleSolution,
    mesh: &CrackedMesh,
    u_eps: &[f64],
    sigma_eps: Option<&[f64]>,
    omega: &BoxDomain,
) -> Result<UnfoldedErrors> {
    let d = mesh.dim;
    if mesh.ref_elems != cell.n_elems() || mesh.ref_nodes != cell.n_nodes() {
        return Err(invalid("tiled mesh was not built from this reference cell"));
    }
    let samp = LimitSampler::new(cell, sys, sol);
    let rule = simplex_rule(d, 2);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let eps = mesh.epsilon;
    let eps_jumps = CrackJumps::new(mesh);
    let np = sys.n_cell_pairs();
    let cell_w = &sys.micro.jumps.weights;
    if eps_jumps.len() != mesh.n_cells() * np {
        return Err(Error::Topology("crack pairs are not one reference set per cell".into()));
    }
    let ref_aff: Vec<Affine> = (0..cell.n_elems()).map(|e| element_affine(&cell.mesh, e)).collect();
    let mut out = UnfoldedErrors::default();
    let (mut es, mut ss, mut js, mut rs) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..mesh.n_cells() {
        let xi = mesh.cells[c];
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut empty = false;
        for k in 0..d {
            lo[k] = (eps * xi[k] as f64).max(omega.lo[k]);
            hi[k] = (eps * (xi[k] + 1) as f64).min(omega.hi[k]);
            empty |= hi[k] <= lo[k];
        }
        if empty {
            continue;
        }
        // unfolded ε-strain at reference quadrature points
        let mut eps_strain = Vec::with_capacity(cell.n_elems() * rule.len());
        for e in mesh.cell_elem_range(c) {
            let aff = element_affine(mesh, e);
            let vals = node_values(mesh, e, u_eps);
            for b in &rule.bary {
                eps_strain.push(strain(&aff, b, &vals));
            }
        }
        for (x, wx) in box_points(&lo, &hi, d, 3) {
            let (me, nodes, nb) = samp
                .at(&x)
                .ok_or_else(|| Error::Geometry("Ω′ leaves the macro mesh".into()))?;
            let ex = sol.macro_strain(&sys.macro_mesh, me);
            for k in 0..cell.n_elems() {
                let vol = ref_aff[k].volume;
                for (q, wq) in rule.weights.iter().enumerate() {
                    let idx = k * samp.rule_len + q;
                    let mut lim = ex;
                    for i in 0..=d {
                        let s = &samp.micro_strain[nodes[i]][idx];
                        for r in 0..d {
                            for t in 0..d {
                                lim[r][t] += nb[i] * s[r][t];
                            }
                        }
                    }
                    let e = &eps_strain[idx];
                    let (mut diff, mut refn) = (0.0, 0.0);
                    for r in 0..d {
                        for t in 0..d {
                            diff += (e[r][t] - lim[r][t]).powi(2);
                            refn += lim[r][t].powi(2);
                        }
                    }
                    let w = wx * wq * fact * vol;
                    es += w * diff;
                    rs += w * refn;
                }
            }
            for i in 0..np {
                let p = c * np + i;
                let mut jl = [0.0; 3];
                let mut sl = 0.0;
                for v in 0..=d {
                    let a = nodes[v];
                    let jv = &samp.micro_jump[a][i];
                    for r in 0..d {
                        jl[r] += nb[v] * jv[r];
                    }
                    sl += nb[v] * samp.sol.sigma_n[a * np + i];
                }
                let je = eps_jumps.jump_vector(u_eps, p);
                let dj: f64 = (0..d).map(|r| (je[r] / eps - jl[r]).powi(2)).sum();
                js += wx * cell_w[i] * dj;
                if let Some(s) = sigma_eps {
                    ss += wx * cell_w[i] * (s[p] - sl).powi(2);
                }
            }
        }
    }
    out.strain = es.sqrt();
    out.sigma = ss.sqrt();
    out.jump = js.sqrt();
    out.reference = rs.sqrt();
    Ok(out)
}

/// Nodal values of `u(x) + ε û(x, x/ε)` on a tiled mesh.
pub fn manufactured_field(
    cell: &ReferenceCell,
    sys: &TwoScaleSystem,
    sol: &TwoScaleSolution,
    mesh: &CrackedMesh,
) -> Result<Vec<f64>> {
    let d = mesh.dim;
    let eps = mesh.epsilon;
    if mesh.lambda_elems < mesh.elems.len() {
        return Err(invalid("manufactured fields need a domain tiled by whole cells"));
    }
    let nm = sys.micro.n_nodes;
    let mut out = vec![0.0; mesh.n_dofs()];
    for c in 0..mesh.n_cells() {
        for r in 0..cell.n_nodes() {
            let n = mesh.cell_node(c, r);
            let x = mesh.coords[n];
            let (e, b) = sys
                .macro_mesh
                .locate(&x)
                .ok_or_else(|| Error::Geometry("tiled domain leaves the macro mesh".into()))?;
            let j = sys.micro.index[r];
            for comp in 0..d {
                let mut v = 0.0;
                for i in 0..=d {
                    let a = sys.macro_mesh.elems[e][i];
                    v += b[i] * (sol.u[a * d + comp] + eps * sol.corrector(a, nm)[j * d + comp]);
                }
                out[n * d + comp] = v;
            }
        }
    }
    Ok(out)
}

/// Setup shared by the `ε`-problems and the limit problem.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub domain: BoxDomain,
    pub gamma: Vec<Face>,
    pub stiffness: Stiffness,
    pub eta: f64,
    /// Macro mesh size of the limit problem.
    pub macro_h: f64,
    /// `Ω′` as a fraction of `Ω`.
    pub omega_scale: f64,
    pub opts: SolverOptions,
}

/// Error sequences over `ε`.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    pub errors: Vec<UnfoldedErrors>,
    /// `log(e_k / e_{k+1}) / log(ε_k / ε_{k+1})` of the strain error.
    pub strain_orders: Vec<f64>,
    /// Limit energy and iterations of the limit solve.
    pub limit_energy: f64,
}

impl ConvergenceReport {
    pub fn strain_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1].strain < w[0].strain)
    }

    pub fn sigma_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1].sigma < w[0].sigma)
    }
}

fn orders(eps: &[f64], e: &[f64]) -> Vec<f64> {
    eps.windows(2)
        .zip(e.windows(2))
        .map(|(h, v)| (v[0] / v[1]).ln() / (h[0] / h[1]).ln())
        .collect()
}

/// Limit system and its given-friction solution for a study setup (`κ = 0`).
pub fn limit_solution<F, G>(
    cell: &ReferenceCell,
    setup: &StudySetup,
    f: F,
    g: G,
) -> Result<(TwoScaleSystem, TwoScaleSolution)>
where
    F: Fn(&Point) -> [f64; 3],
    G: Fn(&Point, &Point) -> f64,
{
    let mm = MacroMesh::structured(setup.domain, setup.macro_h, &setup.gamma)?;
    let sys = TwoScaleSystem::new(mm, cell, &setup.stiffness, 0.0, setup.eta, f)?;
    let gl = sys.friction_values(g)?;
    let sol = solve_limit_given_friction(&sys, &gl, &setup.opts)?;
    Ok((sys, sol))
}

/// Given friction `G(x, y)` on every level, `κ = 0` in the `ε`-problems.
pub fn convergence_study<F, G>(
    cell: &ReferenceCell,
    setup: &StudySetup,
    f: F,
    g: G,
    epsilons: &[f64],
) -> Result<ConvergenceReport>
where
    F: Fn(&Point) -> [f64; 3] + Copy,
    G: Fn(&Point, &Point) -> f64 + Copy,
{
    let (sys, sol) = limit_solution(cell, setup, f, g)?;
    convergence_against(cell, setup, &sys, &sol, f, g, epsilons)
}

/// [`convergence_study`] against a precomputed limit.
pub fn convergence_against<F, G>(
    cell: &ReferenceCell,
    setup: &StudySetup,
    sys: &TwoScaleSystem,
    sol: &TwoScaleSolution,
    f: F,
    g: G,
    epsilons: &[f64],
) -> Result<ConvergenceReport>
where
    F: Fn(&Point) -> [f64; 3] + Copy,
    G: Fn(&Point, &Point) -> f64 + Copy,
{
    if epsilons.len() < 2 {
        return Err(invalid("a convergence study needs at least two ε values"));
    }
    let omega = setup.domain.scaled(setup.omega_scale);
    let mut errors = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mesh = tile_domain(setup.domain, &setup.gamma, cell, eps)?;
        let es = ContactSystem::new(cell, &mesh, &setup.stiffness, 0.0, setup.eta, f)?;
        let ge: Vec<f64> = es
            .positions
            .iter()
            .map(|x| {
                let mut y = [0.0; 3];
                for k in 0..mesh.dim {
                    let t = x[k] / eps;
                    y[k] = t - t.floor();
                }
                g(x, &y)
            })
            .collect();
        let s = solve_given_friction(&es, &ge, &setup.opts, None)?;
        errors.push(unfolded_errors(cell, sys, sol, &mesh, &s.u, Some(&s.sigma_n()), &omega)?);
    }
    let se: Vec<f64> = errors.iter().map(|e| e.strain).collect();
    Ok(ConvergenceReport {
        epsilons: epsilons.to_vec(),
        strain_orders: orders(epsilons, &se),
        errors,
        limit_energy: sol.energy,
    })
}

/// Errors of the manufactured fields `u + εû(·, ·/ε)` against the limit.
pub fn manufactured_study(
    cell: &ReferenceCell,
    sys: &TwoScaleSystem,
    sol: &TwoScaleSolution,
    gamma: &[Face],
    omega: &BoxDomain,
    epsilons: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if epsilons.len() < 2 {
        return Err(invalid("a convergence study needs at least two ε values"));
    }
    let mut errs = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mesh = tile_domain(sys.macro_mesh.domain, gamma, cell, eps)?;
        let v = manufactured_field(cell, sys, sol, &mesh)?;
        errs.push(unfolded_errors(cell, sys, sol, &mesh, &v, None, omega)?.strain);
    }
    let o = orders(epsilons, &errs);
    Ok((errs, o))
}

/// Mean `∫_{Y*} û_a` per macro node, for the orthogonality check.
pub fn corrector_means(sys: &TwoScaleSystem, sol: &TwoScaleSolution) -> Vec<[f64; 3]> {
    (0..sys.layout.n_macro)
        .map(|a| sys.micro.mean(sol.corrector(a, sys.micro.n_nodes)))
        .collect()
}

/// Cell coordinate of an element point on the reference cell.
pub fn reference_coordinate(cell: &ReferenceCell, e: usize, x: &Point) -> Point {
    cell_coordinate(&cell.mesh, e, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reference_cell, CellSpec, CrackShape};
    use crate::linalg::max_abs;

    fn flat_cell(div: usize) -> ReferenceCell {
        build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, div)).unwrap()
    }

    fn left() -> Vec<Face> {
        vec![Face { axis: 0, upper: false }]
    }

    #[test]
    fn macro_mesh_weights_and_location() {
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.25, &left()).unwrap();
        let m: f64 = mm.nodal_weights().iter().sum();
        assert!((m - 1.0).abs() < 1e-14);
        let x = [0.3, 0.7, 0.0];
        let (e, b) = mm.locate(&x).unwrap();
        let p = mm.affine(e).point(&b);
        assert!((p[0] - x[0]).abs() < 1e-14 && (p[1] - x[1]).abs() < 1e-14);
        assert_eq!(mm.dirichlet.iter().filter(|&&b| b).count(), 5);
        let mm3 = MacroMesh::structured(BoxDomain::unit(3), 0.5, &[]).unwrap();
        let v: f64 = (0..mm3.elems.len()).map(|e| mm3.affine(e).volume).sum();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_load_gives_zero() {
        let cell = flat_cell(4);
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 1.0), 0.0, 10.0, |_| [0.0; 3]).unwrap();
        let g = vec![0.5; sys.n_pairs()];
        let s = solve_limit_given_friction(&sys, &g, &SolverOptions::default()).unwrap();
        assert_eq!(max_abs(&s.u), 0.0);
        assert_eq!(max_abs(&s.correctors), 0.0);
    }

    #[test]
    fn operator_is_symmetric() {
        let cell = flat_cell(4);
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 2.0), 0.5, 10.0, |_| [1.0, 0.0, 0.0]).unwrap();
        let k = &sys.problem.stiffness;
        assert!(k.asymmetry() <= 1e-12 * k.max_abs());
    }

    /// P1 elasticity assembled directly from the tensor.
    fn plain_p1(mm: &MacroMesh, st: &Stiffness, f: [f64; 3]) -> Vec<f64> {
        let d = mm.dim;
        let a = st.at(d, &[0.0; 3]);
        let n = mm.n_nodes() * d;
        let mut t = Triplets::with_capacity(0);
        let mut load = vec![0.0; n];
        for e in 0..mm.elems.len() {
            let aff = mm.affine(e);
            let g = aff.grad_bary;
            for i in 0..=d {
                for c in 0..d {
                    load[mm.elems[e][i] * d + c] += aff.volume / (d + 1) as f64 * f[c];
                    for j in 0..=d {
                        for c2 in 0..d {
                            let mut s = 0.0;
                            for l in 0..d {
                                for l2 in 0..d {
                                    s += a[c][l][c2][l2] * g[i][l] * g[j][l2];
                                }
                            }
                            t.push(mm.elems[e][i] * d + c, mm.elems[e][j] * d + c2, aff.volume * s);
                        }
                    }
                }
            }
        }
        let k = t.into_csr(n, n);
        let keep: Vec<bool> = (0..n).map(|i| !mm.dirichlet[i / d]).collect();
        let (kr, map) = k.restrict_symmetric(&keep);
        let mut rhs = vec![0.0; kr.nrows];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                rhs[*k] = load[i];
            }
        }
        let x = Cholesky::factor(&kr).unwrap().solve(&rhs);
        let mut u = vec![0.0; n];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                u[i] = x[*k];
            }
        }
        u
    }

    #[test]
    fn glued_constant_tensor_has_no_corrector() {
        let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 4).glued()).unwrap();
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.25, &left()).unwrap();
        let st = Stiffness::isotropic(1.0, 1.0);
        let f = [1.0, -0.5, 0.0];
        let oracle = plain_p1(&mm, &st, f);
        let sys = TwoScaleSystem::new(mm, &cell, &st, 0.0, 10.0, move |_| f).unwrap();
        assert_eq!(sys.n_pairs(), 0);
        let s = solve_limit_given_friction(&sys, &[], &SolverOptions::default()).unwrap();
        let scale = max_abs(&oracle);
        let du = s.u.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(du < 1e-10 * scale, "{du}");
        assert!(max_abs(&s.correctors) < 1e-10 * scale);
    }

    /// `∫_{Y*} a (E + e_y(w)) : (E + e_y(w))` by quadrature on the cell.
    fn cell_energy(cell: &ReferenceCell, st: &Stiffness, e0: &Sym, w: &[f64]) -> f64 {
        let mesh = &cell.mesh;
        let d = mesh.dim;
        let rule = simplex_rule(d, 3);
        let mut s = 0.0;
        for e in 0..mesh.elems.len() {
            let aff = element_affine(mesh, e);
            let vals = node_values(mesh, e, w);
            for (b, wt) in rule.bary.iter().zip(&rule.weights) {
                let mut es = strain(&aff, b, &vals);
                for i in 0..d {
                    for j in 0..d {
                        es[i][j] += e0[i][j];
                    }
                }
                let a = st.at(d, &aff.point(b));
                s += wt * 2.0 * aff.volume * crate::assembly::contract(&a, &es, &es);
            }
        }
        s
    }

    #[test]
    fn one_node_reduction_matches_cell_energy() {
        let cell = flat_cell(4);
        let st = Stiffness::TwoPhase {
            matrix: (1.0, 1.0),
            inclusion: (4.0, 3.0),
            width: 0.1,
            shape: CrackShape::circle(0.3, 0.5),
        };
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &[]).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &st, 0.0, 10.0, |_| [0.0; 3]).unwrap();
        let d = 2;
        // affine macro field with strain E, the same corrector at every node
        let grad = [[0.3, -0.2], [0.5, 0.1]];
        let mut e0 = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                e0[i][j] = 0.5 * (grad[i][j] + grad[j][i]);
            }
        }
        let nm = sys.micro.n_nodes;
        let w: Vec<f64> = (0..nm * d).map(|k| ((k * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let mut full = vec![0.0; sys.layout.n_dofs()];
        for a in 0..sys.layout.n_macro {
            let x = sys.macro_mesh.coords[a];
            for c in 0..d {
                full[a * d + c] = grad[c][0] * x[0] + grad[c][1] * x[1];
            }
            for k in 0..nm * d {
                full[sys.layout.micro_node(a, 0) * d + k] = w[k];
            }
        }
        let two_scale = sys.problem.stiffness.quad(&full);
        let direct = cell_energy(&cell, &st, &e0, &sys.micro.unfold_vector(&w));
        assert!((two_scale - direct).abs() < 1e-10 * direct, "{two_scale} vs {direct}");
    }

    #[test]
    fn two_phase_corrector_lowers_the_energy() {
        let cell = flat_cell(4);
        let st = Stiffness::TwoPhase {
            matrix: (1.0, 1.0),
            inclusion: (5.0, 4.0),
            width: 0.1,
            shape: CrackShape::circle(0.3, 0.5),
        };
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &st, 0.0, 10.0, |_| [1.0, 0.5, 0.0]).unwrap();
        let g = vec![0.0; sys.n_pairs()];
        let s = solve_limit_given_friction(&sys, &g, &SolverOptions::default()).unwrap();
        assert!(max_abs(&s.correctors) > 1e-6);
        // û = 0 restriction: macro block only
        let n = sys.layout.n_macro * 2;
        let keep: Vec<bool> = (0..sys.layout.n_dofs())
            .map(|i| i < n && !sys.macro_mesh.dirichlet[i / 2])
            .collect();
        let (kr, map) = sys.problem.stiffness.restrict_symmetric(&keep);
        let mut rhs = vec![0.0; kr.nrows];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                rhs[*k] = sys.problem.load[i];
            }
        }
        let x = Cholesky::factor(&kr).unwrap().solve(&rhs);
        let restricted = -0.5 * crate::linalg::dot(&x, &rhs);
        assert!(s.energy < restricted - 1e-8 * restricted.abs(), "{} vs {restricted}", s.energy);
    }

    #[test]
    fn contact_solution_is_feasible_and_mean_free() {
        let cell = flat_cell(8);
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 1.0), 0.0, 10.0, |_| [-1.0, 0.3, 0.0]).unwrap();
        let g = sys.friction_values(|_, _| 0.1).unwrap();
        let s = solve_limit_given_friction(&sys, &g, &SolverOptions::default()).unwrap();
        let kkt = crate::contact::verify_kkt(&sys.problem, &s.raw, &g);
        assert!(kkt.max() < 1e-8, "{kkt:?}");
        let scale = max_abs(&s.raw.u);
        assert!(s.gap.iter().all(|&x| x <= 1e-10 * scale));
        assert!(s.sigma_n.iter().all(|&x| x <= 1e-10 * max_abs(&s.sigma_n)));
        for m in corrector_means(&sys, &s) {
            assert!(m.iter().all(|v| v.abs() < 1e-10 * scale));
        }
    }

    #[test]
    fn korn_constant_glued_and_cracked() {
        let glued = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 4).glued()).unwrap();
        let k = two_scale_korn_constant(&glued).unwrap();
        assert!(k.cosine < 1e-10, "{}", k.cosine);
        assert!((k.constant - 0.5f64.sqrt()).abs() < 1e-10);
        let cell = flat_cell(8);
        let k = two_scale_korn_constant(&cell).unwrap();
        assert!(k.constant > 0.0 && k.cosine > 1e-3, "{k:?}");
        let attained = korn_quotient(&cell, &k.zeta, &k.corrector);
        assert!((attained - k.constant).abs() < 1e-8, "{attained} vs {}", k.constant);
        // ŵ = 0: the quotient is one
        let zero = vec![0.0; cell.mesh.n_dofs()];
        assert!((korn_quotient(&cell, &k.zeta, &zero) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coulomb_limit_with_zero_mu_takes_one_step() {
        let cell = flat_cell(4);
        let mm = MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap();
        let sys = TwoScaleSystem::new(mm, &cell, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, |_| [-1.0, 0.3, 0.0]).unwrap();
        let mu = vec![0.0; sys.n_pairs()];
        let r = solve_limit_coulomb(&sys, &mu, None, 1e-8, 20, &SolverOptions::default()).unwrap();
        assert_eq!(r.history.len(), 1);
        let nok = TwoScaleSystem::new(
            MacroMesh::structured(BoxDomain::unit(2), 0.5, &left()).unwrap(),
            &cell,
            &Stiffness::isotropic(1.0, 1.0),
            0.0,
            10.0,
            |_| [0.0; 3],
        )
        .unwrap();
        assert!(solve_limit_coulomb(&nok, &mu, None, 1e-8, 20, &SolverOptions::default()).is_err());
    }
}
