//! Given-friction contact on the cracks and the Coulomb fixed point.
//!
//! The discrete problem minimizes
//! `J(u) = ½uᵀ(A + κε²B)u − fᵀu + Σ_i w_i G_i |[u_τ]_i|` subject to
//! `[u_ν]_i ≤ 0` at every duplicated crack node `i`, with lumped weights
//! `w_i`. Unknowns are changed to `(u_outer, [u])` at crack node pairs, the
//! jump expressed in the local frame `(ν, τ₁, τ₂)`, so active constraints
//! become fixed coordinates and each active-set step is one Cholesky solve
//! on a fixed sparsity pattern.
//!
//! Multipliers: `λ_i ≥ 0` is the contact pressure, `σ_ν = −λ`; the friction
//! multiplier `τ_i` satisfies `|τ_i| ≤ G_i`, `τ_i · [u_τ]_i = G_i |[u_τ]_i|`,
//! and the tangential stress is `σ_τ = −τ`.

use crate::assembly::{
    assemble_elasticity, assemble_grad_gram, assemble_load, assemble_mass,
    assemble_regularization, assemble_strain_gram, element_affine, CrackJumps, Stiffness,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CrackedMesh, Point, ReferenceCell};
use std::sync::OnceLock;

use faer::Mat;

use crate::linalg::{dot, max_abs, Cholesky, CholeskyPattern, Csr, DenseCholesky, Triplets};
use crate::quadrature::simplex_rule;
use crate::spaces::{CrackNorm, FracQuadrature};

/// Regularized elasticity with crack jump maps on one tiled mesh.
pub struct ContactSystem {
    pub dim: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub elastic: Csr,
    pub reg: Csr,
    /// Stiffness `A + κε²B`, load and crack pairs.
    pub problem: PairedProblem,
    /// `∫ e(u) : e(v)`.
    pub strain: Csr,
    /// `H¹(Ω*_ε)` Gram.
    pub h1: Csr,
    /// `‖f‖_{L²(Ω)}`.
    pub f_norm: f64,
    /// Physical positions of the duplicated crack nodes.
    pub positions: Vec<Point>,
    /// Number of mesh crack nodes (tips included).
    pub n_crack_nodes: usize,
    /// `H^{1/2}(S_ε)` norm on crack traces.
    pub crack_norm: CrackNorm,
}

impl std::ops::Deref for ContactSystem {
    type Target = PairedProblem;

    fn deref(&self) -> &PairedProblem {
        &self.problem
    }
}

/// Change of variables `u = T z`; `z` holds free non-crack dofs, the outer
/// displacement and the framed jump at each crack node pair.
struct Reduction {
    t: Csr,
    /// `z` index of frame component `m` of the jump at pair `i`.
    jump: Vec<[usize; 3]>,
    kz: Csr,
    pattern: CholeskyPattern,
    n_z: usize,
}

impl Reduction {
    fn new(mesh_dofs: usize, dim: usize, fixed: &[bool], jumps: &CrackJumps, k: &Csr) -> Result<Self> {
        let d = dim;
        let n_nodes = mesh_dofs / d;
        let mut pair_of_inner = vec![usize::MAX; n_nodes];
        let mut pair_of_outer = vec![usize::MAX; n_nodes];
        for i in 0..jumps.len() {
            pair_of_inner[jumps.inner[i]] = i;
            pair_of_outer[jumps.outer[i]] = i;
        }
        let mut t = Triplets::with_capacity(mesh_dofs * 2);
        let mut nz = 0;
        let mut jump = vec![[usize::MAX; 3]; jumps.len()];
        for n in 0..n_nodes {
            if pair_of_inner[n] != usize::MAX {
                continue;
            }
            let p = pair_of_outer[n];
            for c in 0..d {
                if fixed[n * d + c] {
                    continue;
                }
                t.push(n * d + c, nz, 1.0);
                if p != usize::MAX {
                    t.push(jumps.inner[p] * d + c, nz, 1.0);
                }
                nz += 1;
            }
            if p != usize::MAX {
                let nu = jumps.normals[p];
                let tg = jumps.tangents[p];
                let frame = [nu, tg[0], tg[1]];
                for (m, e) in frame.iter().enumerate().take(d) {
                    for c in 0..d {
                        if e[c] != 0.0 {
                            t.push(jumps.inner[p] * d + c, nz, e[c]);
                        }
                    }
                    jump[p][m] = nz;
                    nz += 1;
                }
            }
        }
        for i in 0..jumps.len() {
            for c in 0..d {
                if fixed[jumps.inner[i] * d + c] || fixed[jumps.outer[i] * d + c] {
                    return Err(Error::Topology("crack node on the Dirichlet boundary".into()));
                }
            }
        }
        let t = t.into_csr(mesh_dofs, nz);
        let tt = t.transpose();
        let kz = tt.matmul(&k.matmul(&t));
        let pattern = CholeskyPattern::new(&kz)?;
        Ok(Self {
            t,
            jump,
            kz,
            pattern,
            n_z: nz,
        })
    }

    fn to_u(&self, z: &[f64]) -> Vec<f64> {
        self.t.matvec(z)
    }

    fn to_z_dual(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_z];
        for r in 0..self.t.nrows {
            let (ix, v) = self.t.row(r);
            for (&c, &x) in ix.iter().zip(v) {
                out[c] += x * f[r];
            }
        }
        out
    }

    /// `K_z` with rows and columns of `fixed` coordinates replaced by identity.
    fn constrained(&self, fixed: &[bool]) -> Csr {
        let mut m = self.kz.clone();
        for r in 0..m.nrows {
            for k in m.indptr[r]..m.indptr[r + 1] {
                let c = m.indices[k];
                if fixed[r] || fixed[c] {
                    m.values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
        m
    }
}

/// Quadratic energy `½uᵀKu − fᵀu` with friction and non-penetration at crack
/// node pairs; what the active-set solver works on.
pub struct PairedProblem {
    pub dim: usize,
    pub stiffness: Csr,
    pub load: Vec<f64>,
    pub jumps: CrackJumps,
    red: Reduction,
    dual: OnceLock<Delassus>,
}

impl PairedProblem {
    /// `fixed` marks homogeneous Dirichlet dofs; no pair may touch them.
    pub fn new(dim: usize, stiffness: Csr, load: Vec<f64>, jumps: CrackJumps, fixed: &[bool]) -> Result<Self> {
        let n = stiffness.nrows;
        if stiffness.ncols != n || load.len() != n || fixed.len() != n || n % dim != 0 {
            return Err(invalid("stiffness, load and Dirichlet mask sizes differ"));
        }
        let red = Reduction::new(n, dim, fixed, &jumps, &stiffness)?;
        Ok(Self {
            dim,
            stiffness,
            load,
            jumps,
            red,
            dual: OnceLock::new(),
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.stiffness.nrows
    }

    pub fn n_pairs(&self) -> usize {
        self.jumps.len()
    }

    /// Dofs removed by the Dirichlet condition.
    pub fn fixed_dofs(&self) -> Vec<bool> {
        (0..self.red.t.nrows).map(|r| self.red.t.row(r).0.is_empty()).collect()
    }

    /// `J(u)` for friction bound `g` per crack pair.
    pub fn energy(&self, u: &[f64], g: &[f64]) -> f64 {
        let mut j = 0.5 * self.stiffness.quad(u) - dot(&self.load, u);
        let t = self.jumps.tangential(u);
        for i in 0..self.n_pairs() {
            j += self.jumps.weights[i] * g[i] * tnorm(&t[i], self.dim);
        }
        j
    }

    /// Delassus operator, assembled on first use.
    fn delassus(&self) -> Result<&Delassus> {
        if let Some(d) = self.dual.get() {
            return Ok(d);
        }
        let d = Delassus::new(self)?;
        Ok(self.dual.get_or_init(|| d))
    }

    fn energy_z(&self, z: &[f64], fz: &[f64], g: &[f64]) -> f64 {
        let mut j = 0.5 * self.red.kz.quad(z) - dot(fz, z);
        for i in 0..self.n_pairs() {
            let mut s = 0.0;
            for m in 1..self.dim {
                let x = z[self.red.jump[i][m]];
                s += x * x;
            }
            j += self.jumps.weights[i] * g[i] * s.sqrt();
        }
        j
    }
}

impl ContactSystem {
    /// Assembles all operators. `f` is the volume force on `Ω`.
    pub fn new<F>(
        cell: &ReferenceCell,
        mesh: &CrackedMesh,
        stiffness: &Stiffness,
        kappa: f64,
        eta: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&Point) -> [f64; 3],
    {
        if !(kappa >= 0.0) {
            return Err(invalid(format!("κ = {kappa} must be non-negative")));
        }
        let elastic = assemble_elasticity(mesh, stiffness);
        let reg = assemble_regularization(mesh, eta, &[]);
        let load = assemble_load(mesh, &f);
        let f_norm = l2_norm_of(mesh, &f);
        let jumps = CrackJumps::new(mesh);
        let positions = jumps.outer.iter().map(|&n| mesh.coords[n]).collect();
        let crack_norm = CrackNorm::for_mesh(cell, mesh.epsilon, 0.5, &FracQuadrature::for_dim(mesh.dim))?;
        let h1 = assemble_mass(mesh).add_scaled(&assemble_grad_gram(mesh), 1.0);
        let strain = assemble_strain_gram(mesh);
        let fixed = mesh.dirichlet_dofs();
        let k = elastic.add_scaled(&reg, kappa * mesh.epsilon * mesh.epsilon);
        let problem = PairedProblem::new(mesh.dim, k, load, jumps, &fixed)?;
        Ok(Self {
            dim: mesh.dim,
            epsilon: mesh.epsilon,
            kappa,
            elastic,
            reg,
            problem,
            strain,
            h1,
            f_norm,
            positions,
            n_crack_nodes: mesh.crack_nodes.len(),
            crack_norm,
        })
    }

    /// Same operators with another `κ`.
    pub fn with_kappa(&self, cell: &ReferenceCell, mesh: &CrackedMesh, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(invalid(format!("κ = {kappa} must be non-negative")));
        }
        let k = self.elastic.add_scaled(&self.reg, kappa * self.epsilon * self.epsilon);
        let problem = PairedProblem::new(
            self.dim,
            k,
            self.load.clone(),
            self.jumps.clone(),
            &mesh.dirichlet_dofs(),
        )?;
        Ok(Self {
            dim: self.dim,
            epsilon: self.epsilon,
            kappa,
            elastic: self.elastic.clone(),
            reg: self.reg.clone(),
            problem,
            strain: self.strain.clone(),
            h1: self.h1.clone(),
            f_norm: self.f_norm,
            positions: self.positions.clone(),
            n_crack_nodes: self.n_crack_nodes,
            crack_norm: CrackNorm::for_mesh(cell, self.epsilon, 0.5, &FracQuadrature::for_dim(self.dim))?,
        })
    }

    /// Multiplies the load by `t`.
    pub fn scale_load(&mut self, t: f64) {
        self.problem.load.iter_mut().for_each(|v| *v *= t);
        self.f_norm *= t.abs();
    }

    /// `𝐍_ε(u) = (‖e(u)‖² + ε² [∇e(u), ∇e(u)])^{1/2}` with the discrete
    /// strain-gradient form.
    pub fn n_eps(&self, u: &[f64]) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        (self.strain.quad(u) + e2 * self.reg.quad(u)).max(0.0).sqrt()
    }

    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        self.h1.quad(u).max(0.0).sqrt()
    }

    /// Expands per-pair values to all crack nodes (zero at tips).
    pub fn to_crack_nodes(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_crack_nodes];
        for (i, &t) in self.jumps.nodes.iter().enumerate() {
            out[t] = v[i];
        }
        out
    }

    /// `‖v‖_{L²(S_ε)}` of a per-pair scalar.
    pub fn crack_l2(&self, v: &[f64]) -> f64 {
        self.crack_norm.scalar().l2(&self.to_crack_nodes(v))
    }

    /// `‖v‖_{H^{1/2}(S_ε)}` of a per-pair scalar.
    pub fn crack_h12(&self, v: &[f64]) -> f64 {
        self.crack_norm.scalar().norm(&self.to_crack_nodes(v))
    }

    /// `‖[u]‖_{H^{1/2}(S_ε)}`.
    pub fn jump_h12(&self, u: &[f64]) -> f64 {
        let d = self.dim;
        let mut tr = vec![0.0; self.n_crack_nodes * d];
        for i in 0..self.n_pairs() {
            let j = self.jumps.jump_vector(u, i);
            let t = self.jumps.nodes[i];
            tr[t * d..t * d + d].copy_from_slice(&j[..d]);
        }
        self.crack_norm.norm(&tr)
    }

    /// Per-pair values of a scalar function at the crack nodes.
    pub fn crack_values<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.positions.iter().map(f).collect()
    }
}

fn tnorm(t: &[f64; 2], d: usize) -> f64 {
    if d == 2 {
        t[0].abs()
    } else {
        (t[0] * t[0] + t[1] * t[1]).sqrt()
    }
}

/// `‖f‖_{L²(Ω)}` by element quadrature.
fn l2_norm_of<F: Fn(&Point) -> [f64; 3]>(mesh: &CrackedMesh, f: &F) -> f64 {
    let d = mesh.dim;
    let rule = simplex_rule(d, 3);
    let fact = if d == 2 { 2.0 } else { 6.0 };
    let mut s = 0.0;
    for e in 0..mesh.elems.len() {
        let aff = element_affine(mesh, e);
        for (b, w) in rule.bary.iter().zip(&rule.weights) {
            let v = f(&aff.point(b));
            s += w * fact * aff.volume * (0..d).map(|k| v[k] * v[k]).sum::<f64>();
        }
    }
    s.sqrt()
}

/// Algorithm for the given-friction problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Dual method up to [`DUAL_LIMIT`] multipliers, active sets beyond.
    Auto,
    /// Primal-dual active sets on the displacement.
    ActiveSet,
    /// Projected Newton on the crack forces with the Delassus operator.
    Dual,
}

/// Multiplier count up to which [`Method::Auto`] picks the dual method; the
/// dense Delassus operator has this many rows.
pub const DUAL_LIMIT: usize = 4096;

/// Given-friction solver controls.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Complementarity parameter; `None` picks a stiffness-to-weight ratio.
    pub c: Option<f64>,
    /// Relative hysteresis on active-set switches.
    pub switch_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            max_iter: 100,
            c: None,
            switch_tol: 1e-10,
        }
    }
}

/// Active-set state at the crack pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSets {
    /// Contact active: `[u_ν] = 0`.
    pub contact: Vec<bool>,
    /// Sticking: `[u_τ] = 0`.
    pub stick: Vec<bool>,
    /// Friction multiplier on slipping pairs.
    pub slip_force: Vec<[f64; 2]>,
}

/// One active-set step.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub n_contact: usize,
    pub n_stick: usize,
    pub changes: usize,
    /// Energy of the monotone feasible sequence.
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub u: Vec<f64>,
    /// Contact pressure per pair, `σ_ν = −λ_ν`.
    pub lambda_n: Vec<f64>,
    /// Friction multiplier per pair in the tangent frame.
    pub tau: Vec<[f64; 2]>,
    /// `[u_ν]` and `[u_τ]` per pair.
    pub gap: Vec<f64>,
    pub slip: Vec<[f64; 2]>,
    pub energy: f64,
    pub sets: ActiveSets,
    pub log: Vec<IterationLog>,
    /// Friction bound the solution was computed for.
    pub g: Vec<f64>,
}

impl ContactSolution {
    /// `σ_ν` per pair.
    pub fn sigma_n(&self) -> Vec<f64> {
        self.lambda_n.iter().map(|l| -l).collect()
    }

    /// `σ_τ` per pair in the tangent frame.
    pub fn sigma_t(&self) -> Vec<[f64; 2]> {
        self.tau.iter().map(|t| [-t[0], -t[1]]).collect()
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

/// Minimizes `J` for the friction bound `g` (one value per crack pair).
/// `warm` seeds the active sets of the primal-dual method.
pub fn solve_given_friction(
    sys: &PairedProblem,
    g: &[f64],
    opts: &SolverOptions,
    warm: Option<&ActiveSets>,
) -> Result<ContactSolution> {
    let np = sys.n_pairs();
    if g.len() != np {
        return Err(invalid(format!("friction bound has {} values, expected {np}", g.len())));
    }
    if let Some(v) = g.iter().find(|v| !(**v >= 0.0)) {
        return Err(invalid(format!("friction bound {v} must be non-negative")));
    }
    let dual = match opts.method {
        Method::Auto => np * sys.dim <= DUAL_LIMIT,
        Method::ActiveSet => false,
        Method::Dual => true,
    };
    if dual {
        // one primal step on the identified sets recovers forces to the
        // accuracy of the sparse factorization, not of the Delassus solve
        let sol = solve_dual(sys, g, opts)?;
        let once = SolverOptions {
            max_iter: 1,
            ..*opts
        };
        match solve_active_set(sys, g, &once, Some(&sol.sets)) {
            Ok(mut p) => {
                let mut log = sol.log;
                log.append(&mut p.log);
                p.log = log;
                Ok(p)
            }
            Err(_) => Ok(sol),
        }
    } else {
        solve_active_set(sys, g, opts, warm)
    }
}

fn solve_active_set(
    sys: &PairedProblem,
    g: &[f64],
    opts: &SolverOptions,
    warm: Option<&ActiveSets>,
) -> Result<ContactSolution> {
    let np = sys.n_pairs();
    let d = sys.dim;
    let red = &sys.red;
    let nz = red.n_z;
    let fz = red.to_z_dual(&sys.load);
    let w = &sys.jumps.weights;
    let mut c = opts.c.unwrap_or_else(|| {
        let diag = red.kz.diag();
        let s: f64 = (0..np).map(|i| diag[red.jump[i][0]] / w[i]).sum();
        if np > 0 {
            s / np as f64
        } else {
            1.0
        }
    });
    let mut sets = match warm {
        Some(s) if s.contact.len() == np => s.clone(),
        _ => ActiveSets {
            contact: vec![false; np],
            stick: g.iter().map(|&x| x > 0.0).collect(),
            slip_force: vec![[0.0; 2]; np],
        },
    };
    let mut feasible = vec![0.0; nz];
    let mut feasible_energy = 0.0;
    let mut log = Vec::new();
    let mut seen: Vec<(Vec<bool>, Vec<bool>)> = Vec::new();
    for _ in 0..opts.max_iter {
        // fixed coordinates and slip loads
        let mut fixed = vec![false; nz];
        let mut rhs = fz.clone();
        for i in 0..np {
            if sets.contact[i] {
                fixed[red.jump[i][0]] = true;
            }
            for m in 1..d {
                let k = red.jump[i][m];
                if sets.stick[i] {
                    fixed[k] = true;
                } else {
                    rhs[k] -= w[i] * sets.slip_force[i][m - 1];
                }
            }
        }
        for (k, r) in rhs.iter_mut().enumerate() {
            if fixed[k] {
                *r = 0.0;
            }
        }
        let chol = red.pattern.factor(&red.constrained(&fixed))?;

        let mut z = chol.solve(&rhs);
        // one step of iterative refinement
        let kc = red.constrained(&fixed);
        let res: Vec<f64> = rhs.iter().zip(kc.matvec(&z)).map(|(a, b)| a - b).collect();
        let dz = chol.solve(&res);
        z.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        // reactions from the unconstrained operator
        let kzz = red.kz.matvec(&z);
        let r: Vec<f64> = fz.iter().zip(&kzz).map(|(a, b)| a - b).collect();
        let mut lam = vec![0.0; np];
        let mut tau = vec![[0.0; 2]; np];
        for i in 0..np {
            if sets.contact[i] {
                lam[i] = r[red.jump[i][0]] / w[i];
            }
            for m in 1..d {
                tau[i][m - 1] = if sets.stick[i] {
                    r[red.jump[i][m]] / w[i]
                } else {
                    sets.slip_force[i][m - 1]
                };
            }
        }

        // monotone feasible sequence: backtrack towards the projected iterate
        let project = |v: &mut Vec<f64>| {
            for i in 0..np {
                let k = red.jump[i][0];
                v[k] = v[k].min(0.0);
            }
        };
        let mut step = 1.0;
        while step > 1.0 / 64.0 {
            let mut trial: Vec<f64> = feasible
                .iter()
                .zip(&z)
                .map(|(a, b)| a + step * (b - a))
                .collect();
            project(&mut trial);
            let e = sys.energy_z(&trial, &fz, g);
            if e <= feasible_energy {
                feasible = trial;
                feasible_energy = e;
                break;
            }
            step *= 0.5;
        }

        // active-set update
        let gap: Vec<f64> = (0..np).map(|i| z[red.jump[i][0]]).collect();
        let lam_scale = max_abs(&lam).max(c * max_abs(&z)).max(f64::MIN_POSITIVE);
        let delta = opts.switch_tol * lam_scale;
        let mut next = sets.clone();
        let mut changes = 0;
        for i in 0..np {
            let q = lam[i] + c * gap[i];
            let on = if sets.contact[i] { q > -delta } else { q > delta };
            if on != sets.contact[i] {
                changes += 1;
            }
            next.contact[i] = on;
            let mut zt = [0.0; 2];
            for m in 1..d {
                zt[m - 1] = tau[i][m - 1] + c * z[red.jump[i][m]];
            }
            let zn = tnorm(&zt, d);
            let bound = g[i];
            let stick = bound > 0.0
                && if sets.stick[i] {
                    zn <= bound + delta
                } else {
                    zn < bound - delta
                };
            if stick != sets.stick[i] {
                changes += 1;
            }
            next.stick[i] = stick;
            if !stick {
                let new = if zn > 0.0 {
                    [bound * zt[0] / zn, bound * zt[1] / zn]
                } else {
                    [0.0; 2]
                };
                let moved = (0..d - 1)
                    .map(|m| (new[m] - sets.slip_force[i][m]).abs())
                    .fold(0.0, f64::max);
                if !sets.stick[i] && moved > 1e-12 * bound.max(f64::MIN_POSITIVE) {
                    changes += 1;
                }
                next.slip_force[i] = new;
            } else {
                next.slip_force[i] = [0.0; 2];
            }
        }
        log.push(IterationLog {
            n_contact: sets.contact.iter().filter(|&&b| b).count(),
            n_stick: sets.stick.iter().filter(|&&b| b).count(),
            changes,
            energy: feasible_energy,
        });
        if changes == 0 {
            let u = red.to_u(&z);
            let energy = sys.energy_z(&z, &fz, g);
            if let Some(last) = log.last_mut() {
                last.energy = feasible_energy.min(energy);
            }
            let slip: Vec<[f64; 2]> = (0..np)
                .map(|i| {
                    let mut s = [0.0; 2];
                    for m in 1..d {
                        s[m - 1] = z[red.jump[i][m]];
                    }
                    s
                })
                .collect();
            return Ok(ContactSolution {
                u,
                lambda_n: lam,
                tau,
                gap,
                slip,
                energy,
                sets,
                log,
                g: g.to_vec(),
            });
        }
        // revisited contact and stick flags mean cycling: soften the
        // switching parameter
        let flags = (next.contact.clone(), next.stick.clone());
        if seen.contains(&flags) {
            c *= 0.1;
            seen.clear();
        }
        seen.push((sets.contact.clone(), sets.stick.clone()));
        sets = next;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        detail: format!(
            "active sets still changing ({} switches in the last step)",
            log.last().map(|l| l.changes).unwrap_or(0)
        ),
    })
}

/// `S = B K⁻¹ Bᵀ` on the framed jump coordinates, row `i d + m` for frame
/// component `m` of pair `i`, and the unconstrained jumps `b = B K⁻¹ f`.
struct Delassus {
    chol: Cholesky,
    s: Mat<f64>,
    b: Vec<f64>,
}

impl Delassus {
    fn new(sys: &PairedProblem) -> Result<Self> {
        let red = &sys.red;
        let d = sys.dim;
        let m = sys.n_pairs() * d;
        let chol = red.pattern.factor(&red.kz)?;
        let n = red.n_z;
        let idx: Vec<usize> = (0..m).map(|k| red.jump[k / d][k % d]).collect();
        let mut s = Mat::<f64>::zeros(m, m);
        const BATCH: usize = 64;
        let mut buf = Vec::new();
        for start in (0..m).step_by(BATCH) {
            let cols = BATCH.min(m - start);
            buf.clear();
            buf.resize(n * cols, 0.0);
            for c in 0..cols {
                buf[c * n + idx[start + c]] = 1.0;
            }
            chol.solve_many(&mut buf, cols);
            for c in 0..cols {
                for (r, &k) in idx.iter().enumerate() {
                    s[(r, start + c)] = buf[c * n + k];
                }
            }
        }
        for r in 0..m {
            for c in 0..r {
                let v = 0.5 * (s[(r, c)] + s[(c, r)]);
                s[(r, c)] = v;
                s[(c, r)] = v;
            }
        }
        let z0 = chol.solve(&red.to_z_dual(&sys.load));
        let b = idx.iter().map(|&k| z0[k]).collect();
        Ok(Self { chol, s, b })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let mut y = vec![0.0; m];
        for c in 0..m {
            let xc = x[c];
            if xc != 0.0 {
                let col = self.s.col(c);
                for r in 0..m {
                    y[r] += col[r] * xc;
                }
            }
        }
        y
    }
}

/// Feasible set of the crack forces: `x_ν ≥ 0`, `|x_τ| ≤ r` per pair.
struct ForceSet<'a> {
    d: usize,
    radius: &'a [f64],
}

impl ForceSet<'_> {
    fn project(&self, x: &mut [f64]) {
        let d = self.d;
        for (i, &r) in self.radius.iter().enumerate() {
            let p = &mut x[i * d..(i + 1) * d];
            p[0] = p[0].max(0.0);
            let t = p[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if t > r {
                let f = if t > 0.0 { r / t } else { 0.0 };
                p[1..].iter_mut().for_each(|v| *v *= f);
            }
        }
    }

    /// Components held fixed: at the bound with the gradient pushing out.
    fn binding(&self, x: &[f64], grad: &[f64]) -> Vec<bool> {
        let d = self.d;
        let mut out = vec![false; x.len()];
        for (i, &r) in self.radius.iter().enumerate() {
            let k = i * d;
            out[k] = x[k] <= 0.0 && grad[k] >= 0.0;
            if r <= 0.0 {
                out[k + 1..k + d].iter_mut().for_each(|b| *b = true);
                continue;
            }
            if d == 2 {
                out[k + 1] = (x[k + 1] >= r && grad[k + 1] <= 0.0) || (x[k + 1] <= -r && grad[k + 1] >= 0.0);
            } else {
                let t2: f64 = x[k + 1..k + d].iter().map(|v| v * v).sum();
                let push: f64 = (1..d).map(|m| x[k + m] * grad[k + m]).sum();
                let on = t2 >= r * r * (1.0 - 1e-14) && push <= 0.0;
                out[k + 1..k + d].iter_mut().for_each(|b| *b = on);
            }
        }
        out
    }

    /// [`Self::binding`] with bounds widened by `tol`.
    fn binding_near(&self, x: &[f64], grad: &[f64], tol: f64) -> Vec<bool> {
        let d = self.d;
        let mut out = vec![false; x.len()];
        for (i, &r) in self.radius.iter().enumerate() {
            let k = i * d;
            out[k] = x[k] <= tol && grad[k] > 0.0 || x[k] <= 0.0 && grad[k] >= 0.0;
            if r <= 0.0 {
                out[k + 1..k + d].iter_mut().for_each(|b| *b = true);
                continue;
            }
            if d == 2 {
                let t = x[k + 1];
                let gt = grad[k + 1];
                out[k + 1] = (t >= r - tol && gt < 0.0) || (t <= -r + tol && gt > 0.0) || (t.abs() >= r && gt * t <= 0.0);
            } else {
                let tn = tnorm_slice(&x[k + 1..k + d]);
                let push: f64 = (1..d).map(|m| x[k + m] * grad[k + m]).sum();
                let on = tn >= r - tol && push < 0.0;
                out[k + 1..k + d].iter_mut().for_each(|b| *b = on);
            }
        }
        out
    }

    /// Largest `α ≤ 1` keeping `x + α p` feasible.
    fn max_step(&self, x: &[f64], p: &[f64]) -> f64 {
        let d = self.d;
        let mut a: f64 = 1.0;
        for (i, &r) in self.radius.iter().enumerate() {
            let k = i * d;
            if p[k] < 0.0 {
                a = a.min(-x[k] / p[k]);
            }
            // |t + α q|² = r², positive root
            let (mut tq, mut qq, mut tt) = (0.0, 0.0, 0.0);
            for m in 1..d {
                tq += x[k + m] * p[k + m];
                qq += p[k + m] * p[k + m];
                tt += x[k + m] * x[k + m];
            }
            if qq > 0.0 {
                let disc = (tq * tq + qq * (r * r - tt)).max(0.0);
                a = a.min(((-tq + disc.sqrt()) / qq).max(0.0));
            }
        }
        a.max(0.0)
    }
}

/// Projected Newton method on the dual problem
/// `min ½xᵀSx − bᵀx` over `x_ν ≥ 0`, `|x_τ| ≤ w g`, where `x` are the crack
/// forces `w λ`, `w τ` and the gradient `Sx − b` is minus the jump.
/// Gradient projection steps pick the face, exact solves on the free
/// components finish it.
fn solve_dual(sys: &PairedProblem, g: &[f64], opts: &SolverOptions) -> Result<ContactSolution> {
    let np = sys.n_pairs();
    let d = sys.dim;
    let m = np * d;
    let red = &sys.red;
    let w = &sys.jumps.weights;
    let fz = red.to_z_dual(&sys.load);
    let radius: Vec<f64> = (0..np).map(|i| w[i] * g[i]).collect();
    let set = ForceSet { d, radius: &radius };
    let del = sys.delassus()?;
    let b = &del.b;
    let objective = |x: &[f64], sx: &[f64]| 0.5 * dot(x, sx) - dot(b, x);
    // objective change and its linear part for a step `x → t`, free of the
    // cancellation in differencing two objective values
    let change = |x: &[f64], grad: &[f64], t: &[f64]| {
        let dx: Vec<f64> = t.iter().zip(x).map(|(a, c)| a - c).collect();
        let lin = dot(grad, &dx);
        (lin + 0.5 * dot(&dx, &del.apply(&dx)), lin)
    };
    let mut x = vec![0.0; m];
    let mut sx = vec![0.0; m];
    let mut log = Vec::new();
    let mut converged = m == 0;
    let mut prev_binding: Vec<bool> = Vec::new();
    let mut stalled = false;
    for _ in 0..opts.max_iter {
        if converged {
            break;
        }
        let grad: Vec<f64> = sx.iter().zip(b).map(|(a, c)| a - c).collect();
        let mut y: Vec<f64> = x.iter().zip(&grad).map(|(a, c)| a - c).collect();
        set.project(&mut y);
        let pg = x.iter().zip(&y).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        let scale = max_abs(b).max(max_abs(&sx)).max(f64::MIN_POSITIVE);
        if pg <= 1e-12 * scale || (stalled && pg <= 1e-9 * scale) {
            converged = true;
            break;
        }
        let x_start = x.clone();

        // gradient projection until the binding set settles
        let mut best_drop: f64 = 0.0;
        let mut binding = set.binding(&x, &grad);
        for _ in 0..25 {
            let grad: Vec<f64> = sx.iter().zip(b).map(|(a, c)| a - c).collect();
            let free_g: Vec<f64> = grad
                .iter()
                .zip(&set.binding(&x, &grad))
                .map(|(v, &f)| if f { 0.0 } else { *v })
                .collect();
            let sg = del.apply(&free_g);
            let curv = dot(&free_g, &sg);
            if !(curv > 0.0) {
                break;
            }
            let mut alpha = dot(&free_g, &free_g) / curv;
            let mut accepted = None;
            for _ in 0..40 {
                let mut t: Vec<f64> = x.iter().zip(&grad).map(|(a, c)| a - alpha * c).collect();
                set.project(&mut t);
                let (dq, lin) = change(&x, &grad, &t);
                if dq <= 1e-2 * lin {
                    accepted = Some((t, dq));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((t, dq)) = accepted else { break };
            sx = del.apply(&t);
            x = t;
            let grad: Vec<f64> = sx.iter().zip(b).map(|(a, c)| a - c).collect();
            let nb = set.binding(&x, &grad);
            let settled = nb == binding;
            binding = nb;
            if settled || -dq <= 0.25 * best_drop {
                break;
            }
            best_drop = best_drop.max(-dq);
        }

        // exact minimization over the free components of the face
        let grad: Vec<f64> = sx.iter().zip(b).map(|(a, c)| a - c).collect();
        let fixed = set.binding_near(&x, &grad, pg);
        let free: Vec<usize> = (0..m).filter(|&k| !fixed[k]).collect();
        if !free.is_empty() {
            let nf = free.len();
            let mut sff = Mat::<f64>::zeros(nf, nf);
            for (c, &kc) in free.iter().enumerate() {
                let col = del.s.col(kc);
                for (r, &kr) in free.iter().enumerate() {
                    sff[(r, c)] = col[kr];
                }
            }
            // residual form: S_FF δ = −grad_F
            let rhs: Vec<f64> = free.iter().map(|&k| -grad[k]).collect();
            let delta = DenseCholesky::factor(&sff)?.solve(&rhs);
            let mut p = vec![0.0; m];
            for (r, &k) in free.iter().enumerate() {
                p[k] = delta[r];
            }
            // Armijo search along the projection arc, with the first bound
            // hit as an extra candidate
            let mut best: Option<(Vec<f64>, f64)> = None;
            let a = set.max_step(&x, &p);
            if a > 0.0 {
                let mut t: Vec<f64> = x.iter().zip(&p).map(|(u, v)| u + a * v).collect();
                set.project(&mut t);
                let (dq, _) = change(&x, &grad, &t);
                best = Some((t, dq));
            }
            let mut alpha = 1.0;
            for _ in 0..30 {
                let mut t: Vec<f64> = x.iter().zip(&p).map(|(u, v)| u + alpha * v).collect();
                set.project(&mut t);
                let (dq, lin) = change(&x, &grad, &t);
                if dq <= 1e-4 * lin {
                    if best.as_ref().map_or(true, |b| dq < b.1) {
                        best = Some((t, dq));
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if let Some((t, dq)) = best {
                if dq <= 0.0 {
                    sx = del.apply(&t);
                    x = t;
                }
            }
        }
        let changes = if prev_binding.is_empty() {
            fixed.iter().filter(|&&f| f).count()
        } else {
            fixed.iter().zip(&prev_binding).filter(|(a, c)| a != c).count()
        };
        prev_binding = fixed;
        // no representable descent left: the round-off floor
        let dx = x.iter().zip(&x_start).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        stalled = dx <= 1e-12 * max_abs(&x);
        log.push(IterationLog {
            n_contact: (0..np).filter(|&i| x[i * d] > 0.0).count(),
            n_stick: (0..np).filter(|&i| g[i] > 0.0 && tnorm_slice(&x[i * d + 1..i * d + d]) < radius[i]).count(),
            changes,
            energy: objective(&x, &sx),
        });
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            detail: "dual projected gradient above 1e-12 of the force scale".into(),
        });
    }

    // displacement from the forces
    let mut rhs = fz.clone();
    for k in 0..m {
        rhs[red.jump[k / d][k % d]] -= x[k];
    }
    let mut z = del.chol.solve(&rhs);
    for _ in 0..2 {
        let kz = red.kz.matvec(&z);
        let res: Vec<f64> = rhs.iter().zip(&kz).map(|(a, b)| a - b).collect();
        let dz = del.chol.solve(&res);
        z.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
    }
    let mut lam = vec![0.0; np];
    let mut tau = vec![[0.0; 2]; np];
    let mut gap = vec![0.0; np];
    let mut slip = vec![[0.0; 2]; np];
    let mut sets = ActiveSets {
        contact: vec![false; np],
        stick: vec![false; np],
        slip_force: vec![[0.0; 2]; np],
    };
    for i in 0..np {
        lam[i] = x[i * d] / w[i];
        gap[i] = z[red.jump[i][0]];
        for mm in 1..d {
            tau[i][mm - 1] = x[i * d + mm] / w[i];
            slip[i][mm - 1] = z[red.jump[i][mm]];
        }
        sets.contact[i] = x[i * d] > 0.0;
        sets.stick[i] = g[i] > 0.0 && tnorm_slice(&x[i * d + 1..i * d + d]) < radius[i];
        if !sets.stick[i] {
            sets.slip_force[i] = tau[i];
        }
    }
    let u = red.to_u(&z);
    let energy = sys.energy_z(&z, &fz, g);
    Ok(ContactSolution {
        u,
        lambda_n: lam,
        tau,
        gap,
        slip,
        energy,
        sets,
        log,
        g: g.to_vec(),
    })
}

fn tnorm_slice(t: &[f64]) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maximal residuals of the strong contact conditions, normalized by the
/// force, displacement and stress scales of the solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktReport {
    /// Stationarity on all coordinates, including jump-free test fields.
    pub momentum: f64,
    /// `max([u_ν], 0)`.
    pub penetration: f64,
    /// `max(σ_ν, 0)`.
    pub sign: f64,
    /// `|σ_ν [u_ν]|`.
    pub complementarity: f64,
    /// `[σ_ν]` across the crack from nodal reactions.
    pub stress_jump: f64,
    /// `max(|σ_τ| − G, 0)`.
    pub friction_bound: f64,
    /// `G|[u_τ]| + σ_τ · [u_τ]`, zero when slip opposes the stress.
    pub slip_direction: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.momentum,
            self.penetration,
            self.sign,
            self.complementarity,
            self.stress_jump,
            self.friction_bound,
            self.slip_direction,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Residuals of `(u, λ_ν, τ)` against the strong conditions for friction
/// bound `g`.
pub fn verify_kkt(sys: &PairedProblem, sol: &ContactSolution, g: &[f64]) -> KktReport {
    let d = sys.dim;
    let np = sys.n_pairs();
    let w = &sys.jumps.weights;
    let u = &sol.u;
    // u-space residual with the multiplier forces
    let mut r: Vec<f64> = sys
        .load
        .iter()
        .zip(sys.stiffness.matvec(u))
        .map(|(a, b)| a - b)
        .collect();
    // backward error: rounding in Ku scales with Σ_j |K_ij u_j|, not with f
    let k = &sys.stiffness;
    let internal = (0..k.nrows)
        .map(|i| {
            let (ix, v) = k.row(i);
            ix.iter().zip(v).map(|(&j, a)| (a * u[j]).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    let force_scale = max_abs(&sys.load).max(internal).max(f64::MIN_POSITIVE);
    let mut stress_jump: f64 = 0.0;
    for i in 0..np {
        let nu = sys.jumps.normals[i];
        let tg = sys.jumps.tangents[i];
        let (a, b) = (sys.jumps.inner[i], sys.jumps.outer[i]);
        let mut sum_n = 0.0;
        for c in 0..d {
            sum_n += nu[c] * (r[a * d + c] + r[b * d + c]);
        }
        stress_jump = stress_jump.max(sum_n.abs() / w[i]);
        for c in 0..d {
            let mut f = sol.lambda_n[i] * nu[c];
            for m in 1..d {
                f += sol.tau[i][m - 1] * tg[m - 1][c];
            }
            r[a * d + c] -= w[i] * f;
            r[b * d + c] += w[i] * f;
        }
    }
    let fixed_mask = sys.fixed_dofs();
    let momentum = r
        .iter()
        .zip(&fixed_mask)
        .filter(|(_, &f)| !f)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max)
        / force_scale;
    let u_scale = max_abs(u).max(f64::MIN_POSITIVE);
    let s_scale = max_abs(&sol.lambda_n)
        .max(max_abs(g))
        .max(sol.tau.iter().map(|t| tnorm(t, d)).fold(0.0, f64::max))
        .max(f64::MIN_POSITIVE);
    let gap = sys.jumps.normal(u);
    let slip = sys.jumps.tangential(u);
    let mut rep = KktReport {
        momentum,
        stress_jump: stress_jump / s_scale,
        ..Default::default()
    };
    for i in 0..np {
        rep.penetration = rep.penetration.max(gap[i].max(0.0) / u_scale);
        rep.sign = rep.sign.max((-sol.lambda_n[i]).max(0.0) / s_scale);
        rep.complementarity = rep
            .complementarity
            .max((sol.lambda_n[i] * gap[i]).abs() / (s_scale * u_scale));
        rep.friction_bound = rep
            .friction_bound
            .max((tnorm(&sol.tau[i], d) - g[i]).max(0.0) / s_scale);
        let tdot = sol.tau[i][0] * slip[i][0] + sol.tau[i][1] * slip[i][1];
        let dir = g[i] * tnorm(&slip[i], d) - tdot;
        rep.slip_direction = rep.slip_direction.max(dir.abs() / (s_scale * u_scale));
    }
    rep
}

/// Per-pair friction coefficient from a function, checked non-negative.
pub fn friction_values<F: Fn(&Point) -> f64>(sys: &ContactSystem, mu: F) -> Result<Vec<f64>> {
    let v = sys.crack_values(mu);
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0)) {
        return Err(invalid(format!("friction coefficient {x} must be non-negative")));
    }
    Ok(v)
}

/// Outcome of the Coulomb fixed point.
#[derive(Debug, Clone)]
pub struct CoulombResult {
    pub g: Vec<f64>,
    pub solution: ContactSolution,
    /// `‖G_{k+1} − G_k‖_{L²(S_ε)}` per outer iteration.
    pub history: Vec<f64>,
    /// `max_k ‖G_{k+1} − G_k‖ / ‖G_k − G_{k−1}‖`, zero with fewer than two
    /// steps.
    pub contraction: f64,
    pub converged: bool,
}

/// Banach iteration `G_{k+1} = μ|σ_ν(u_{G_k})|` from `G₀ = 0`, stopped when
/// `‖G_{k+1} − G_k‖ ≤ tol ‖G₁‖`.
pub fn coulomb_iterate(
    sys: &ContactSystem,
    mu: &[f64],
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
) -> Result<CoulombResult> {
    coulomb_fixed_point(sys, mu, None, tol, max_iter, opts, |v| sys.crack_l2(v))
}

/// The Coulomb iteration from `g0` (zero by default) with the friction change
/// measured by `norm`.
pub fn coulomb_fixed_point<N: Fn(&[f64]) -> f64>(
    sys: &PairedProblem,
    mu: &[f64],
    g0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    opts: &SolverOptions,
    norm: N,
) -> Result<CoulombResult> {
    let np = sys.n_pairs();
    if mu.len() != np {
        return Err(invalid("friction coefficient length differs from the crack pairs"));
    }
    if mu.iter().any(|m| !(*m >= 0.0)) {
        return Err(invalid("friction coefficient must be non-negative"));
    }
    let mut g = match g0 {
        Some(v) if v.len() == np && v.iter().all(|x| *x >= 0.0) => v.to_vec(),
        Some(_) => return Err(invalid("initial friction bound must be non-negative, one value per pair")),
        None => vec![0.0; np],
    };
    let mut history: Vec<f64> = Vec::new();
    let mut warm: Option<ActiveSets> = None;
    let mut first = 0.0;
    let mut contraction: f64 = 0.0;
    let mut growing = 0;
    for k in 0..max_iter {
        let sol = solve_given_friction(sys, &g, opts, warm.as_ref())?;
        let next: Vec<f64> = (0..np).map(|i| mu[i] * sol.lambda_n[i].max(0.0)).collect();
        let diff: Vec<f64> = next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step = norm(&diff);
        if k == 0 {
            first = step;
        }
        // steps within the inner solver accuracy carry no contraction signal
        let resolved = step > 1e-10 * norm(&next);
        if let Some(&prev) = history.last() {
            if prev > 0.0 && resolved {
                let rho = step / prev;
                contraction = contraction.max(rho);
                if rho >= 1.0 {
                    growing += 1;
                } else {
                    growing = 0;
                }
            }
        }
        history.push(step);
        warm = Some(sol.sets.clone());
        if step <= tol * first {
            // the last solve used `g`; report it with the solution
            return Ok(CoulombResult {
                g,
                solution: sol,
                history,
                contraction,
                converged: true,
            });
        }
        if growing >= 3 {
            return Err(Error::Divergence(format!(
                "friction change grew for 3 consecutive iterations (ρ̂ = {contraction:.3}); \
                 the contraction condition C₀C₁‖a‖‖μ‖/min(ᾱ, κ) < 1 is violated"
            )));
        }
        g = next;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        detail: format!(
            "friction change {:.3e} above {:.3e}",
            history.last().copied().unwrap_or(0.0),
            tol * first
        ),
    })
}

/// Continuity of `G ↦ σ_ν(u_G)`.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzReport {
    /// `‖σ_ν(u_{G₁}) − σ_ν(u_{G₂})‖_{H^{1/2}(S_ε)} / ‖G₁ − G₂‖_{L²(S_ε)}`.
    pub sigma_ratio: f64,
    /// `𝐍_ε(u_{G₁} − u_{G₂}) / (√ε ‖G₁ − G₂‖_{L²(S_ε)})`.
    pub n_ratio: f64,
}

pub fn lipschitz_probe(
    sys: &ContactSystem,
    g1: &[f64],
    g2: &[f64],
    opts: &SolverOptions,
) -> Result<LipschitzReport> {
    let dg: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| a - b).collect();
    let den = sys.crack_l2(&dg);
    if !(den > 0.0) {
        return Err(invalid("the two friction bounds coincide"));
    }
    let s1 = solve_given_friction(sys, g1, opts, None)?;
    let s2 = solve_given_friction(sys, g2, opts, Some(&s1.sets))?;
    let ds: Vec<f64> = s1.lambda_n.iter().zip(&s2.lambda_n).map(|(a, b)| b - a).collect();
    let du: Vec<f64> = s1.u.iter().zip(&s2.u).map(|(a, b)| a - b).collect();
    Ok(LipschitzReport {
        sigma_ratio: sys.crack_h12(&ds) / den,
        n_ratio: sys.n_eps(&du) / (sys.epsilon.sqrt() * den),
    })
}

/// The four a-priori ratios; `None` when `f = 0`.
#[derive(Debug, Clone, Copy)]
pub struct APrioriReport {
    /// `√κ ε ‖∇e(u)‖ / ‖f‖`.
    pub strain_gradient: Option<f64>,
    /// `‖u‖_{H¹} / ‖f‖`.
    pub h1: Option<f64>,
    /// `‖[u]‖_{H^{1/2}(S_ε)} / (√ε ‖f‖)`.
    pub jump: Option<f64>,
    /// `√ε ‖σ_ν‖_{H^{1/2}(S_ε)} / ‖f‖`.
    pub sigma: Option<f64>,
}

pub fn a_priori_check(sys: &ContactSystem, sol: &ContactSolution) -> APrioriReport {
    let f = sys.f_norm;
    if !(f > 0.0) {
        return APrioriReport {
            strain_gradient: None,
            h1: None,
            jump: None,
            sigma: None,
        };
    }
    let se = sys.epsilon.sqrt();
    APrioriReport {
        strain_gradient: Some(sys.kappa.sqrt() * sys.epsilon * sys.reg.quad(&sol.u).max(0.0).sqrt() / f),
        h1: Some(sys.h1_norm(&sol.u) / f),
        jump: Some(sys.jump_h12(&sol.u) / (se * f)),
        sigma: Some(se * sys.crack_h12(&sol.sigma_n()) / f),
    }
}

/// `‖u_{ε,G,κ} − U_{ε,G}‖_{H¹}` for each `κ`, `U` solving the unregularized
/// problem.
#[derive(Debug, Clone)]
pub struct KappaStudy {
    pub kappas: Vec<f64>,
    pub differences: Vec<f64>,
    /// `‖U_{ε,G}‖_{H¹}`.
    pub reference_norm: f64,
}

impl KappaStudy {
    pub fn strictly_decreasing(&self) -> bool {
        self.differences.windows(2).all(|w| w[1] < w[0])
    }
}

pub fn kappa_limit_study(
    cell: &ReferenceCell,
    mesh: &CrackedMesh,
    sys: &ContactSystem,
    g: &[f64],
    kappas: &[f64],
    opts: &SolverOptions,
) -> Result<KappaStudy> {
    let base = sys.with_kappa(cell, mesh, 0.0)?;
    let r = solve_given_friction(&base, g, opts, None)?;
    let mut differences = Vec::with_capacity(kappas.len());
    for &k in kappas {
        if !(k > 0.0) {
            return Err(invalid(format!("κ = {k} must be positive in the sweep")));
        }
        let s = sys.with_kappa(cell, mesh, k)?;
        let sol = solve_given_friction(&s, g, opts, Some(&r.sets))?;
        let du: Vec<f64> = sol.u.iter().zip(&r.u).map(|(a, b)| a - b).collect();
        differences.push(base.h1_norm(&du));
    }
    Ok(KappaStudy {
        kappas: kappas.to_vec(),
        differences,
        reference_norm: base.h1_norm(&r.u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_reference_cell, tile_domain, BoxDomain, CellSpec, CrackShape, Face};

    fn flat_setup(eps: f64) -> (ReferenceCell, CrackedMesh) {
        let cell = build_reference_cell(CellSpec::new(2, CrackShape::Flat { half_length: 0.25 }, 8)).unwrap();
        let mesh = tile_domain(BoxDomain::unit(2), &[Face { axis: 0, upper: false }], &cell, eps).unwrap();
        (cell, mesh)
    }

    fn system(f: [f64; 3], eps: f64) -> (ReferenceCell, CrackedMesh, ContactSystem) {
        let (cell, mesh) = flat_setup(eps);
        let sys = ContactSystem::new(&cell, &mesh, &Stiffness::isotropic(1.0, 1.0), 1.0, 10.0, move |_| f).unwrap();
        (cell, mesh, sys)
    }

    #[test]
    fn zero_load_gives_zero() {
        let (_, _, sys) = system([0.0; 3], 0.5);
        let g = vec![1.0; sys.n_pairs()];
        let s = solve_given_friction(&sys, &g, &SolverOptions::default(), None).unwrap();
        assert!(max_abs(&s.u) == 0.0);
        assert_eq!(s.energy, 0.0);
        assert_eq!(verify_kkt(&sys, &s, &g).max(), 0.0);
    }

    #[test]
    fn negative_bound_rejected() {
        let (_, _, sys) = system([0.0, -1.0, 0.0], 0.5);
        let mut g = vec![0.0; sys.n_pairs()];
        g[0] = -1.0;
        assert!(solve_given_friction(&sys, &g, &SolverOptions::default(), None).is_err());
    }

    #[test]
    fn signorini_compression_closes_the_crack() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.5);
        let g = vec![0.0; sys.n_pairs()];
        let s = solve_given_friction(&sys, &g, &SolverOptions::default(), None).unwrap();
        let kkt = verify_kkt(&sys, &s, &g);
        assert!(kkt.max() < 1e-8, "{kkt:?}");
        assert!(s.lambda_n.iter().any(|&l| l > 0.0));
        for w in s.log.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-14 * w[0].energy.abs());
        }
    }

    #[test]
    fn pulling_opens_the_crack() {
        let (_, _, sys) = system([1.0, 0.0, 0.0], 0.5);
        let g = vec![0.1; sys.n_pairs()];
        let s = solve_given_friction(&sys, &g, &SolverOptions::default(), None).unwrap();
        let kkt = verify_kkt(&sys, &s, &g);
        assert!(kkt.max() < 1e-8, "{kkt:?}");
    }

    #[test]
    fn coulomb_with_zero_mu_takes_one_step() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.5);
        let mu = vec![0.0; sys.n_pairs()];
        let r = coulomb_iterate(&sys, &mu, 1e-6, 20, &SolverOptions::default()).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.converged);
    }

    #[test]
    fn coulomb_converges_for_small_mu() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.5);
        let mu = vec![0.2; sys.n_pairs()];
        let r = coulomb_iterate(&sys, &mu, 1e-8, 50, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        let g: Vec<f64> = (0..sys.n_pairs()).map(|i| mu[i] * r.solution.lambda_n[i]).collect();
        let kkt = verify_kkt(&sys, &r.solution, &g);
        assert!(kkt.friction_bound < 1e-6, "{kkt:?}");
    }

    #[test]
    fn dual_and_active_set_methods_agree() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.5);
        let g = vec![0.1; sys.n_pairs()];
        let mut o = SolverOptions::default();
        o.method = Method::Dual;
        let a = solve_given_friction(&sys, &g, &o, None).unwrap();
        o.method = Method::ActiveSet;
        let b = solve_given_friction(&sys, &g, &o, None).unwrap();
        let du = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(du < 1e-9 * max_abs(&a.u), "{du}");
        assert!((a.energy - b.energy).abs() < 1e-10 * a.energy.abs());
    }

    #[test]
    fn dual_method_certifies_finer_tilings() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.25);
        let g = vec![0.1; sys.n_pairs()];
        let s = solve_given_friction(&sys, &g, &SolverOptions::default(), None).unwrap();
        let kkt = verify_kkt(&sys, &s, &g);
        assert!(kkt.max() < 1e-8, "{kkt:?}");
        assert!(s.sets.stick.iter().any(|&b| b) && s.sets.stick.iter().any(|&b| !b));
    }

    #[test]
    fn lipschitz_probe_rejects_equal_bounds() {
        let (_, _, sys) = system([-1.0, 0.3, 0.0], 0.5);
        let g = vec![0.1; sys.n_pairs()];
        assert!(lipschitz_probe(&sys, &g, &g, &SolverOptions::default()).is_err());
    }
}
