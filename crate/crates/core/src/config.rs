//! Run configuration read from TOML.
//!
//! Every table and key is optional; unknown keys are rejected. The config
//! hash is the SHA-256 of the canonical re-serialization together with the
//! seed, so formatting and comments do not change it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::Stiffness;
use crate::contact::SolverOptions;
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, CellSpec, CrackShape, Face, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub discretization: DiscretizationConfig,
    pub physics: PhysicsConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub dim: usize,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    /// Faces of `Γ` as `x0`, `x1`, `y0`, ….
    pub gamma: Vec<String>,
    pub crack: CrackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CrackConfig {
    Flat {
        half_length: f64,
    },
    Superellipse {
        radius: f64,
        #[serde(default = "two")]
        exponent: f64,
        fraction: f64,
    },
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    /// Reference cell divisions per edge, a multiple of 4.
    pub divisions: usize,
    /// Macro mesh size of the limit problem.
    pub macro_h: f64,
    /// Interior penalty parameter of the strain-gradient term.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TensorConfig {
    Isotropic {
        lambda: f64,
        mu: f64,
    },
    TwoPhase {
        matrix: [f64; 2],
        inclusion: [f64; 2],
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LoadConfig {
    Constant { value: Vec<f64> },
    /// `f(x) = value · sin(π x₁)`.
    Sine { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub tensor: TensorConfig,
    pub load: LoadConfig,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Given friction bound `G`.
    pub friction: f64,
    /// `Ω′` as a fraction of `Ω`.
    pub omega_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// Levels of sweeps and convergence studies.
    pub epsilons: Vec<f64>,
    /// Levels of the fractional scaling identities.
    pub scaling_epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub kappa: f64,
    pub kappas: Vec<f64>,
    pub max_iter: usize,
    pub coulomb_tol: f64,
    pub coulomb_max_iter: usize,
    /// Random fields per identity check.
    pub fields: usize,
    pub exact_tol: f64,
    pub scaling_tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub vtk: bool,
    /// Per-macro-node corrector meshes of the two-scale run.
    pub micro_vtk: bool,
    /// Stiffness matrices in MatrixMarket format.
    pub matrix_market: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            domain_lo: vec![0.0, 0.0],
            domain_hi: vec![1.0, 1.0],
            gamma: vec!["x0".into()],
            crack: CrackConfig::Flat { half_length: 0.25 },
        }
    }
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            divisions: 8,
            macro_h: 0.125,
            eta: 10.0,
        }
    }
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            tensor: TensorConfig::Isotropic { lambda: 1.0, mu: 1.0 },
            load: LoadConfig::Constant { value: vec![-1.0, 0.3] },
            mu: 0.2,
            friction: 0.1,
            omega_scale: 0.6,
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            epsilons: vec![0.5, 0.25, 0.125],
            scaling_epsilons: vec![0.5, 0.25],
            alphas: vec![0.25, 0.5, 0.75],
            kappa: 1.0,
            kappas: vec![1e-1, 1e-2, 1e-3],
            max_iter: 100,
            coulomb_tol: 1e-8,
            coulomb_max_iter: 100,
            fields: 20,
            exact_tol: 1e-12,
            scaling_tol: 1e-8,
            seed: 0,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            vtk: true,
            micro_vtk: false,
            matrix_market: false,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            discretization: DiscretizationConfig::default(),
            physics: PhysicsConfig::default(),
            solver: SolverConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg(format!("{name} = {v} must be positive")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg(format!("{name} = {v} must be non-negative")))
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| cfg(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical form; the first 16 digits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let d = g.dim;
        if !(2..=3).contains(&d) {
            return Err(cfg(format!("dim = {d} must be 2 or 3")));
        }
        if g.domain_lo.len() != d || g.domain_hi.len() != d {
            return Err(cfg("domain_lo and domain_hi need one entry per dimension"));
        }
        for k in 0..d {
            if !(g.domain_hi[k] > g.domain_lo[k]) {
                return Err(cfg(format!("domain is empty along axis {k}")));
            }
        }
        if g.gamma.is_empty() {
            return Err(cfg("gamma needs at least one face"));
        }
        for f in self.gamma()? {
            if f.axis >= d {
                return Err(cfg(format!("gamma face axis {} exceeds dim", f.axis)));
            }
        }
        match g.crack {
            CrackConfig::Flat { half_length } => {
                if !(half_length > 0.0 && half_length < 0.5) {
                    return Err(cfg(format!("half_length = {half_length} must lie in (0, 1/2)")));
                }
            }
            CrackConfig::Superellipse {
                radius,
                exponent,
                fraction,
            } => {
                if !(radius > 0.0 && radius < 0.5) {
                    return Err(cfg(format!("radius = {radius} must lie in (0, 1/2)")));
                }
                positive("exponent", exponent)?;
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(cfg(format!("fraction = {fraction} must lie in (0, 1]")));
                }
            }
        }
        let di = &self.discretization;
        if di.divisions == 0 || di.divisions % 4 != 0 {
            return Err(cfg(format!("divisions = {} must be a positive multiple of 4", di.divisions)));
        }
        positive("macro_h", di.macro_h)?;
        positive("eta", di.eta)?;
        let p = &self.physics;
        match &p.tensor {
            TensorConfig::Isotropic { .. } => {}
            TensorConfig::TwoPhase { width, .. } => non_negative("width", *width)?,
        }
        // ᾱ > 0
        self.stiffness()
            .bounds(d)
            .map_err(|e| cfg(format!("tensor is not coercive: {e}")))?;
        let v = match &p.load {
            LoadConfig::Constant { value } | LoadConfig::Sine { value } => value,
        };
        if v.len() != d || v.iter().any(|x| !x.is_finite()) {
            return Err(cfg("load value needs one finite entry per dimension"));
        }
        non_negative("mu", p.mu)?;
        non_negative("friction", p.friction)?;
        if !(p.omega_scale > 0.0 && p.omega_scale < 1.0) {
            return Err(cfg(format!("omega_scale = {} must lie in (0, 1)", p.omega_scale)));
        }
        let s = &self.solver;
        let diam = self.domain().diameter();
        for &e in std::iter::once(&s.epsilon).chain(&s.epsilons).chain(&s.scaling_epsilons) {
            positive("epsilon", e)?;
            if e > diam {
                return Err(cfg(format!("epsilon = {e} exceeds the domain diameter {diam:.4}")));
            }
        }
        for &a in &s.alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(cfg(format!("alpha = {a} must lie in (0, 1)")));
            }
        }
        non_negative("kappa", s.kappa)?;
        for &k in &s.kappas {
            positive("kappas entry", k)?;
        }
        if s.max_iter == 0 || s.coulomb_max_iter == 0 {
            return Err(cfg("iteration limits must be positive"));
        }
        positive("coulomb_tol", s.coulomb_tol)?;
        positive("exact_tol", s.exact_tol)?;
        positive("scaling_tol", s.scaling_tol)?;
        if s.fields == 0 {
            return Err(cfg("fields must be positive"));
        }
        Ok(())
    }

    pub fn domain(&self) -> BoxDomain {
        let g = &self.geometry;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        lo[..g.dim].copy_from_slice(&g.domain_lo[..g.dim]);
        hi[..g.dim].copy_from_slice(&g.domain_hi[..g.dim]);
        BoxDomain { dim: g.dim, lo, hi }
    }

    pub fn gamma(&self) -> Result<Vec<Face>> {
        self.geometry
            .gamma
            .iter()
            .map(|s| Face::parse(s).map_err(|e| cfg(e.to_string())))
            .collect()
    }

    pub fn shape(&self) -> CrackShape {
        match self.geometry.crack {
            CrackConfig::Flat { half_length } => CrackShape::Flat { half_length },
            CrackConfig::Superellipse {
                radius,
                exponent,
                fraction,
            } => CrackShape::Superellipse {
                radius,
                exponent,
                fraction,
            },
        }
    }

    pub fn cell_spec(&self) -> CellSpec {
        CellSpec::new(self.geometry.dim, self.shape(), self.discretization.divisions)
    }

    pub fn stiffness(&self) -> Stiffness {
        match &self.physics.tensor {
            TensorConfig::Isotropic { lambda, mu } => Stiffness::isotropic(*lambda, *mu),
            TensorConfig::TwoPhase {
                matrix,
                inclusion,
                width,
            } => Stiffness::TwoPhase {
                matrix: (matrix[0], matrix[1]),
                inclusion: (inclusion[0], inclusion[1]),
                width: *width,
                shape: self.shape(),
            },
        }
    }

    /// Volume force.
    pub fn load_fn(&self) -> impl Fn(&Point) -> [f64; 3] + Copy + Send + Sync {
        let (v, sine) = match &self.physics.load {
            LoadConfig::Constant { value } => (value, false),
            LoadConfig::Sine { value } => (value, true),
        };
        let mut f = [0.0; 3];
        f[..v.len()].copy_from_slice(v);
        move |x: &Point| {
            let s = if sine { (std::f64::consts::PI * x[0]).sin() } else { 1.0 };
            [f[0] * s, f[1] * s, f[2] * s]
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.solver.max_iter,
            ..SolverOptions::default()
        }
    }
}
