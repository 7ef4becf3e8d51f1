//! Command-line driver: one subcommand per study, TOML in, CSV/VTK out.
//!
//! Outputs go to `<out>/<command>/`; sweeps write one directory per run.
//! Every CSV row starts with the config hash. Exit codes: 0 success,
//! 2 configuration error, 3 solver non-convergence, 4 identity failure,
//! 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::contact::{
    coulomb_iterate, friction_values, solve_given_friction, verify_kkt, ContactSolution, ContactSystem,
    KappaStudy, kappa_limit_study,
};
use crate::error::{Error, Result};
use crate::geometry::{build_reference_cell, tile_domain, CrackedMesh, ReferenceCell};
use crate::io::{num, write_cracked_mesh, write_macro_mesh, write_matrix_market, Field, Report};
use crate::spaces::{
    jump_constant, korn_constant, strain_trace_constant, trace_constant, FracQuadrature, KornVariant,
};
use crate::twoscale::{
    convergence_against, limit_solution, manufactured_study, solve_limit_coulomb,
    solve_limit_given_friction, two_scale_korn_constant, MacroMesh, StudySetup, TwoScaleSystem,
};
use crate::unfolding::{verify_exact, verify_scaling};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PERIOCRACK_OUT";

#[derive(Debug, Parser)]
#[command(name = "periocrack", version, about = "Two-scale contact and friction on periodically cracked domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; falls back to $PERIOCRACK_OUT, then `periocrack-out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides `solver.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exact unfolding and fractional scaling identities.
    VerifyUnfolding,
    /// Korn, jump, trace and two-scale constants.
    KornReport,
    /// Given-friction contact problem at `solver.epsilon`.
    SolveContact,
    /// Coulomb fixed point at `solver.epsilon`.
    Coulomb,
    /// Unfolded limit problem.
    TwoScale,
    /// Unfolded errors of `ε`-solutions against the limit.
    Convergence,
    /// `κ → 0` sweep per `ε`.
    KappaStudy,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyUnfolding => "verify-unfolding",
            Command::KornReport => "korn-report",
            Command::SolveContact => "solve-contact",
            Command::Coulomb => "coulomb",
            Command::TwoScale => "two-scale",
            Command::Convergence => "convergence",
            Command::KappaStudy => "kappa-study",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::NoConvergence { .. } | Error::Divergence(_) => 3,
        Error::IdentityFailure(_) => 4,
        _ => 1,
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}: outputs in {}", cli.command.name(), dir.display());
            0
        }
        Err(e) => {
            eprintln!("{}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

fn output_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("periocrack-out"))
}

/// Loads the config, applies the flags and runs; returns the output directory.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.solver.seed = s;
    }
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be positive".into()));
    }
    let dir = output_root(cli).join(cli.command.name());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start the worker pool: {e}")))?;
    pool.install(|| run(cli.command, &cfg, &dir))?;
    Ok(dir)
}

/// Runs one command into `dir`.
pub fn run(command: Command, cfg: &RunConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    match command {
        Command::VerifyUnfolding => run_verify_unfolding(cfg, dir),
        Command::KornReport => run_korn_report(cfg, dir),
        Command::SolveContact => run_solve_contact(cfg, dir),
        Command::Coulomb => run_coulomb(cfg, dir),
        Command::TwoScale => run_two_scale(cfg, dir),
        Command::Convergence => run_convergence(cfg, dir),
        Command::KappaStudy => run_kappa_study(cfg, dir),
    }
}

fn reference_cell(cfg: &RunConfig) -> Result<ReferenceCell> {
    build_reference_cell(cfg.cell_spec())
}

fn tile(cfg: &RunConfig, cell: &ReferenceCell, eps: f64) -> Result<CrackedMesh> {
    tile_domain(cfg.domain(), &cfg.gamma()?, cell, eps)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn run_verify_unfolding(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let s = &cfg.solver;
    let q = FracQuadrature::for_dim(cell.dim());
    let exact: Vec<_> = s
        .epsilons
        .par_iter()
        .map(|&eps| verify_exact(&cell, &tile(cfg, &cell, eps)?, s.fields, s.seed))
        .collect::<Result<_>>()?;
    let scaling: Vec<_> = s
        .scaling_epsilons
        .par_iter()
        .map(|&eps| verify_scaling(&cell, &tile(cfg, &cell, eps)?, &s.alphas, s.fields, s.seed, &q))
        .collect::<Result<_>>()?;
    let mut r = Report::create(
        &dir.join("identities.csv"),
        &cfg.hash(),
        &["kind", "identity", "epsilon", "alpha", "lhs", "rhs", "rel_err", "pass"],
    )?;
    let mut failed = Vec::new();
    for (kind, tol, checks) in exact
        .iter()
        .map(|c| ("exact", s.exact_tol, c))
        .chain(scaling.iter().map(|c| ("scaling", s.scaling_tol, c)))
    {
        for c in checks {
            let pass = c.passes(tol);
            if !pass {
                failed.push(format!("{} at ε = {}", c.identity, c.epsilon));
            }
            r.row([
                kind.to_string(),
                c.identity.clone(),
                num(c.epsilon),
                opt_num(c.alpha),
                num(c.lhs),
                num(c.rhs),
                num(c.rel_err),
                pass.to_string(),
            ])?;
        }
    }
    r.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::IdentityFailure(failed.join("; ")))
    }
}

fn run_korn_report(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let q = FracQuadrature::for_dim(cell.dim());
    let per_eps: Vec<(f64, f64, f64)> = cfg
        .solver
        .epsilons
        .par_iter()
        .map(|&eps| {
            let mesh = tile(cfg, &cell, eps)?;
            let w = korn_constant(&mesh, KornVariant::Wirtinger)?.constant;
            let g = korn_constant(&mesh, KornVariant::Dirichlet)?.constant;
            Ok((eps, w, g))
        })
        .collect::<Result<_>>()?;
    let mut r = Report::create(&dir.join("korn.csv"), &cfg.hash(), &["region", "epsilon", "alpha", "value"])?;
    r.row(["cell_korn".to_string(), num(1.0), String::new(), num(korn_constant(&cell.mesh, KornVariant::Wirtinger)?.constant)])?;
    r.row(["cell_jump".to_string(), num(1.0), num(0.5), num(jump_constant(&cell, &q)?.constant)])?;
    r.row([
        "cell_strain_trace".to_string(),
        num(1.0),
        num(0.5),
        num(strain_trace_constant(&cell, cfg.discretization.eta, &q)?.constant),
    ])?;
    r.row(["cell_boundary_trace".to_string(), num(1.0), num(0.5), num(trace_constant(&cell, &q)?.constant)])?;
    r.row(["two_scale".to_string(), num(1.0), String::new(), num(two_scale_korn_constant(&cell)?.constant)])?;
    for (eps, w, g) in per_eps {
        r.row(["domain_rigid".to_string(), num(eps), String::new(), num(w)])?;
        r.row(["domain_gamma".to_string(), num(eps), String::new(), num(g)])?;
    }
    r.finish()
}

/// Pair values spread onto both nodes of each pair, zero elsewhere.
fn pair_field(sys: &ContactSystem, n_nodes: usize, v: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n_nodes];
    for i in 0..sys.n_pairs() {
        out[sys.jumps.outer[i]] = v(i);
        out[sys.jumps.inner[i]] = v(i);
    }
    out
}

fn write_contact_vtk(path: &Path, mesh: &CrackedMesh, sys: &ContactSystem, sol: &ContactSolution) -> Result<()> {
    let n = mesh.n_nodes();
    let d = mesh.dim;
    let lambda_n = pair_field(sys, n, |i| sol.lambda_n[i]);
    let sigma_n = pair_field(sys, n, |i| -sol.lambda_n[i]);
    let lambda_t = pair_field(sys, n, |i| (sol.tau[i][0].powi(2) + sol.tau[i][1].powi(2)).sqrt());
    let gap = pair_field(sys, n, |i| sol.gap[i]);
    let slip = pair_field(sys, n, |i| (sol.slip[i][0].powi(2) + sol.slip[i][1].powi(2)).sqrt());
    let mut jump = vec![0.0; n * d];
    for i in 0..sys.n_pairs() {
        let j = sys.jumps.jump_vector(&sol.u, i);
        for node in [sys.jumps.outer[i], sys.jumps.inner[i]] {
            jump[node * d..node * d + d].copy_from_slice(&j[..d]);
        }
    }
    let f = |name, comps, values| Field { name, comps, values };
    write_cracked_mesh(
        path,
        mesh,
        &[
            f("u", d, &sol.u),
            f("lambda_n", 1, &lambda_n),
            f("lambda_t", 1, &lambda_t),
            f("sigma_n", 1, &sigma_n),
            f("jump", d, &jump),
            f("jump_n", 1, &gap),
            f("jump_t", 1, &slip),
        ],
        &[],
    )
}

fn write_log(dir: &Path, hash: &str, sol: &ContactSolution) -> Result<()> {
    let mut r = Report::create(
        &dir.join("active_set.csv"),
        hash,
        &["iteration", "n_contact", "n_stick", "changes", "energy"],
    )?;
    for (k, l) in sol.log.iter().enumerate() {
        r.row([
            k.to_string(),
            l.n_contact.to_string(),
            l.n_stick.to_string(),
            l.changes.to_string(),
            num(l.energy),
        ])?;
    }
    r.finish()
}

fn contact_system(cfg: &RunConfig, cell: &ReferenceCell, mesh: &CrackedMesh) -> Result<ContactSystem> {
    ContactSystem::new(
        cell,
        mesh,
        &cfg.stiffness(),
        cfg.solver.kappa,
        cfg.discretization.eta,
        cfg.load_fn(),
    )
}

fn run_solve_contact(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let mesh = tile(cfg, &cell, cfg.solver.epsilon)?;
    let sys = contact_system(cfg, &cell, &mesh)?;
    let g = friction_values(&sys, |_| cfg.physics.friction)?;
    let sol = solve_given_friction(&sys, &g, &cfg.solver_options(), None)?;
    let kkt = verify_kkt(&sys, &sol, &g);
    let hash = cfg.hash();
    write_log(dir, &hash, &sol)?;
    let mut r = Report::create(&dir.join("summary.csv"), &hash, &["quantity", "value"])?;
    for (k, v) in [
        ("epsilon", sys.epsilon),
        ("kappa", sys.kappa),
        ("dofs", sys.n_dofs() as f64),
        ("pairs", sys.n_pairs() as f64),
        ("energy", sol.energy),
        ("iterations", sol.iterations() as f64),
        ("kkt_max", kkt.max()),
    ] {
        r.row([k.to_string(), num(v)])?;
    }
    r.finish()?;
    if cfg.output.vtk {
        write_contact_vtk(&dir.join("solution.vtk"), &mesh, &sys, &sol)?;
    }
    if cfg.output.matrix_market {
        write_matrix_market(&dir.join("stiffness.mtx"), &sys.stiffness)?;
    }
    Ok(())
}

fn run_coulomb(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let mesh = tile(cfg, &cell, cfg.solver.epsilon)?;
    let sys = contact_system(cfg, &cell, &mesh)?;
    let mu = friction_values(&sys, |_| cfg.physics.mu)?;
    let s = &cfg.solver;
    let res = coulomb_iterate(&sys, &mu, s.coulomb_tol, s.coulomb_max_iter, &cfg.solver_options())?;
    let hash = cfg.hash();
    let mut r = Report::create(&dir.join("history.csv"), &hash, &["iteration", "friction_change"])?;
    for (k, h) in res.history.iter().enumerate() {
        r.row([k.to_string(), num(*h)])?;
    }
    r.finish()?;
    let mut r = Report::create(&dir.join("summary.csv"), &hash, &["quantity", "value"])?;
    for (k, v) in [
        ("epsilon", sys.epsilon),
        ("kappa", sys.kappa),
        ("mu", cfg.physics.mu),
        ("outer_iterations", res.history.len() as f64),
        ("contraction", res.contraction),
        ("energy", res.solution.energy),
    ] {
        r.row([k.to_string(), num(v)])?;
    }
    r.finish()?;
    write_log(dir, &hash, &res.solution)?;
    if cfg.output.vtk {
        write_contact_vtk(&dir.join("solution.vtk"), &mesh, &sys, &res.solution)?;
    }
    Ok(())
}

fn run_two_scale(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let d = cell.dim();
    let mm = MacroMesh::structured(cfg.domain(), cfg.discretization.macro_h, &cfg.gamma()?)?;
    let sys = TwoScaleSystem::new(
        mm,
        &cell,
        &cfg.stiffness(),
        cfg.solver.kappa,
        cfg.discretization.eta,
        cfg.load_fn(),
    )?;
    let opts = cfg.solver_options();
    let coulomb = cfg.physics.mu > 0.0 && sys.kappa > 0.0;
    let (sol, history) = if coulomb {
        let mu = sys.friction_values(|_, _| cfg.physics.mu)?;
        let r = solve_limit_coulomb(&sys, &mu, None, cfg.solver.coulomb_tol, cfg.solver.coulomb_max_iter, &opts)?;
        (r.solution, r.history)
    } else {
        let g = sys.friction_values(|_, _| cfg.physics.friction)?;
        (solve_limit_given_friction(&sys, &g, &opts)?, Vec::new())
    };
    let hash = cfg.hash();
    let mut r = Report::create(&dir.join("summary.csv"), &hash, &["quantity", "value"])?;
    for (k, v) in [
        ("coulomb", if coulomb { 1.0 } else { 0.0 }),
        ("kappa", sys.kappa),
        ("macro_nodes", sys.layout.n_macro as f64),
        ("micro_nodes", sys.layout.n_micro as f64),
        ("dofs", sys.n_dofs() as f64),
        ("energy", sol.energy),
        ("iterations", sol.log.len() as f64),
        ("outer_iterations", history.len() as f64),
    ] {
        r.row([k.to_string(), num(v)])?;
    }
    r.finish()?;
    let mut r = Report::create(&dir.join("history.csv"), &hash, &["iteration", "friction_change"])?;
    for (k, h) in history.iter().enumerate() {
        r.row([k.to_string(), num(*h)])?;
    }
    r.finish()?;
    if cfg.output.vtk {
        let np = sys.n_cell_pairs();
        let nm = sys.layout.n_macro;
        let mut contact = vec![0.0; nm];
        let mut pressure = vec![0.0; nm];
        for a in 0..nm {
            for i in 0..np {
                let w = sys.micro.jumps.weights[i];
                contact[a] += w * sol.gap[a * np + i].abs();
                pressure[a] += w * sol.sigma_n[a * np + i];
            }
        }
        write_macro_mesh(
            &dir.join("macro.vtk"),
            &sys.macro_mesh,
            &[
                Field { name: "u", comps: d, values: &sol.u },
                Field { name: "mean_abs_gap", comps: 1, values: &contact },
                Field { name: "mean_sigma_n", comps: 1, values: &pressure },
            ],
        )?;
    }
    if cfg.output.micro_vtk {
        for a in 0..sys.layout.n_macro {
            let w = sys.micro.unfold_vector(sol.corrector(a, sys.micro.n_nodes));
            write_cracked_mesh(
                &dir.join("micro").join(format!("node_{a:05}.vtk")),
                &cell.mesh,
                &[Field { name: "corrector", comps: d, values: &w }],
                &[],
            )?;
        }
    }
    if cfg.output.matrix_market {
        write_matrix_market(&dir.join("stiffness.mtx"), &sys.stiffness)?;
    }
    Ok(())
}

fn study_setup(cfg: &RunConfig) -> Result<StudySetup> {
    Ok(StudySetup {
        domain: cfg.domain(),
        gamma: cfg.gamma()?,
        stiffness: cfg.stiffness(),
        eta: cfg.discretization.eta,
        macro_h: cfg.discretization.macro_h,
        omega_scale: cfg.physics.omega_scale,
        opts: cfg.solver_options(),
    })
}

fn run_convergence(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let setup = study_setup(cfg)?;
    let g = cfg.physics.friction;
    let f = cfg.load_fn();
    let (sys, sol) = limit_solution(&cell, &setup, f, |_, _| g)?;
    let eps = &cfg.solver.epsilons;
    let rep = convergence_against(&cell, &setup, &sys, &sol, f, |_, _| g, eps)?;
    let omega = setup.domain.scaled(setup.omega_scale);
    let (man, man_orders) = manufactured_study(&cell, &sys, &sol, &setup.gamma, &omega, eps)?;
    let mut r = Report::create(
        &dir.join("errors.csv"),
        &cfg.hash(),
        &[
            "epsilon",
            "strain_error",
            "sigma_error",
            "jump_error",
            "reference_norm",
            "strain_order",
            "manufactured_error",
            "manufactured_order",
        ],
    )?;
    for (k, e) in rep.errors.iter().enumerate() {
        let order = |o: &[f64]| if k == 0 { String::new() } else { num(o[k - 1]) };
        r.row([
            num(rep.epsilons[k]),
            num(e.strain),
            num(e.sigma),
            num(e.jump),
            num(e.reference),
            order(&rep.strain_orders),
            num(man[k]),
            order(&man_orders),
        ])?;
    }
    r.finish()?;
    if cfg.output.vtk {
        write_macro_mesh(
            &dir.join("macro.vtk"),
            &sys.macro_mesh,
            &[Field { name: "u", comps: cell.dim(), values: &sol.u }],
        )?;
    }
    Ok(())
}

fn run_kappa_study(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let cell = reference_cell(cfg)?;
    let hash = cfg.hash();
    let runs: Vec<(f64, KappaStudy)> = cfg
        .solver
        .epsilons
        .par_iter()
        .enumerate()
        .map(|(k, &eps)| {
            let mesh = tile(cfg, &cell, eps)?;
            let sys = contact_system(cfg, &cell, &mesh)?;
            let g = friction_values(&sys, |_| cfg.physics.friction)?;
            let st = kappa_limit_study(&cell, &mesh, &sys, &g, &cfg.solver.kappas, &cfg.solver_options())?;
            let mut r = Report::create(
                &dir.join(format!("run_{k:02}")).join("kappa.csv"),
                &hash,
                &["epsilon", "kappa", "h1_difference", "reference_norm"],
            )?;
            for (kap, diff) in st.kappas.iter().zip(&st.differences) {
                r.row([num(eps), num(*kap), num(*diff), num(st.reference_norm)])?;
            }
            r.finish()?;
            Ok((eps, st))
        })
        .collect::<Result<_>>()?;
    let mut r = Report::create(
        &dir.join("summary.csv"),
        &hash,
        &["epsilon", "strictly_decreasing", "final_over_initial"],
    )?;
    for (eps, st) in &runs {
        let ratio = st.differences.last().copied().unwrap_or(0.0) / st.differences.first().copied().unwrap_or(1.0);
        r.row([num(*eps), st.strictly_decreasing().to_string(), num(ratio)])?;
    }
    r.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.discretization.divisions = 4;
        c.discretization.macro_h = 0.5;
        c.solver.epsilon = 0.5;
        c.solver.epsilons = vec![0.5, 0.25];
        c.solver.scaling_epsilons = vec![0.5];
        c.solver.fields = 2;
        c.solver.kappas = vec![1e-1, 1e-2];
        c
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NoConvergence { iterations: 1, detail: String::new() }), 3);
        assert_eq!(exit_code(&Error::IdentityFailure("x".into())), 4);
    }

    #[test]
    fn coulomb_with_zero_mu_has_one_history_row() {
        let mut c = small();
        c.physics.mu = 0.0;
        let dir = tempfile::tempdir().unwrap();
        run(Command::Coulomb, &c, dir.path()).unwrap();
        let h = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(h.lines().count(), 2);
        assert!(h.lines().nth(1).unwrap().starts_with(&c.hash()));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let c = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(Command::SolveContact, &c, a.path()).unwrap();
        run(Command::SolveContact, &c, b.path()).unwrap();
        for f in ["summary.csv", "active_set.csv", "solution.vtk"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn large_epsilon_exits_with_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "[solver]\nepsilon = 5.0\n").unwrap();
        let code = main_with_args([
            "periocrack",
            "solve-contact",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }
}
