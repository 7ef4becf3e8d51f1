use periocrack::cli::{main_with_args, run, Command};
use periocrack::config::RunConfig;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn configs_roundtrip_through_toml(eps in 0.01f64..1.0, kappa in 0.0f64..10.0, mu in 0.0f64..1.0, seed: u64) {
        let mut c = RunConfig::default();
        c.solver.epsilon = eps;
        c.solver.kappa = kappa;
        c.physics.mu = mu;
        c.solver.seed = seed;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected(key in "[a-z]{3,10}") {
        prop_assume!(!["dim", "gamma", "crack"].contains(&key.as_str()));
        let text = format!("[geometry]\n{key}_extra = 1\n");
        prop_assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn negative_parameters_are_rejected(v in -10.0f64..-1e-9, which in 0usize..3) {
        let mut c = RunConfig::default();
        match which {
            0 => c.solver.epsilon = v,
            1 => c.solver.kappa = v,
            _ => c.physics.mu = v,
        }
        prop_assert!(RunConfig::from_toml(&c.to_toml()).is_err());
    }
}

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.discretization.divisions = 4;
    c.solver.epsilon = 0.5;
    c.solver.epsilons = vec![0.5, 0.25];
    c.solver.scaling_epsilons = vec![0.5];
    c.solver.fields = 2;
    c
}

#[test]
fn identity_reports_are_byte_identical_across_runs() {
    let c = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(Command::VerifyUnfolding, &c, a.path()).unwrap();
    run(Command::VerifyUnfolding, &c, b.path()).unwrap();
    let mut n = 0;
    for e in std::fs::read_dir(a.path()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            let name = p.file_name().unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.path().join(name)).unwrap());
            n += 1;
        }
    }
    assert!(n > 0);
}

#[test]
fn coulomb_reruns_through_the_binary_interface() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, small().to_toml()).unwrap();
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let code = main_with_args([
            "periocrack",
            "coulomb",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "1",
        ]);
        assert_eq!(code, 0);
        outs.push(std::fs::read(out.join("coulomb").join("history.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[physics]\nmu = -1.0\n").unwrap();
    let code = main_with_args(["periocrack", "coulomb", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
}
