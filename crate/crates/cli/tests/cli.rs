use std::path::Path;
use std::process::{Command, Output};

use pmp_cli::csvio;
use pmp_core::lindblad::{solve, SampleConvention};
use pmp_core::problem::{make_preparation_problem, make_retention_problem, step_control};

fn pmp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmp")).args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn sidecar(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn propagate_writes_four_tables_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = pmp(&["propagate", "--problem", "retention", "--control", "step"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rho.csv", "lambda.csv", "phi.csv", "hc.csv", "run.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(header(&out.join("rho.csv")), "t,re_00,im_00,re_01,im_01,re_10,im_10,re_11,im_11");
    assert_eq!(header(&out.join("phi.csv")), "t,phi,u");
    assert_eq!(header(&out.join("hc.csv")), "t,hc");
    let s = sidecar(&out);
    assert_eq!(s["command"], "propagate");
    assert!(s["summary"]["cost"].as_f64().unwrap() < 0.0);
}

#[test]
fn csv_readers_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    assert_eq!(code(&pmp(&["propagate", "--problem", "preparation"], &out)), 0);
    let spec = make_preparation_problem();
    let u = step_control(spec.t_f(), spec.n_bins()).unwrap();
    let sol = solve(&spec, &u).unwrap();

    let rho = csvio::read_operator_path(out.join("rho.csv")).unwrap();
    let lam = csvio::read_operator_path(out.join("lambda.csv")).unwrap();
    assert_eq!(rho.times(), sol.rho.times());
    for (a, b) in rho.ops().iter().zip(sol.rho.ops()).chain(lam.ops().iter().zip(sol.lambda.ops())) {
        assert_eq!(a.max_abs_diff(b), 0.0);
    }
    let phi = csvio::read_curve(out.join("phi.csv"), "phi", SampleConvention::BinTrapezoid).unwrap();
    assert_eq!(phi.values(), sol.phi.values());

    let ctrl = tmp.path().join("u.csv");
    csvio::write_control(&ctrl, &u).unwrap();
    assert_eq!(csvio::read_control(&ctrl).unwrap().values(), u.values());
}

#[test]
fn file_control_reproduces_inline_control() {
    let tmp = tempfile::tempdir().unwrap();
    let ctrl = tmp.path().join("u.csv");
    let spec = make_retention_problem();
    csvio::write_control(&ctrl, &step_control(spec.t_f(), spec.n_bins()).unwrap()).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&pmp(&["propagate", "--control", "step"], &a)), 0);
    let from_file = format!("file:{}", ctrl.display());
    assert_eq!(code(&pmp(&["propagate", "--control", &from_file], &b)), 0);
    for f in ["rho.csv", "lambda.csv", "phi.csv", "hc.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let cases: [&[&str]; 7] = [
        &["propagate", "--problem", "nonexistent_preset"],
        &["propagate", "--control", "wiggly"],
        &["trajectories", "--n", "0"],
        &["trajectories", "--procedure", "3"],
        &["gradcheck", "--delta", "0"],
        &["optimize", "--provider", "annealing"],
        &["propagate", "--bogus-flag"],
    ];
    for args in cases {
        assert_eq!(code(&pmp(args, &out)), 2, "{args:?}");
    }
}

#[test]
fn gradcheck_passes_and_reports_breach_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    let o = pmp(&["gradcheck", "--problem", "retention", "--control", "step"], &ok);
    assert_eq!(code(&o), 0);
    let s = sidecar(&ok);
    assert!(s["summary"]["max_relative_error"].as_f64().unwrap() <= 1e-3);
    assert_eq!(header(&ok.join("gradcheck.csv")), "t,phi,fd,abs_err");

    let closed = tmp.path().join("closed");
    assert_eq!(code(&pmp(&["gradcheck", "--gamma", "0"], &closed)), 0);

    let strict = tmp.path().join("strict");
    assert_eq!(code(&pmp(&["gradcheck", "--tolerance", "1e-9"], &strict)), 3);
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "problem = \"preparation\"\nbins = 50\ngamma = 0.5\ncontrol = \"constant:0.3\"\n").unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg_s = cfg.to_str().unwrap();
    assert_eq!(code(&pmp(&["propagate", "--config", cfg_s, "--bins", "40"], &a)), 0);
    let flags = ["propagate", "--problem", "preparation", "--bins", "40", "--gamma", "0.5", "--control", "constant:0.3"];
    assert_eq!(code(&pmp(&flags, &b)), 0);
    assert_eq!(std::fs::read(a.join("rho.csv")).unwrap(), std::fs::read(b.join("rho.csv")).unwrap());
    assert_eq!(std::fs::read_to_string(a.join("rho.csv")).unwrap().lines().count(), 42);

    std::fs::write(&cfg, "problme = \"retention\"\n").unwrap();
    assert_eq!(code(&pmp(&["propagate", "--config", cfg_s], &a)), 2);
}

#[test]
fn golden_optimal_retention_has_flat_c_hamiltonian() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(code(&pmp(&["propagate", "--problem", "retention", "--control", "golden_optimal"], &out)), 0);
    let s = &sidecar(&out)["summary"];
    let rel = s["hc_max_deviation"].as_f64().unwrap() / s["hc_max_abs"].as_f64().unwrap();
    assert!(rel <= 0.05, "{rel}");
}

#[test]
fn trajectories_outputs_and_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let p1 = tmp.path().join("p1");
    assert_eq!(code(&pmp(&["trajectories", "--procedure", "1", "--n", "200", "--seed", "7"], &p1)), 0);
    for f in ["rho_est.csv", "lambda_est.csv", "rho_compare.csv", "lambda_compare.csv", "phi.csv", "hc.csv"] {
        assert!(p1.join(f).is_file(), "{f} missing");
    }
    assert_eq!(header(&p1.join("phi.csv")), "t,phi,std_err,phi_det,z");

    let p2 = tmp.path().join("p2");
    assert_eq!(code(&pmp(&["trajectories", "--procedure", "2", "--n", "200", "--dump", "3", "--seed", "7"], &p2)), 0);
    let text = std::fs::read_to_string(p2.join("jumps.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(p2.join("psi_dump.csv").is_file() && p2.join("pi_dump.csv").is_file());
}

#[test]
fn auto_seed_is_recorded_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert_eq!(code(&pmp(&["trajectories", "--n", "50", "--seed", "auto"], &a)), 0);
    let seed = sidecar(&a)["config"]["common"]["seed"].as_u64().expect("resolved seed in run.json");
    let b = tmp.path().join("b");
    assert_eq!(code(&pmp(&["trajectories", "--n", "50", "--seed", &seed.to_string()], &b)), 0);
    assert_eq!(std::fs::read(a.join("phi.csv")).unwrap(), std::fs::read(b.join("phi.csv")).unwrap());
}

#[test]
fn small_step_deterministic_optimization_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let args = [
        "optimize", "--problem", "preparation", "--provider", "deterministic", "--eta", "0.05", "--w-tv", "0",
        "--epsilon", "0", "--iters", "50",
    ];
    assert_eq!(code(&pmp(&args, &out)), 0);
    let t = csvio::read_table(out.join("iterations.csv")).unwrap();
    let costs = t.values("cost_det").unwrap();
    assert_eq!(costs.len(), 50);
    assert!(costs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(out.join("final_control.csv").is_file() && out.join("final_phi.csv").is_file());
}
