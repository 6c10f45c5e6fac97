use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use pmp_core::lindblad::{self, OperatorPath, SwitchingCurve};
use pmp_core::optimizer::{self, OptimizeConfig, Provider};
use pmp_core::trajectories::{self, EnsembleConfig, StreamDomain, Unraveling};

use crate::config::{resolve_control, GradcheckConfig, OptimizeSettings, PropagateConfig, TrajectoriesConfig};
use crate::csvio::{self, num, opt_num};
use crate::error::{CliError, Result};

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_sidecar(dir: &Path, value: &Value) -> Result<PathBuf> {
    let path = dir.join("run.json");
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Mean of `values` and the largest absolute deviation from it.
pub fn flatness(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    (mean, dev)
}

pub fn cmd_propagate(cfg: &PropagateConfig) -> Result<Value> {
    let c = &cfg.common;
    let u = resolve_control(&c.control, &c.spec)?;
    let sol = lindblad::solve(&c.spec, &u)?;
    let hc = lindblad::c_hamiltonian(&sol.rho, &sol.lambda, &c.spec, &u)?;
    let (hc_mean, hc_dev) = flatness(hc.values());

    prepare_dir(&c.out)?;
    csvio::write_operator_path(c.out.join("rho.csv"), &sol.rho)?;
    csvio::write_operator_path(c.out.join("lambda.csv"), &sol.lambda)?;
    csvio::write_curve(c.out.join("phi.csv"), "phi", &sol.phi, &[("u", u.values().to_vec())])?;
    csvio::write_curve(c.out.join("hc.csv"), "hc", &hc, &[])?;

    let summary = json!({
        "cost": sol.cost,
        "fidelity": -sol.cost,
        "max_abs_phi": sol.phi.max_abs(),
        "hc_mean": hc_mean,
        "hc_max_deviation": hc_dev,
        "hc_max_abs": hc.max_abs(),
    });
    println!(
        "cost {:.10}  max|phi| {:.4e}  hc mean {:.4e}  hc max deviation {:.4e} ({:.2}% of max|hc|)",
        sol.cost,
        sol.phi.max_abs(),
        hc_mean,
        hc_dev,
        100.0 * hc_dev / hc.max_abs()
    );
    write_sidecar(&c.out, &json!({ "command": "propagate", "config": cfg, "summary": summary }))?;
    Ok(summary)
}

fn comparison_rows(est: &trajectories::OperatorEstimate, exact: &OperatorPath) -> Vec<Vec<String>> {
    (0..exact.ops().len())
        .map(|t| {
            vec![
                num(exact.times()[t]),
                num(est.mean.ops()[t].max_abs_diff(&exact.ops()[t])),
                num(est.max_std_err(t)),
            ]
        })
        .collect()
}

fn phi_table(path: PathBuf, est: &trajectories::CurveEstimate, exact: &SwitchingCurve) -> Result<usize> {
    let z: Vec<f64> = est
        .curve
        .values()
        .iter()
        .zip(exact.values())
        .zip(&est.std_err)
        .map(|((m, d), s)| (m - d).abs() / s)
        .collect();
    csvio::write_curve(
        path,
        "phi",
        &est.curve,
        &[("std_err", est.std_err.clone()), ("phi_det", exact.values().to_vec()), ("z", z.clone())],
    )?;
    Ok(z.iter().filter(|&&v| v <= 3.0).count())
}

fn dump_paths(path: PathBuf, paths: &[(usize, trajectories::StatePath)]) -> Result<()> {
    let dim = paths.first().map_or(0, |(_, p)| p.first().dim());
    let mut header = vec!["n".to_string(), "t".to_string()];
    for k in 0..dim {
        header.push(format!("re_{k}"));
        header.push(format!("im_{k}"));
    }
    let mut rows = Vec::new();
    for (n, p) in paths {
        for (t, v) in p.times().iter().zip(p.vectors()) {
            let mut row = vec![n.to_string(), num(*t)];
            for z in v.amplitudes() {
                row.push(num(z.re));
                row.push(num(z.im));
            }
            rows.push(row);
        }
    }
    csvio::write_rows(path, &header, &rows)
}

fn dump_trajectories(cfg: &TrajectoriesConfig, unr: &Unraveling) -> Result<()> {
    let c = &cfg.common;
    let mut psi = Vec::new();
    let mut pi = Vec::new();
    let mut jumps = Vec::new();
    let (psi_domain, pi_domain) = if cfg.procedure == 1 {
        (StreamDomain::State, StreamDomain::Costate)
    } else {
        (StreamDomain::Paired, StreamDomain::Paired)
    };
    for n in 0..cfg.dump.min(cfg.n) {
        let jr = unr.realization(c.seed, psi_domain, n as u64)?;
        jumps.push(vec![n.to_string(), format!("{psi_domain:?}").to_lowercase(), jr.stream().to_string(), num(jr.gamma_dt()), jr.to_bit_string()]);
        if cfg.procedure == 1 {
            psi.push((n, unr.forward(&jr, c.spec.psi_ini())?));
            let jl = unr.realization(c.seed, pi_domain, n as u64)?;
            jumps.push(vec![n.to_string(), "costate".into(), jl.stream().to_string(), num(jl.gamma_dt()), jl.to_bit_string()]);
            pi.push((n, unr.backward(&jl, c.spec.psi_tar())?));
        } else {
            let pair = unr.pair(&jr, c.spec.psi_ini(), c.spec.psi_tar())?;
            psi.push((n, pair.psi));
            pi.push((n, pair.pi));
        }
    }
    dump_paths(c.out.join("psi_dump.csv"), &psi)?;
    dump_paths(c.out.join("pi_dump.csv"), &pi)?;
    let header: Vec<String> = ["n", "domain", "stream", "gamma_dt", "dn"].iter().map(|s| s.to_string()).collect();
    csvio::write_rows(c.out.join("jumps.csv"), &header, &jumps)
}

pub fn cmd_trajectories(cfg: &TrajectoriesConfig) -> Result<Value> {
    let c = &cfg.common;
    let u = resolve_control(&c.control, &c.spec)?;
    let ens = EnsembleConfig { n: cfg.n, master_seed: c.seed, drift: c.drift };
    let sol = lindblad::solve(&c.spec, &u)?;
    prepare_dir(&c.out)?;
    let bins = c.spec.n_bins();

    let summary = if cfg.procedure == 1 {
        let est = trajectories::switching_procedure1(&c.spec, &u, &ens)?;
        csvio::write_operator_path(c.out.join("rho_est.csv"), &est.rho.mean)?;
        csvio::write_operator_path(c.out.join("lambda_est.csv"), &est.lambda.mean)?;
        let header: Vec<String> = ["t", "max_abs_diff", "max_std_err"].iter().map(|s| s.to_string()).collect();
        csvio::write_rows(c.out.join("rho_compare.csv"), &header, &comparison_rows(&est.rho, &sol.rho))?;
        csvio::write_rows(c.out.join("lambda_compare.csv"), &header, &comparison_rows(&est.lambda, &sol.lambda))?;
        let inside = phi_table(c.out.join("phi.csv"), &est.phi, &sol.phi)?;
        let hc_est = trajectories::c_hamiltonian_procedure1(&c.spec, &u, &est)?;
        let hc_det = lindblad::c_hamiltonian(&sol.rho, &sol.lambda, &c.spec, &u)?;
        csvio::write_curve(c.out.join("hc.csv"), "hc", &hc_est, &[("hc_det", hc_det.values().to_vec())])?;
        let cost_est = lindblad::terminal_cost(est.rho.mean.last(), c.spec.psi_tar())?;
        println!("procedure 1, N={}: Phi within 3 std_err at {inside}/{bins} bins", cfg.n);
        json!({ "phi_bins_within_3_std_err": inside, "bins": bins, "cost_det": sol.cost, "cost_from_rho_estimate": cost_est })
    } else {
        let est = trajectories::switching_procedure2(&c.spec, &u, &ens)?;
        let inside = phi_table(c.out.join("phi.csv"), &est.curve, &sol.phi)?;
        println!(
            "procedure 2, N={}: Phi within 3 std_err at {inside}/{bins} bins; cost {:.6} ± {:.6} (deterministic {:.6})",
            cfg.n, est.cost.mean, est.cost.std_err, sol.cost
        );
        json!({
            "phi_bins_within_3_std_err": inside,
            "bins": bins,
            "cost_det": sol.cost,
            "cost_stoch": est.cost.mean,
            "cost_stoch_std_err": est.cost.std_err,
        })
    };
    if cfg.dump > 0 {
        dump_trajectories(cfg, &Unraveling::new(&c.spec, &u, c.drift)?)?;
    }
    write_sidecar(&c.out, &json!({ "command": "trajectories", "config": cfg, "summary": summary }))?;
    Ok(summary)
}

pub fn cmd_optimize(cfg: &OptimizeSettings) -> Result<Value> {
    let c = &cfg.common;
    let u0 = resolve_control(&c.control, &c.spec)?;
    let oc = OptimizeConfig {
        provider: cfg.provider,
        params: cfg.params,
        schedule: cfg.schedule.clone(),
        master_seed: c.seed,
        drift: c.drift,
    };
    let run = optimizer::optimize_with(&c.spec, &oc, &u0, cfg.iters, |r| match r.cost_stoch {
        Some(s) => eprintln!("k={} n={} cost_det={:.8} cost_stoch={:.8}±{:.8}", r.k, r.n_realizations, r.cost_det, s.mean, s.std_err),
        None => eprintln!("k={} cost_det={:.8}", r.k, r.cost_det),
    })?;

    prepare_dir(&c.out)?;
    let header: Vec<String> =
        ["k", "n_realizations", "cost_det", "cost_stoch", "cost_stoch_stderr"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = run
        .records
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.n_realizations.to_string(),
                num(r.cost_det),
                opt_num(r.cost_stoch.map(|s| s.mean)),
                opt_num(r.cost_stoch.map(|s| s.std_err)),
            ]
        })
        .collect();
    csvio::write_rows(c.out.join("iterations.csv"), &header, &rows)?;
    let fin = lindblad::solve(&c.spec, &run.final_control)?;
    csvio::write_control(c.out.join("final_control.csv"), &run.final_control)?;
    csvio::write_curve(c.out.join("final_phi.csv"), "phi", &fin.phi, &[])?;

    let last = run.records.last().expect("at least one iteration");
    let summary = json!({
        "final_cost_det": fin.cost,
        "last_iteration_cost_det": last.cost_det,
        "last_iteration_cost_stoch": last.cost_stoch.map(|s| s.mean),
        "last_iteration_cost_stoch_std_err": last.cost_stoch.map(|s| s.std_err),
        "iteration_seeds": if cfg.provider == Provider::Deterministic {
            Value::Null
        } else {
            json!((0..cfg.iters).map(|k| oc.iteration_seed(k)).collect::<Vec<_>>())
        },
    });
    println!("final deterministic cost {:.10} after {} iterations", fin.cost, cfg.iters);
    write_sidecar(&c.out, &json!({ "command": "optimize", "config": cfg, "summary": summary }))?;
    Ok(summary)
}

/// `max_i |Phi_i - FD_i| / max|Phi|`; the absolute error when `Phi ≡ 0`.
pub fn relative_gradient_error(phi: &[f64], fd: &[f64]) -> f64 {
    let err = phi.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = phi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

pub fn cmd_gradcheck(cfg: &GradcheckConfig) -> Result<Value> {
    let c = &cfg.common;
    let u = resolve_control(&c.control, &c.spec)?;
    let sol = lindblad::solve(&c.spec, &u)?;
    let fd = (0..c.spec.n_bins())
        .map(|i| lindblad::finite_difference_gradient(&c.spec, &u, i, cfg.delta))
        .collect::<pmp_core::Result<Vec<f64>>>()?;
    let rel = relative_gradient_error(sol.phi.values(), &fd);
    let abs: Vec<f64> = sol.phi.values().iter().zip(&fd).map(|(a, b)| (a - b).abs()).collect();

    prepare_dir(&c.out)?;
    csvio::write_curve(c.out.join("gradcheck.csv"), "phi", &sol.phi, &[("fd", fd), ("abs_err", abs)])?;
    let pass = rel <= cfg.tolerance;
    let summary = json!({ "max_relative_error": rel, "tolerance": cfg.tolerance, "pass": pass });
    write_sidecar(&c.out, &json!({ "command": "gradcheck", "config": cfg, "summary": summary }))?;
    println!("max |phi - fd| / max|phi| = {rel:.3e} (tolerance {:.1e})", cfg.tolerance);
    if !pass {
        return Err(CliError::Check(format!("gradient check failed: {rel:.3e} > {:.1e}", cfg.tolerance)));
    }
    Ok(summary)
}
