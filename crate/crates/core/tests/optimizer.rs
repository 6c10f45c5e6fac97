use pmp_core::error::Error;
use pmp_core::lindblad;
use pmp_core::optimizer::*;
use pmp_core::problem::{make_preparation_problem, make_retention_problem, step_control, ControlSchedule};
use proptest::prelude::*;

/// Dual of the TV problem, `max_{|z| <= w} ½|x|² - ½|x - Dᵀz|²`, by exact
/// coordinate ascent. Returns the primal point `x - Dᵀz` and the dual value,
/// which is a lower bound on the primal optimum.
fn tv_dual_oracle(x: &[f64], w: f64) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut z = vec![0.0; n.saturating_sub(1)];
    let mut y = x.to_vec();
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for j in 0..z.len() {
            let target = (z[j] + 0.5 * (y[j + 1] - y[j])).clamp(-w, w);
            let d = target - z[j];
            z[j] = target;
            y[j] += d;
            y[j + 1] -= d;
            moved = moved.max(d.abs());
        }
        if moved < 1e-15 {
            break;
        }
    }
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let rr: f64 = y.iter().map(|v| v * v).sum();
    (y, 0.5 * xx - 0.5 * rr)
}

#[test]
fn step_input_against_oracle() {
    let x = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    for w in [0.05, 0.5, 1.0, 1.49, 1.5, 3.0] {
        let y = tv_denoise_values(&x, w);
        let (yo, dual) = tv_dual_oracle(&x, w);
        assert!(tv_objective(&y, &x, w) - dual <= 1e-10);
        for (a, b) in y.iter().zip(&yo) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tv_matches_dual_certificate(x in prop::collection::vec(-3.0f64..3.0, 2..=8), w in 0.0f64..2.0) {
        let y = tv_denoise_values(&x, w);
        let (yo, dual) = tv_dual_oracle(&x, w);
        let primal = tv_objective(&y, &x, w);
        prop_assert!(primal - dual <= 1e-10, "gap {}", primal - dual);
        prop_assert!(primal <= tv_objective(&yo, &x, w) + 1e-12);
    }

    #[test]
    fn tv_is_nonexpansive(
        pair in (2usize..40).prop_flat_map(|n| (
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(-2.0f64..2.0, n),
        )),
        w in 0.0f64..1.0,
    ) {
        let (a, b) = pair;
        let (pa, pb) = (tv_denoise_values(&a, w), tv_denoise_values(&b, w));
        let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
        prop_assert!(tv_objective(&pa, &a, w) <= tv_objective(&a, &a, w) + 1e-12);
    }

    #[test]
    fn projection_is_idempotent(vals in prop::collection::vec(-2.0f64..2.0, 1..30), eps in 0.0f64..0.99, umax in 0.1f64..3.0) {
        let u = ControlSchedule::new(vals, 0.1).unwrap();
        let once = project_controls(&u, eps, umax).unwrap();
        let twice = project_controls(&once, eps, umax).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.values().iter().all(|v| v.abs() <= umax));
    }
}

#[test]
fn small_steps_decrease_the_cost() {
    let params = FilterParams { eta: 0.05, w_tv: 0.0, epsilon: 0.0, epsilon_warmup: 0 };
    let cfg = OptimizeConfig::deterministic(params);
    for spec in [make_retention_problem(), make_preparation_problem()] {
        let u0 = ControlSchedule::constant(0.1, spec.t_f(), spec.n_bins()).unwrap();
        let run = optimize(&spec, &cfg, &u0, 50).unwrap();
        for w in run.records.windows(2) {
            assert!(w[1].cost_det <= w[0].cost_det + 1e-10);
        }
        assert!(run.records[49].cost_det < run.records[0].cost_det);
    }
}

#[test]
fn null_step_keeps_the_control() {
    let spec = make_preparation_problem();
    let u0 = step_control(spec.t_f(), spec.n_bins()).unwrap();
    let params = FilterParams { eta: 0.0, ..Default::default() };
    let run = optimize(&spec, &OptimizeConfig::deterministic(params), &u0, 1).unwrap();
    assert_eq!(run.final_control, u0);
    assert_eq!(run.records[0].cost_det, lindblad::cost(&spec, &u0).unwrap());
    assert_eq!(run.final_cost(&spec).unwrap(), run.records[0].cost_det);
}

#[test]
fn deterministic_chain_is_reproducible() {
    let spec = make_retention_problem();
    let u0 = ControlSchedule::constant(0.1, spec.t_f(), spec.n_bins()).unwrap();
    let cfg = OptimizeConfig::deterministic(FilterParams::default());
    let a = optimize(&spec, &cfg, &u0, 60).unwrap();
    let b = optimize(&spec, &cfg, &u0, 60).unwrap();
    assert_eq!(a.final_control, b.final_control);
    assert_eq!(a.records, b.records);
}

#[test]
fn stochastic_run_is_reproducible_and_logs_both_costs() {
    let spec = make_preparation_problem();
    let u0 = ControlSchedule::zeros_for(&spec);
    for provider in [Provider::Stochastic1, Provider::Stochastic2] {
        let cfg = OptimizeConfig {
            provider,
            params: FilterParams::default(),
            schedule: "2x20,2x40".parse().unwrap(),
            master_seed: 5,
            drift: Default::default(),
        };
        let a = optimize(&spec, &cfg, &u0, 4).unwrap();
        let b = optimize(&spec, &cfg, &u0, 4).unwrap();
        assert_eq!(a.records, b.records);
        let ns: Vec<usize> = a.records.iter().map(|r| r.n_realizations).collect();
        assert_eq!(ns, vec![20, 20, 40, 40]);
        assert!(a.records.iter().all(|r| r.cost_stoch.is_some()));
    }
}

#[test]
fn provider_failures_carry_the_iteration() {
    let spec = make_preparation_problem().with_gamma(50.0).unwrap();
    let cfg = OptimizeConfig {
        provider: Provider::Stochastic2,
        params: FilterParams::default(),
        schedule: SampleSchedule::constant(3, 10).unwrap(),
        master_seed: 1,
        drift: Default::default(),
    };
    let err = optimize(&spec, &cfg, &ControlSchedule::zeros_for(&spec), 3).unwrap_err();
    assert!(matches!(err, Error::Iteration { iteration: 0, .. }), "{err}");
    assert!(optimize(&spec, &cfg, &ControlSchedule::zeros_for(&spec), 0).is_err());
}
