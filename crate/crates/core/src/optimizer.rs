//! Projected, TV-filtered gradient descent on piecewise-constant controls.
//!
//! One iteration: `Phi` from a provider, TV-denoise it, step
//! `u - eta * Phi~`, then project with `P_eps` (eps forced to 0 during the
//! warm-up iterations).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::{self, SwitchingCurve};
use crate::problem::{ControlSchedule, ProblemSpec};
use crate::trajectories::{self, DriftMode, EnsembleConfig, ScalarEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub eta: f64,
    pub w_tv: f64,
    pub epsilon: f64,
    pub epsilon_warmup: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { eta: 0.5, w_tv: 0.01, epsilon: 0.1, epsilon_warmup: 50 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.w_tv >= 0.0 && self.w_tv.is_finite()) {
            return Err(Error::InvalidArgument(format!("w_tv must be finite and >= 0, got {}", self.w_tv)));
        }
        check_epsilon(self.epsilon)
    }

    /// Projection margin in effect at iteration `k`.
    pub fn epsilon_at(&self, k: usize) -> f64 {
        if k < self.epsilon_warmup {
            0.0
        } else {
            self.epsilon
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    Ok(())
}

/// Exact minimizer of `sum ½(y_i - x_i)² + w sum |y_{i+1} - y_i|`.
///
/// Condat's direct algorithm (IEEE SPL 2013): linear in practice, no
/// iterations and no tolerance.
pub fn tv_denoise_values(x: &[f64], w: f64) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    if n == 0 {
        return y;
    }
    if w == 0.0 || n == 1 {
        y.copy_from_slice(x);
        return y;
    }
    let (lam, two_lam) = (w, 2.0 * w);
    let mut k = 0usize;
    let mut k0 = 0usize;
    let mut kplus = 0usize;
    let mut kminus = 0usize;
    let mut umin = lam;
    let mut umax = -lam;
    let mut vmin = x[0] - lam;
    let mut vmax = x[0] + lam;
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                while k0 <= kminus {
                    y[k0] = vmin;
                    k0 += 1;
                }
                k = k0;
                kminus = k0;
                vmin = x[k0];
                umin = lam;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                while k0 <= kplus {
                    y[k0] = vmax;
                    k0 += 1;
                }
                k = k0;
                kplus = k0;
                vmax = x[k0];
                umax = -lam;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    y[k0] = vmin;
                    k0 += 1;
                }
                return y;
            }
        }
        umin += x[k + 1] - vmin;
        if umin < -lam {
            while k0 <= kminus {
                y[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = x[k0];
            vmax = vmin + two_lam;
            umin = lam;
            umax = -lam;
            continue;
        }
        umax += x[k + 1] - vmax;
        if umax > lam {
            while k0 <= kplus {
                y[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = x[k0];
            vmin = vmax - two_lam;
            umin = lam;
            umax = -lam;
        } else {
            k += 1;
            if umin >= lam {
                kminus = k;
                vmin += (umin - lam) / (kminus - k0 + 1) as f64;
                umin = lam;
            }
            if umax <= -lam {
                kplus = k;
                vmax += (umax + lam) / (kplus - k0 + 1) as f64;
                umax = -lam;
            }
        }
    }
}

/// Value of the TV-regularized least-squares objective.
pub fn tv_objective(y: &[f64], x: &[f64], w: f64) -> f64 {
    let fit: f64 = y.iter().zip(x).map(|(a, b)| 0.5 * (a - b).powi(2)).sum();
    let tv: f64 = y.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    fit + w * tv
}

pub fn tv_denoise(phi: &SwitchingCurve, w_tv: f64) -> Result<SwitchingCurve> {
    if !(w_tv >= 0.0) {
        return Err(Error::InvalidArgument(format!("w_tv must be >= 0, got {w_tv}")));
    }
    phi.with_values(tv_denoise_values(phi.values(), w_tv))
}

/// `P_eps`: snap to `±u_max` beyond `u_max (1 - eps)`, clamp elsewhere.
pub fn project_controls(u: &ControlSchedule, epsilon: f64, u_max: f64) -> Result<ControlSchedule> {
    check_epsilon(epsilon)?;
    let edge = u_max * (1.0 - epsilon);
    let vals = u
        .values()
        .iter()
        .map(|&v| {
            if v > edge {
                u_max
            } else if v < -edge {
                -u_max
            } else {
                v.clamp(-u_max, u_max)
            }
        })
        .collect();
    u.with_values(vals)
}

/// `u - eta * phi_tilde`, unprojected.
pub fn gradient_step(u: &ControlSchedule, phi_tilde: &SwitchingCurve, eta: f64) -> Result<ControlSchedule> {
    if phi_tilde.len() != u.n_bins() {
        return Err(Error::GridMismatch { expected: u.n_bins(), got: phi_tilde.len() });
    }
    let vals = u.values().iter().zip(phi_tilde.values()).map(|(a, p)| a - eta * p).collect();
    u.with_values(vals)
}

/// Denoise, step and project: the control update of iteration `k`.
pub fn update_control(
    u: &ControlSchedule,
    phi: &SwitchingCurve,
    params: &FilterParams,
    k: usize,
    u_max: f64,
) -> Result<ControlSchedule> {
    let smooth = tv_denoise(phi, params.w_tv)?;
    let stepped = gradient_step(u, &smooth, params.eta)?;
    project_controls(&stepped, params.epsilon_at(k), u_max)
}

/// Consecutive `(iterations, realizations)` segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSchedule {
    segments: Vec<(usize, usize)>,
}

impl SampleSchedule {
    pub fn new(segments: Vec<(usize, usize)>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::InvalidArgument("schedule segments must be non-empty with positive counts".into()));
        }
        Ok(Self { segments })
    }

    pub fn constant(iterations: usize, n: usize) -> Result<Self> {
        Self::new(vec![(iterations, n)])
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn total_iterations(&self) -> usize {
        self.segments.iter().map(|s| s.0).sum()
    }

    /// Realizations for iteration `k`; past the end the last segment continues.
    pub fn realizations_at(&self, k: usize) -> usize {
        let mut end = 0;
        for &(iters, n) in &self.segments {
            end += iters;
            if k < end {
                return n;
            }
        }
        self.segments[self.segments.len() - 1].1
    }

    /// Segment index for iteration `k` (clamped to the last segment).
    pub fn segment_of(&self, k: usize) -> usize {
        let mut end = 0;
        for (idx, &(iters, _)) in self.segments.iter().enumerate() {
            end += iters;
            if k < end {
                return idx;
            }
        }
        self.segments.len() - 1
    }
}

impl std::str::FromStr for SampleSchedule {
    type Err = Error;

    /// Parses `100x50,100x200`.
    fn from_str(s: &str) -> Result<Self> {
        let segments = s
            .split(',')
            .map(|part| {
                let (a, b) = part
                    .trim()
                    .split_once('x')
                    .ok_or_else(|| Error::InvalidArgument(format!("bad schedule segment '{part}'")))?;
                let parse = |t: &str| {
                    t.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad schedule segment '{part}'")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments)
    }
}

impl std::fmt::Display for SampleSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.segments.iter().map(|(a, b)| format!("{a}x{b}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Source of the switching function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Deterministic,
    /// Independent state and costate ensembles.
    Stochastic1,
    /// Correlated pairs.
    Stochastic2,
}

impl std::str::FromStr for Provider {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "stochastic1" => Ok(Self::Stochastic1),
            "stochastic2" => Ok(Self::Stochastic2),
            other => Err(Error::InvalidArgument(format!("unknown provider '{other}'"))),
        }
    }
}

impl std::fmt::Display for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Deterministic => "deterministic",
            Self::Stochastic1 => "stochastic1",
            Self::Stochastic2 => "stochastic2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub provider: Provider,
    pub params: FilterParams,
    pub schedule: SampleSchedule,
    pub master_seed: u64,
    pub drift: DriftMode,
}

impl OptimizeConfig {
    pub fn deterministic(params: FilterParams) -> Self {
        Self {
            provider: Provider::Deterministic,
            params,
            schedule: SampleSchedule { segments: vec![(1, 1)] },
            master_seed: 0,
            drift: DriftMode::Expm,
        }
    }

    /// Seed of the ensemble drawn at iteration `k`.
    pub fn iteration_seed(&self, k: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(k as u64);
        rng.next_u64()
    }
}

/// State of iteration `k`: the control `u^(k)` and what was measured on it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub u: ControlSchedule,
    pub phi: SwitchingCurve,
    pub cost_det: f64,
    pub cost_stoch: Option<ScalarEstimate>,
    /// Zero for the deterministic provider.
    pub n_realizations: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationRun {
    pub records: Vec<IterationRecord>,
    /// Control after the last update.
    pub final_control: ControlSchedule,
}

impl OptimizationRun {
    pub fn final_cost(&self, spec: &ProblemSpec) -> Result<f64> {
        lindblad::cost(spec, &self.final_control)
    }
}

fn evaluate(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    cfg: &OptimizeConfig,
    k: usize,
) -> Result<(SwitchingCurve, f64, Option<ScalarEstimate>, usize)> {
    let sol = lindblad::solve(spec, u)?;
    let n = cfg.schedule.realizations_at(k);
    let ens = EnsembleConfig { n, master_seed: cfg.iteration_seed(k), drift: cfg.drift };
    match cfg.provider {
        Provider::Deterministic => Ok((sol.phi, sol.cost, None, 0)),
        Provider::Stochastic1 => {
            let est = trajectories::switching_procedure1(spec, u, &ens)?;
            let cost = trajectories::stochastic_cost(spec, u, &ens)?;
            Ok((est.phi.curve, sol.cost, Some(cost), n))
        }
        Provider::Stochastic2 => {
            let est = trajectories::switching_procedure2(spec, u, &ens)?;
            Ok((est.curve.curve, sol.cost, Some(est.cost), n))
        }
    }
}

/// Runs `iterations` updates from `u0`, calling `observe` after each record.
pub fn optimize_with<F: FnMut(&IterationRecord)>(
    spec: &ProblemSpec,
    cfg: &OptimizeConfig,
    u0: &ControlSchedule,
    iterations: usize,
    mut observe: F,
) -> Result<OptimizationRun> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    cfg.params.validate()?;
    spec.check_schedule(u0)?;
    let mut u = u0.clone();
    let mut records = Vec::with_capacity(iterations);
    for k in 0..iterations {
        let wrap = |e: Error| Error::Iteration { iteration: k, source: Box::new(e) };
        let (phi, cost_det, cost_stoch, n) = evaluate(spec, &u, cfg, k).map_err(wrap)?;
        let next = update_control(&u, &phi, &cfg.params, k, spec.u_max()).map_err(wrap)?;
        let rec = IterationRecord { k, u, phi, cost_det, cost_stoch, n_realizations: n };
        observe(&rec);
        records.push(rec);
        u = next;
    }
    Ok(OptimizationRun { records, final_control: u })
}

pub fn optimize(
    spec: &ProblemSpec,
    cfg: &OptimizeConfig,
    u0: &ControlSchedule,
    iterations: usize,
) -> Result<OptimizationRun> {
    optimize_with(spec, cfg, u0, iterations, |_| {})
}

/// Iterations used for the reference ("converged") controls.
pub const REFERENCE_ITERATIONS: usize = 8000;

/// Constant start for the reference controls.
///
/// `u = 0` is a stationary point of the retention problem (`Phi = 0` there
/// by symmetry, for the density matrix and for every trajectory pair), so
/// runs start slightly off it.
pub const REFERENCE_START: f64 = 0.1;

/// Plain projected gradient: no TV filter and no bang snapping.
///
/// Both filters exist to tame Monte-Carlo noise. With an exact gradient they
/// only move the fixed point away from the stationary point of the cost.
pub fn reference_params() -> FilterParams {
    FilterParams { eta: 0.5, w_tv: 0.0, epsilon: 0.0, epsilon_warmup: 0 }
}

/// Deterministic-provider control converged under our pipeline.
pub fn reference_control(spec: &ProblemSpec) -> Result<ControlSchedule> {
    let u0 = ControlSchedule::constant(REFERENCE_START, spec.t_f(), spec.n_bins())?;
    let cfg = OptimizeConfig::deterministic(reference_params());
    Ok(optimize(spec, &cfg, &u0, REFERENCE_ITERATIONS)?.final_control)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: Vec<f64>) -> SwitchingCurve {
        SwitchingCurve::on_bins(0.1, values).unwrap()
    }

    fn sched(values: Vec<f64>) -> ControlSchedule {
        ControlSchedule::new(values, 0.1).unwrap()
    }

    #[test]
    fn tv_trivial_cases() {
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(tv_denoise_values(&x, 0.0), x.to_vec());
        let flat = [0.7; 5];
        for w in [0.01, 1.0, 100.0] {
            for v in tv_denoise_values(&flat, w) {
                assert!((v - 0.7).abs() < 1e-12);
            }
        }
        assert!(tv_denoise_values(&[], 1.0).is_empty());
        assert_eq!(tv_denoise_values(&[2.0], 1.0), vec![2.0]);
    }

    #[test]
    fn tv_step_input() {
        let x = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        for w in [0.1, 0.6, 1.2] {
            let y = tv_denoise_values(&x, w);
            for (i, v) in y.iter().enumerate() {
                let want = if i < 3 { 1.0 - w / 3.0 } else { w / 3.0 };
                assert!((v - want).abs() < 1e-14, "w={w}: {y:?}");
            }
        }
        for w in [1.5, 2.0, 10.0] {
            for v in tv_denoise_values(&x, w) {
                assert!((v - 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let p = project_controls(&sched(vec![0.95, 0.5, -0.95]), 0.1, 1.0).unwrap();
        assert_eq!(p.values(), &[1.0, 0.5, -1.0]);
        let p = project_controls(&sched(vec![1.2, -0.3]), 0.0, 1.0).unwrap();
        assert_eq!(p.values(), &[1.0, -0.3]);
        let p = project_controls(&sched(vec![0.89]), 0.1, 1.0).unwrap();
        assert_eq!(p.values(), &[0.89]);
        assert!(project_controls(&sched(vec![0.0]), 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_step_examples() {
        let u = sched(vec![0.2, -0.4]);
        assert_eq!(gradient_step(&u, &curve(vec![0.0, 0.0]), 0.5).unwrap(), u);
        let z = gradient_step(&sched(vec![0.0; 3]), &curve(vec![1.0; 3]), 0.5).unwrap();
        assert_eq!(z.values(), &[-0.5; 3]);
        let up = gradient_step(&sched(vec![1.0; 2]), &curve(vec![-1.0; 2]), 0.5).unwrap();
        assert_eq!(up.values(), &[1.5; 2]);
        assert_eq!(project_controls(&up, 0.1, 1.0).unwrap().values(), &[1.0; 2]);
        assert!(gradient_step(&u, &curve(vec![0.0; 3]), 0.5).is_err());
    }

    #[test]
    fn bang_singular_consistent_control_is_nearly_fixed() {
        let u = sched(vec![1.0, 1.0, 0.3, -0.2, -1.0]);
        let phi = curve(vec![-0.4, -0.1, 0.0, 0.0, 0.2]);
        let params = FilterParams { eta: 0.5, w_tv: 0.0, epsilon: 0.1, epsilon_warmup: 10 };
        let next = update_control(&u, &phi, &params, 0, 1.0).unwrap();
        assert_eq!(next, u);
    }

    #[test]
    fn schedule_parsing_and_lookup() {
        let s: SampleSchedule = "100x50, 100x200".parse().unwrap();
        assert_eq!(s.segments(), &[(100, 50), (100, 200)]);
        assert_eq!(s.total_iterations(), 200);
        assert_eq!(s.realizations_at(0), 50);
        assert_eq!(s.realizations_at(99), 50);
        assert_eq!(s.realizations_at(100), 200);
        assert_eq!(s.realizations_at(500), 200);
        assert_eq!(s.segment_of(150), 1);
        assert_eq!(s.to_string(), "100x50,100x200");
        for bad in ["", "100", "0x5", "10x0", "ax3"] {
            assert!(bad.parse::<SampleSchedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn provider_names_round_trip() {
        for p in [Provider::Deterministic, Provider::Stochastic1, Provider::Stochastic2] {
            assert_eq!(p.to_string().parse::<Provider>().unwrap(), p);
        }
        assert!("stochastic3".parse::<Provider>().is_err());
    }

    #[test]
    fn warmup_forces_zero_margin() {
        let p = FilterParams::default();
        assert_eq!(p.epsilon_at(0), 0.0);
        assert_eq!(p.epsilon_at(49), 0.0);
        assert_eq!(p.epsilon_at(50), 0.1);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = [
            FilterParams { eta: -1.0, ..Default::default() },
            FilterParams { w_tv: f64::NAN, ..Default::default() },
            FilterParams { epsilon: 1.0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }
}
