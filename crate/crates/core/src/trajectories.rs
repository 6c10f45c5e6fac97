//! Linear quantum-jump unraveling of the state and of the costate.
//!
//! A trajectory evolves as `|dpsi> = G|psi> dt + (L|psi> - |psi>) dN` with
//! `G = -iH - (gamma/2) L†L + (gamma/2)` and `dN` a per-bin Bernoulli variable
//! of mean `gamma dt`. The costate partner runs backward with the adjoint map
//! of every bin, `G† = iH - (gamma/2) L†L + (gamma/2)` and jumps `L†`.
//!
//! Jump bit `dN[i]` belongs to the interval `[t_i, t_{i+1})`: forward applies
//! it stepping `i -> i+1` and backward applies the same bit stepping `i+1 -> i`.
//! Because the backward bin map is the exact adjoint of the forward one,
//! `<pi(t)|psi(t)>` is constant along every trajectory pair.
//!
//! Ensembles draw realization `n` from a ChaCha8 stream keyed by
//! `(master_seed, domain, n)`. Trajectories run in parallel but every
//! reduction is done in ascending realization order, so results do not
//! depend on the thread count.
//!
//! Note on the c-Hamiltonian: the term `Tr(lambda L rho L†)` has no
//! correlated-pair estimator of the form `<pi|A|psi>`, so
//! [`c_hamiltonian_procedure1`] (uncorrelated density-matrix estimates) is the
//! only stochastic route to it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{c, commutator, expm, trace_product, Operator, StateVector, TOL_ALGEBRA};
use crate::error::{check_dims, Error, Result};
use crate::lindblad::{self, trapezoid_bins, OperatorPath, SwitchingCurve};
use crate::problem::{ControlSchedule, ProblemSpec};

/// How the no-jump part of a bin is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    /// `psi <- exp(G dt) psi`, then `psi <- L psi` on a jump.
    #[default]
    Expm,
    /// The literal first-order update `psi <- psi + G psi dt + (L psi - psi) dN`.
    Euler,
}

impl std::str::FromStr for DriftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expm" => Ok(Self::Expm),
            "euler" => Ok(Self::Euler),
            other => Err(Error::InvalidArgument(format!("unknown drift mode '{other}'"))),
        }
    }
}

/// Random-stream domains. Procedure 1 draws state and costate trajectories
/// from different domains so the two ensembles are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    State = 0,
    Costate = 1,
    Paired = 2,
}

impl StreamDomain {
    pub fn stream(self, index: u64) -> u64 {
        ((self as u64) << 48) | (index & ((1 << 48) - 1))
    }
}

/// Per-bin jump record `dN[i] ∈ {0, 1}` with `P(dN[i] = 1) = gamma dt`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JumpRealization {
    dn: Vec<bool>,
    seed: u64,
    stream: u64,
    gamma_dt_bits: u64,
}

impl JumpRealization {
    /// Draws a realization from stream `stream` of the ChaCha8 generator seeded by `seed`.
    pub fn sample(n_bins: usize, dt: f64, gamma: f64, seed: u64, stream: u64) -> Result<Self> {
        let p = jump_probability(gamma, dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let dn = (0..n_bins).map(|_| rng.random::<f64>() < p).collect();
        Ok(Self { dn, seed, stream, gamma_dt_bits: p.to_bits() })
    }

    /// A fixed jump record, e.g. for replay or hand-built tests.
    pub fn from_bits(dn: Vec<bool>, gamma_dt: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma_dt) {
            return Err(Error::InvalidArgument(format!("gamma*dt must lie in [0, 1), got {gamma_dt}")));
        }
        Ok(Self { dn, seed: 0, stream: 0, gamma_dt_bits: gamma_dt.to_bits() })
    }

    /// Parses a `0`/`1` string as written by [`JumpRealization::to_bit_string`].
    pub fn parse_bits(s: &str, gamma_dt: f64) -> Result<Self> {
        let dn = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!("invalid jump bit '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(dn, gamma_dt)
    }

    pub fn to_bit_string(&self) -> String {
        self.dn.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn dn(&self) -> &[bool] {
        &self.dn
    }

    pub fn n_bins(&self) -> usize {
        self.dn.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn gamma_dt(&self) -> f64 {
        f64::from_bits(self.gamma_dt_bits)
    }

    pub fn jump_count(&self) -> usize {
        self.dn.iter().filter(|&&b| b).count()
    }
}

fn jump_probability(gamma: f64, dt: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "the jump unraveling needs gamma >= 0, got {gamma}"
        )));
    }
    let p = gamma * dt;
    if !(p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma*dt = {p} >= 1; refine the time grid"
        )));
    }
    Ok(p)
}

/// `sample_jump_process` on a problem grid, using stream 0 of `seed`.
pub fn sample_jump_process(spec: &ProblemSpec, gamma: f64, seed: u64) -> Result<JumpRealization> {
    JumpRealization::sample(spec.n_bins(), spec.dt(), gamma, seed, 0)
}

/// State vectors on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    times: Vec<f64>,
    vectors: Vec<StateVector>,
}

impl StatePath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn vectors(&self) -> &[StateVector] {
        &self.vectors
    }

    pub fn first(&self) -> &StateVector {
        &self.vectors[0]
    }

    pub fn last(&self) -> &StateVector {
        &self.vectors[self.vectors.len() - 1]
    }
}

/// Forward state trajectory and its costate partner driven by the same jumps.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub realization: JumpRealization,
    pub psi: StatePath,
    pub pi: StatePath,
    /// `<psi_tar|psi(t_f)>`
    pub terminal_amp: Complex64,
}

impl TrajectoryPair {
    /// Per-trajectory cost `-|<psi_tar|psi(t_f)>|²`.
    pub fn cost(&self) -> f64 {
        -self.terminal_amp.norm_sqr()
    }
}

/// Precomputed per-bin drift maps for one problem and control.
#[derive(Debug, Clone)]
pub struct Unraveling {
    drift: Vec<DMatrix<Complex64>>,
    l: DMatrix<Complex64>,
    ldag: DMatrix<Complex64>,
    mode: DriftMode,
    times: Vec<f64>,
    gamma: f64,
    dt: f64,
}

impl Unraveling {
    pub fn new(spec: &ProblemSpec, u: &ControlSchedule, mode: DriftMode) -> Result<Self> {
        spec.check_schedule(u)?;
        let dt = spec.dt();
        jump_probability(spec.gamma(), dt)?;
        let d = spec.dim();
        let id = DMatrix::<Complex64>::identity(d, d);
        let l = spec.l().matrix().clone();
        let ldag = l.adjoint();
        let ldl = &ldag * &l;
        let g = spec.gamma();
        let drift = u
            .values()
            .iter()
            .map(|&ui| {
                let h = spec.hamiltonian_at(ui);
                let gen = h.matrix() * c(0.0, -1.0) - &ldl * c(0.5 * g, 0.0) + &id * c(0.5 * g, 0.0);
                match mode {
                    DriftMode::Expm => expm(&(gen * c(dt, 0.0))),
                    DriftMode::Euler => &id + gen * c(dt, 0.0),
                }
            })
            .collect();
        Ok(Self { drift, l, ldag, mode, times: spec.times(), gamma: g, dt })
    }

    pub fn n_bins(&self) -> usize {
        self.drift.len()
    }

    pub fn mode(&self) -> DriftMode {
        self.mode
    }

    fn check_realization(&self, jr: &JumpRealization) -> Result<()> {
        if jr.n_bins() != self.n_bins() {
            return Err(Error::GridMismatch { expected: self.n_bins(), got: jr.n_bins() });
        }
        Ok(())
    }

    /// Jump record for realization `index` of `domain`.
    pub fn realization(&self, master_seed: u64, domain: StreamDomain, index: u64) -> Result<JumpRealization> {
        JumpRealization::sample(self.n_bins(), self.dt, self.gamma, master_seed, domain.stream(index))
    }

    fn step_forward(&self, bin: usize, jump: bool, psi: &DVector<Complex64>) -> DVector<Complex64> {
        let drifted = &self.drift[bin] * psi;
        match (jump, self.mode) {
            (false, _) => drifted,
            (true, DriftMode::Expm) => &self.l * drifted,
            (true, DriftMode::Euler) => drifted + &self.l * psi - psi,
        }
    }

    fn step_backward(&self, bin: usize, jump: bool, pi: &DVector<Complex64>) -> DVector<Complex64> {
        match (jump, self.mode) {
            (false, _) => self.drift[bin].ad_mul(pi),
            (true, DriftMode::Expm) => self.drift[bin].ad_mul(&(&self.ldag * pi)),
            (true, DriftMode::Euler) => self.drift[bin].ad_mul(pi) + &self.ldag * pi - pi,
        }
    }

    fn forward_vectors(&self, jr: &JumpRealization, psi0: &StateVector) -> Vec<DVector<Complex64>> {
        let mut out = Vec::with_capacity(self.n_bins() + 1);
        out.push(psi0.vector().clone());
        for (bin, &jump) in jr.dn().iter().enumerate() {
            let next = self.step_forward(bin, jump, &out[bin]);
            out.push(next);
        }
        out
    }

    fn backward_vectors(&self, jr: &JumpRealization, boundary: &DVector<Complex64>) -> Vec<DVector<Complex64>> {
        let n = self.n_bins();
        let mut out = vec![DVector::zeros(boundary.len()); n + 1];
        out[n] = boundary.clone();
        for bin in (0..n).rev() {
            out[bin] = self.step_backward(bin, jr.dn()[bin], &out[bin + 1]);
        }
        out
    }

    fn to_path(&self, vs: Vec<DVector<Complex64>>) -> Result<StatePath> {
        if vs.iter().any(|v| v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(StatePath { times: self.times.clone(), vectors: vs.into_iter().map(StateVector::from_vector).collect() })
    }

    pub fn forward(&self, jr: &JumpRealization, psi0: &StateVector) -> Result<StatePath> {
        self.check_realization(jr)?;
        self.to_path(self.forward_vectors(jr, psi0))
    }

    pub fn backward(&self, jr: &JumpRealization, boundary: &StateVector) -> Result<StatePath> {
        self.check_realization(jr)?;
        self.to_path(self.backward_vectors(jr, boundary.vector()))
    }

    /// Forward `psi`, then `pi` from `pi(t_f) = -|psi_tar><psi_tar|psi(t_f)>`
    /// with the same jump record.
    pub fn pair(&self, jr: &JumpRealization, psi_ini: &StateVector, psi_tar: &StateVector) -> Result<TrajectoryPair> {
        self.check_realization(jr)?;
        let psi = self.forward_vectors(jr, psi_ini);
        let amp = psi_tar.vector().dotc(&psi[self.n_bins()]);
        let boundary = psi_tar.vector() * (-amp);
        let pi = self.backward_vectors(jr, &boundary);
        Ok(TrajectoryPair {
            realization: jr.clone(),
            psi: self.to_path(psi)?,
            pi: self.to_path(pi)?,
            terminal_amp: amp,
        })
    }

    /// Per-bin `<pi|A_i|psi>` at both ends of each bin, for one pair.
    ///
    /// Inside bin `i` the pair is `(E psi_i, L†^dN pi_{i+1})` just before the
    /// bin's right edge and `(psi_i, pi_i)` at its left edge.
    fn bin_forms(
        &self,
        jr: &JumpRealization,
        psi: &[DVector<Complex64>],
        pi: &[DVector<Complex64>],
        ops: &[&DMatrix<Complex64>],
    ) -> Vec<(Complex64, Complex64)> {
        (0..self.n_bins())
            .map(|i| {
                let a = ops[i];
                let left = pi[i].dotc(&(a * &psi[i]));
                let pre = &self.drift[i] * &psi[i];
                let post = if jr.dn()[i] { &self.ldag * &pi[i + 1] } else { pi[i + 1].clone() };
                let right = post.dotc(&(a * pre));
                (left, right)
            })
            .collect()
    }
}

/// `psi(t)` for one realization, from `psi_ini`.
pub fn forward_psi(spec: &ProblemSpec, u: &ControlSchedule, jr: &JumpRealization, mode: DriftMode) -> Result<StatePath> {
    Unraveling::new(spec, u, mode)?.forward(jr, spec.psi_ini())
}

/// `pi(t)` for one realization, from `pi(t_f) = boundary`.
pub fn backward_pi(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    jr: &JumpRealization,
    boundary: &StateVector,
    mode: DriftMode,
) -> Result<StatePath> {
    check_dims(boundary.dim(), spec.dim())?;
    Unraveling::new(spec, u, mode)?.backward(jr, boundary)
}

/// Ensemble size, seed and integration mode shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n: usize,
    pub master_seed: u64,
    pub drift: DriftMode,
}

impl EnsembleConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        Self { n, master_seed, drift: DriftMode::Expm }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean and standard error of a real scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero when `n < 2`.
    pub std_err: f64,
}

/// A per-bin curve with per-bin standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEstimate {
    pub n: usize,
    pub curve: SwitchingCurve,
    pub std_err: Vec<f64>,
}

/// Ensemble-averaged operator path with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorEstimate {
    pub n: usize,
    pub mean: OperatorPath,
    /// `std_err[node][row * dim + col]`: standard error of the complex entry,
    /// `sqrt(sum |z - mean|² / (n - 1)) / sqrt(n)`.
    pub std_err: Vec<Vec<f64>>,
}

impl OperatorEstimate {
    /// Largest entrywise standard error at a node.
    pub fn max_std_err(&self, node: usize) -> f64 {
        self.std_err[node].iter().copied().fold(0.0, f64::max)
    }
}

fn mean_and_stderr(samples: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Column-wise mean and standard error of `rows[n][k]`, summed in row order.
fn columns_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|k| mean_and_stderr(rows.iter().map(move |r| r[k]))).unzip()
}

fn outer_products_stats(
    paths: &[Vec<DVector<Complex64>>],
    dim: usize,
    times: Vec<f64>,
    sign: f64,
) -> Result<OperatorEstimate> {
    let n = paths.len();
    let nodes = paths[0].len();
    let mut means = Vec::with_capacity(nodes);
    let mut errs = Vec::with_capacity(nodes);
    for t in 0..nodes {
        let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
        for p in paths {
            sum += &p[t] * p[t].adjoint();
        }
        let mean = sum * c(sign / n as f64, 0.0);
        let mut err = vec![0.0; dim * dim];
        if n >= 2 {
            for p in paths {
                let outer = (&p[t] * p[t].adjoint()) * c(sign, 0.0);
                for r in 0..dim {
                    for col in 0..dim {
                        err[r * dim + col] += (outer[(r, col)] - mean[(r, col)]).norm_sqr();
                    }
                }
            }
            for e in &mut err {
                *e = (*e / (n - 1) as f64 / n as f64).sqrt();
            }
        }
        means.push(Operator::from_matrix(mean)?);
        errs.push(err);
    }
    Ok(OperatorEstimate { n, mean: OperatorPath::new(times, means)?, std_err: errs })
}

fn run_forward(unr: &Unraveling, cfg: &EnsembleConfig, psi0: &StateVector) -> Result<Vec<Vec<DVector<Complex64>>>> {
    (0..cfg.n as u64)
        .into_par_iter()
        .map(|k| {
            let jr = unr.realization(cfg.master_seed, StreamDomain::State, k)?;
            Ok(unr.forward_vectors(&jr, psi0))
        })
        .collect()
}

fn run_backward(
    unr: &Unraveling,
    cfg: &EnsembleConfig,
    boundary: &StateVector,
) -> Result<Vec<Vec<DVector<Complex64>>>> {
    (0..cfg.n as u64)
        .into_par_iter()
        .map(|k| {
            let jr = unr.realization(cfg.master_seed, StreamDomain::Costate, k)?;
            Ok(unr.backward_vectors(&jr, boundary.vector()))
        })
        .collect()
}

/// `rho(t) ≈ (1/N) Σ |psi_n(t)><psi_n(t)|` over independent realizations.
pub fn estimate_rho(spec: &ProblemSpec, u: &ControlSchedule, cfg: &EnsembleConfig) -> Result<OperatorEstimate> {
    cfg.validate()?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let paths = run_forward(&unr, cfg, spec.psi_ini())?;
    outer_products_stats(&paths, spec.dim(), spec.times(), 1.0)
}

/// `E[|pi(t)><pi(t)|]` for backward trajectories started from `boundary`.
pub fn estimate_costate(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    cfg: &EnsembleConfig,
    boundary: &StateVector,
) -> Result<OperatorEstimate> {
    cfg.validate()?;
    check_dims(boundary.dim(), spec.dim())?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let paths = run_backward(&unr, cfg, boundary)?;
    outer_products_stats(&paths, spec.dim(), spec.times(), 1.0)
}

/// `lambda(t) ≈ -(1/N) Σ |pi_n(t)><pi_n(t)|` with every `pi_n(t_f) = psi_tar`.
///
/// The minus sign of the fidelity boundary `-|psi_tar><psi_tar|` is applied
/// to the outer products, since `|pi><pi|` itself is positive.
pub fn estimate_lambda(spec: &ProblemSpec, u: &ControlSchedule, cfg: &EnsembleConfig) -> Result<OperatorEstimate> {
    cfg.validate()?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let paths = run_backward(&unr, cfg, spec.psi_tar())?;
    outer_products_stats(&paths, spec.dim(), spec.times(), -1.0)
}

/// Output of the uncorrelated procedure.
#[derive(Debug, Clone)]
pub struct Procedure1 {
    pub rho: OperatorEstimate,
    pub lambda: OperatorEstimate,
    pub phi: CurveEstimate,
}

/// Switching function from independently estimated `rho` and `lambda`,
/// evaluated with the deterministic trace formula.
///
/// The standard error is the first-order (delta-method) propagation of the
/// two independent ensembles through the bilinear form.
pub fn switching_procedure1(spec: &ProblemSpec, u: &ControlSchedule, cfg: &EnsembleConfig) -> Result<Procedure1> {
    cfg.validate()?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let psi_paths = run_forward(&unr, cfg, spec.psi_ini())?;
    let pi_paths = run_backward(&unr, cfg, spec.psi_tar())?;
    let rho = outer_products_stats(&psi_paths, spec.dim(), spec.times(), 1.0)?;
    let lambda = outer_products_stats(&pi_paths, spec.dim(), spec.times(), -1.0)?;

    let hu = spec.hu();
    let nodes = lindblad::commutator_form_nodes(&rho.mean, &lambda.mean, hu)?;
    let values = trapezoid_bins(&nodes);

    // Linearized per-sample contributions of each ensemble to every bin.
    let a_nodes = |path: &Vec<DVector<Complex64>>| -> Result<Vec<f64>> {
        let node_vals = path
            .iter()
            .zip(lambda.mean.ops())
            .map(|(v, lam)| {
                let p = Operator::from_matrix(v * v.adjoint())?;
                Ok(trace_product(lam, &commutator(hu, &p)?)?.im)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(trapezoid_bins(&node_vals))
    };
    let b_nodes = |path: &Vec<DVector<Complex64>>| -> Result<Vec<f64>> {
        let node_vals = path
            .iter()
            .zip(rho.mean.ops())
            .map(|(v, r)| {
                let p = Operator::from_matrix((v * v.adjoint()) * c(-1.0, 0.0))?;
                Ok(trace_product(&p, &commutator(hu, r)?)?.im)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(trapezoid_bins(&node_vals))
    };
    let a: Vec<Vec<f64>> = psi_paths.iter().map(a_nodes).collect::<Result<_>>()?;
    let b: Vec<Vec<f64>> = pi_paths.iter().map(b_nodes).collect::<Result<_>>()?;
    let (_, ea) = columns_stats(&a);
    let (_, eb) = columns_stats(&b);
    let std_err = ea.iter().zip(&eb).map(|(x, y)| (x * x + y * y).sqrt()).collect();

    let curve = SwitchingCurve::on_bins(spec.dt(), values)?;
    Ok(Procedure1 { rho, lambda, phi: CurveEstimate { n: cfg.n, curve, std_err } })
}

/// c-Hamiltonian from the procedure-1 density-matrix estimates.
pub fn c_hamiltonian_procedure1(spec: &ProblemSpec, u: &ControlSchedule, est: &Procedure1) -> Result<SwitchingCurve> {
    lindblad::c_hamiltonian(&est.rho.mean, &est.lambda.mean, spec, u)
}

/// Real or imaginary part of a correlated form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// Correlated-pair estimates sharing one set of trajectories.
#[derive(Debug, Clone)]
pub struct CorrelatedEstimate {
    /// Per-bin estimate of the requested trace form.
    pub curve: CurveEstimate,
    /// `C ≈ -(1/N) Σ |<psi_tar|psi_n(t_f)>|²`
    pub cost: ScalarEstimate,
}

/// Per-bin operator for [`correlated_average`].
#[derive(Debug, Clone)]
pub enum BinOperator {
    Fixed(Operator),
    /// One operator per bin, e.g. `H(t)`.
    PerBin(Vec<Operator>),
}

/// Correlated average of `part(<pi_n|A|psi_n>)` over pairs that share the
/// jump record, with `pi_n(t_f) = -|psi_tar><psi_tar|psi_n(t_f)>`.
///
/// The returned curve estimates `Im Tr[lambda [A, rho]]` (for `Part::Im`) or
/// `Re Tr[lambda {A, rho}]` (for `Part::Re`). Each of those equals twice the
/// corresponding part of `E<pi|A|psi>`, so the per-trajectory values carry a
/// factor 2. Bins use the trapezoid of the values at their two edges, the
/// same convention as [`lindblad::switching_function`].
pub fn correlated_average(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    cfg: &EnsembleConfig,
    a: &BinOperator,
    part: Part,
) -> Result<CorrelatedEstimate> {
    cfg.validate()?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let ops: Vec<&DMatrix<Complex64>> = match a {
        BinOperator::Fixed(op) => {
            check_dims(op.dim(), spec.dim())?;
            vec![op.matrix(); unr.n_bins()]
        }
        BinOperator::PerBin(v) => {
            if v.len() != unr.n_bins() {
                return Err(Error::GridMismatch { expected: unr.n_bins(), got: v.len() });
            }
            for op in v {
                check_dims(op.dim(), spec.dim())?;
            }
            v.iter().map(Operator::matrix).collect()
        }
    };
    let pick = |z: Complex64| match part {
        Part::Re => z.re,
        Part::Im => z.im,
    };
    let psi_ini = spec.psi_ini().vector();
    let tar = spec.psi_tar().vector();
    let per_traj: Vec<(Vec<f64>, f64)> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|k| {
            let jr = unr.realization(cfg.master_seed, StreamDomain::Paired, k)?;
            let psi = unr.forward_vectors(&jr, &StateVector::from_vector(psi_ini.clone()));
            let amp = tar.dotc(&psi[unr.n_bins()]);
            let pi = unr.backward_vectors(&jr, &(tar * (-amp)));
            let vals = unr
                .bin_forms(&jr, &psi, &pi, &ops)
                .into_iter()
                .map(|(l, r)| pick(l) + pick(r))
                .collect();
            Ok((vals, -amp.norm_sqr()))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = per_traj.iter().map(|(v, _)| v.clone()).collect();
    let (means, errs) = columns_stats(&rows);
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("correlated_average"));
    }
    let (cost_mean, cost_err) = mean_and_stderr(per_traj.iter().map(|(_, c)| *c));
    Ok(CorrelatedEstimate {
        curve: CurveEstimate { n: cfg.n, curve: SwitchingCurve::on_bins(spec.dt(), means)?, std_err: errs },
        cost: ScalarEstimate { n: cfg.n, mean: cost_mean, std_err: cost_err },
    })
}

/// Switching function from correlated pairs (no density matrix is formed).
pub fn switching_procedure2(spec: &ProblemSpec, u: &ControlSchedule, cfg: &EnsembleConfig) -> Result<CorrelatedEstimate> {
    correlated_average(spec, u, cfg, &BinOperator::Fixed(spec.hu().clone()), Part::Im)
}

/// Alias kept for callers that only need the generalized forms.
pub fn bilinear_average(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    cfg: &EnsembleConfig,
    a: &BinOperator,
    part: Part,
) -> Result<CurveEstimate> {
    Ok(correlated_average(spec, u, cfg, a, part)?.curve)
}

/// Terminal cost averaged over forward trajectories (paired stream domain).
pub fn stochastic_cost(spec: &ProblemSpec, u: &ControlSchedule, cfg: &EnsembleConfig) -> Result<ScalarEstimate> {
    cfg.validate()?;
    let unr = Unraveling::new(spec, u, cfg.drift)?;
    let tar = spec.psi_tar().vector();
    let costs: Vec<f64> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|k| {
            let jr = unr.realization(cfg.master_seed, StreamDomain::Paired, k)?;
            let psi = unr.forward_vectors(&jr, spec.psi_ini());
            Ok(-tar.dotc(&psi[unr.n_bins()]).norm_sqr())
        })
        .collect::<Result<_>>()?;
    let (mean, std_err) = mean_and_stderr(costs.iter().copied());
    Ok(ScalarEstimate { n: cfg.n, mean, std_err })
}

/// Draws eigenvector `k` of `rho_ini` with probability equal to its eigenvalue.
pub fn sample_initial_state(rho_ini: &Operator, seed: u64) -> Result<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_initial_state_with(rho_ini, &mut rng)
}

pub fn sample_initial_state_with<R: Rng + ?Sized>(rho_ini: &Operator, rng: &mut R) -> Result<StateVector> {
    const TOL: f64 = 1e-10;
    if !rho_ini.is_hermitian(TOL_ALGEBRA.max(TOL)) {
        return Err(Error::InvalidArgument("initial density matrix is not Hermitian".into()));
    }
    if !rho_ini.has_unit_trace(TOL) {
        return Err(Error::InvalidArgument("initial density matrix does not have unit trace".into()));
    }
    let (values, vectors) = rho_ini.hermitian_eigen();
    if values.iter().any(|&v| v < -TOL) {
        return Err(Error::InvalidArgument("initial density matrix is not positive semidefinite".into()));
    }
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let last = values.iter().rposition(|&v| v > 0.0).unwrap_or(values.len() - 1);
    for (k, &v) in values.iter().enumerate() {
        acc += v.max(0.0);
        if x < acc {
            return Ok(vectors[k].clone());
        }
    }
    Ok(vectors[last].clone())
}
