//! Deterministic reference engine: forward Lindblad propagation of the state,
//! backward propagation of the costate, and the PMP quantities built from them.
//!
//! Each constant-control bin is advanced by the exact exponential of the
//! vectorized Liouvillian, so the only discretization is the piecewise-constant
//! control itself. The costate uses the Hilbert-Schmidt adjoint of the same
//! bin propagator, which makes `Tr[lambda(t) rho(t)]` exactly conserved.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    adjoint_dissipator, c, commutator, dissipator, expectation_form, expm, trace_product, Operator,
    StateVector, TOL_ALGEBRA,
};
use crate::error::{check_dims, Error, Result};
use crate::problem::{ControlSchedule, ProblemSpec};

/// Where the samples of a per-bin curve sit inside the bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleConvention {
    /// Mean of the two node values bounding the bin, stamped at the bin midpoint.
    BinTrapezoid,
    /// Value at the bin's left node, using that bin's control.
    LeftNode,
}

/// Operators sampled on the grid nodes `t_0 .. t_{n_bins}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorPath {
    times: Vec<f64>,
    ops: Vec<Operator>,
}

impl OperatorPath {
    pub fn new(times: Vec<f64>, ops: Vec<Operator>) -> Result<Self> {
        if times.len() != ops.len() || times.len() < 2 {
            return Err(Error::GridMismatch { expected: times.len(), got: ops.len() });
        }
        let d = ops[0].dim();
        for op in &ops {
            check_dims(op.dim(), d)?;
        }
        Ok(Self { times, ops })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn n_bins(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn first(&self) -> &Operator {
        &self.ops[0]
    }

    pub fn last(&self) -> &Operator {
        &self.ops[self.ops.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.ops[0].dim()
    }

    /// Largest entrywise deviation between two paths on the same grid.
    pub fn max_abs_diff(&self, other: &OperatorPath) -> Result<f64> {
        if self.ops.len() != other.ops.len() {
            return Err(Error::GridMismatch { expected: self.ops.len(), got: other.ops.len() });
        }
        Ok(self.ops.iter().zip(&other.ops).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max))
    }
}

/// A real per-bin curve such as the switching function or the c-Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    convention: SampleConvention,
}

impl SwitchingCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>, convention: SampleConvention) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::GridMismatch { expected: times.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("switching curve"));
        }
        Ok(Self { times, values, convention })
    }

    /// Curve on the bin midpoints of a uniform grid.
    pub fn on_bins(dt: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|i| (i as f64 + 0.5) * dt).collect();
        Self::new(times, values, SampleConvention::BinTrapezoid)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn convention(&self) -> SampleConvention {
        self.convention
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::GridMismatch { expected: self.values.len(), got: values.len() });
        }
        Self::new(self.times.clone(), values, self.convention)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationOptions {
    /// Each bin is split into this many equal exponential steps.
    pub substeps: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

/// Column-stacked superoperator of `-i[H, .] + gamma (L . L† - ½{L†L, .})`.
///
/// Uses `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
pub fn liouvillian(h: &Operator, l: &Operator, gamma: f64) -> Result<DMatrix<Complex64>> {
    check_dims(h.dim(), l.dim())?;
    let d = h.dim();
    let id = DMatrix::<Complex64>::identity(d, d);
    let hm = h.matrix();
    let lm = l.matrix();
    let ldl = lm.adjoint() * lm;
    let mi = c(0.0, -1.0);
    let g = c(gamma, 0.0);
    let half = c(0.5, 0.0);
    let unitary = (id.kronecker(hm) - hm.transpose().kronecker(&id)) * mi;
    let jump = lm.conjugate().kronecker(lm);
    let anti = id.kronecker(&ldl) + ldl.transpose().kronecker(&id);
    Ok(unitary + (jump - anti * half) * g)
}

/// Per-bin propagators `exp(L_i dt)` for the given control.
pub fn bin_propagators(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    opts: PropagationOptions,
) -> Result<Vec<DMatrix<Complex64>>> {
    spec.check_schedule(u)?;
    if opts.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    let h = spec.dt() / opts.substeps as f64;
    u.values()
        .iter()
        .map(|&ui| {
            let gen = liouvillian(&spec.hamiltonian_at(ui), spec.l(), spec.gamma())?;
            let step = expm(&(gen * c(h, 0.0)));
            let mut prop = step.clone();
            for _ in 1..opts.substeps {
                prop = &step * prop;
            }
            Ok(prop)
        })
        .collect()
}

fn forward_from(
    spec: &ProblemSpec,
    rho0: &Operator,
    props: &[DMatrix<Complex64>],
) -> Result<OperatorPath> {
    let d = spec.dim();
    let mut ops = Vec::with_capacity(props.len() + 1);
    ops.push(rho0.clone());
    let mut v = rho0.vectorize();
    for p in props {
        v = p * v;
        ops.push(Operator::unvectorize(&v, d)?);
    }
    if !ops.last().is_some_and(Operator::is_finite) {
        return Err(Error::NonFinite("propagate_rho"));
    }
    OperatorPath::new(spec.times(), ops)
}

fn backward_from(
    spec: &ProblemSpec,
    boundary: &Operator,
    props: &[DMatrix<Complex64>],
) -> Result<OperatorPath> {
    let d = spec.dim();
    let mut ops = Vec::with_capacity(props.len() + 1);
    ops.push(boundary.clone());
    let mut v = boundary.vectorize();
    for p in props.iter().rev() {
        v = p.ad_mul(&v);
        ops.push(Operator::unvectorize(&v, d)?);
    }
    ops.reverse();
    if !ops[0].is_finite() {
        return Err(Error::NonFinite("propagate_costate"));
    }
    OperatorPath::new(spec.times(), ops)
}

/// Forward state path from `rho(t_0) = |psi_ini><psi_ini|`.
pub fn propagate_rho(spec: &ProblemSpec, u: &ControlSchedule) -> Result<OperatorPath> {
    propagate_rho_with(spec, u, PropagationOptions::default())
}

pub fn propagate_rho_with(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    opts: PropagationOptions,
) -> Result<OperatorPath> {
    propagate_rho_from(spec, u, &spec.rho_ini(), opts)
}

/// Forward state path from an arbitrary initial density matrix.
pub fn propagate_rho_from(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    rho0: &Operator,
    opts: PropagationOptions,
) -> Result<OperatorPath> {
    check_dims(rho0.dim(), spec.dim())?;
    let props = bin_propagators(spec, u, opts)?;
    forward_from(spec, rho0, &props)
}

/// Backward costate path with `lambda(t_f) = boundary`, evolving under
/// `d lambda/dt = -(i[H, lambda] + gamma (L† lambda L - ½{L†L, lambda}))`.
pub fn propagate_costate(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    boundary: &Operator,
) -> Result<OperatorPath> {
    propagate_costate_with(spec, u, boundary, PropagationOptions::default())
}

pub fn propagate_costate_with(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    boundary: &Operator,
    opts: PropagationOptions,
) -> Result<OperatorPath> {
    check_dims(boundary.dim(), spec.dim())?;
    if !boundary.is_hermitian(TOL_ALGEBRA) {
        return Err(Error::InvalidArgument("costate boundary must be Hermitian".into()));
    }
    let props = bin_propagators(spec, u, opts)?;
    backward_from(spec, boundary, &props)
}

/// `-|psi_tar><psi_tar|`, the costate boundary of the fidelity cost.
pub fn fidelity_boundary(spec: &ProblemSpec) -> Operator {
    -&spec.rho_tar()
}

fn check_same_grid(a: &OperatorPath, b: &OperatorPath) -> Result<()> {
    if a.ops.len() != b.ops.len() {
        return Err(Error::GridMismatch { expected: a.ops.len(), got: b.ops.len() });
    }
    check_dims(a.dim(), b.dim())
}

/// `Im Tr[lambda [A, rho]]` at every grid node.
pub fn commutator_form_nodes(
    rho_path: &OperatorPath,
    lam_path: &OperatorPath,
    a: &Operator,
) -> Result<Vec<f64>> {
    check_same_grid(rho_path, lam_path)?;
    rho_path
        .ops
        .iter()
        .zip(&lam_path.ops)
        .map(|(rho, lam)| Ok(trace_product(lam, &commutator(a, rho)?)?.im))
        .collect()
}

/// Averages node values pairwise into per-bin values.
pub fn trapezoid_bins(nodes: &[f64]) -> Vec<f64> {
    nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Switching function `Phi = Im Tr[lambda [Hu, rho]]`.
///
/// Each bin carries the mean of the node values at its two edges, which is a
/// second-order estimate of the bin average and hence of `dC/du_i / dt`.
pub fn switching_function(
    rho_path: &OperatorPath,
    lam_path: &OperatorPath,
    hu: &Operator,
) -> Result<SwitchingCurve> {
    let nodes = commutator_form_nodes(rho_path, lam_path, hu)?;
    let times = rho_path.times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    SwitchingCurve::new(times, trapezoid_bins(&nodes), SampleConvention::BinTrapezoid)
}

fn hc_state_side(lam: &Operator, rho: &Operator, h: &Operator, l: &Operator, gamma: f64) -> Result<f64> {
    let unitary = trace_product(lam, &commutator(h, rho)?)?.im;
    let diss = trace_product(lam, &dissipator(l, rho)?)?.re;
    Ok(unitary + gamma * diss)
}

fn hc_costate_side(lam: &Operator, rho: &Operator, h: &Operator, l: &Operator, gamma: f64) -> Result<f64> {
    let unitary = -trace_product(rho, &commutator(h, lam)?)?.im;
    let diss = trace_product(rho, &adjoint_dissipator(l, lam)?)?.re;
    Ok(unitary + gamma * diss)
}

fn c_hamiltonian_by(
    rho_path: &OperatorPath,
    lam_path: &OperatorPath,
    spec: &ProblemSpec,
    u: &ControlSchedule,
    form: fn(&Operator, &Operator, &Operator, &Operator, f64) -> Result<f64>,
) -> Result<SwitchingCurve> {
    check_same_grid(rho_path, lam_path)?;
    spec.check_schedule(u)?;
    if rho_path.n_bins() != u.n_bins() {
        return Err(Error::GridMismatch { expected: u.n_bins(), got: rho_path.n_bins() });
    }
    let values = u
        .values()
        .iter()
        .enumerate()
        .map(|(i, &ui)| form(&lam_path.ops[i], &rho_path.ops[i], &spec.hamiltonian_at(ui), spec.l(), spec.gamma()))
        .collect::<Result<Vec<_>>>()?;
    SwitchingCurve::new(rho_path.times[..u.n_bins()].to_vec(), values, SampleConvention::LeftNode)
}

/// c-Hamiltonian `Tr[lambda L_t[rho]]` per bin, from the state-side trace forms.
///
/// Within a constant-control bin this quantity is exactly constant, so it is
/// sampled at the left node with that bin's control.
pub fn c_hamiltonian(
    rho_path: &OperatorPath,
    lam_path: &OperatorPath,
    spec: &ProblemSpec,
    u: &ControlSchedule,
) -> Result<SwitchingCurve> {
    c_hamiltonian_by(rho_path, lam_path, spec, u, hc_state_side)
}

/// Same quantity through the costate-side forms (trace cyclicity).
pub fn c_hamiltonian_dual(
    rho_path: &OperatorPath,
    lam_path: &OperatorPath,
    spec: &ProblemSpec,
    u: &ControlSchedule,
) -> Result<SwitchingCurve> {
    c_hamiltonian_by(rho_path, lam_path, spec, u, hc_costate_side)
}

/// `C = -<psi_tar| rho |psi_tar>`.
pub fn terminal_cost(rho_final: &Operator, psi_tar: &StateVector) -> Result<f64> {
    Ok(-expectation_form(psi_tar, rho_final, psi_tar)?.re)
}

/// Terminal cost of a control.
pub fn cost(spec: &ProblemSpec, u: &ControlSchedule) -> Result<f64> {
    let props = bin_propagators(spec, u, PropagationOptions::default())?;
    let mut v = spec.rho_ini().vectorize();
    for p in &props {
        v = p * v;
    }
    terminal_cost(&Operator::unvectorize(&v, spec.dim())?, spec.psi_tar())
}

/// Central-difference estimate of `dC/du_bin / dt`.
pub fn finite_difference_gradient(
    spec: &ProblemSpec,
    u: &ControlSchedule,
    bin_index: usize,
    delta: f64,
) -> Result<f64> {
    spec.check_schedule(u)?;
    if bin_index >= u.n_bins() {
        return Err(Error::InvalidArgument(format!(
            "bin index {bin_index} out of range for {} bins",
            u.n_bins()
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    let shifted = |s: f64| {
        let mut v = u.values().to_vec();
        v[bin_index] += s;
        u.with_values(v)
    };
    let plus = cost(spec, &shifted(delta)?)?;
    let minus = cost(spec, &shifted(-delta)?)?;
    Ok((plus - minus) / (2.0 * delta * u.dt()))
}

/// Everything the deterministic engine produces for one control.
#[derive(Debug, Clone)]
pub struct Solution {
    pub rho: OperatorPath,
    pub lambda: OperatorPath,
    pub phi: SwitchingCurve,
    pub cost: f64,
}

/// State, costate (fidelity boundary), switching function and cost in one pass.
pub fn solve(spec: &ProblemSpec, u: &ControlSchedule) -> Result<Solution> {
    solve_with(spec, u, PropagationOptions::default())
}

pub fn solve_with(spec: &ProblemSpec, u: &ControlSchedule, opts: PropagationOptions) -> Result<Solution> {
    let props = bin_propagators(spec, u, opts)?;
    let rho = forward_from(spec, &spec.rho_ini(), &props)?;
    let lambda = backward_from(spec, &fidelity_boundary(spec), &props)?;
    let phi = switching_function(&rho, &lambda, spec.hu())?;
    let cost = terminal_cost(rho.last(), spec.psi_tar())?;
    Ok(Solution { rho, lambda, phi, cost })
}

/// Bang-control reading of a switching function.
#[derive(Debug, Clone, PartialEq)]
pub struct BangControl {
    pub control: ControlSchedule,
    /// Bins where `|Phi|` is at or below the threshold; their values are
    /// copied from the caller's previous control.
    pub singular: Vec<bool>,
}

pub const DEFAULT_SINGULAR_THRESHOLD: f64 = 1e-3;

/// `u = -u_max sign(Phi)` where `|Phi| > threshold * max|Phi|`; other bins are
/// flagged singular and keep their value from `previous`.
pub fn bang_from_phi(
    phi: &SwitchingCurve,
    threshold: f64,
    u_max: f64,
    previous: &ControlSchedule,
) -> Result<BangControl> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    if previous.n_bins() != phi.len() {
        return Err(Error::GridMismatch { expected: phi.len(), got: previous.n_bins() });
    }
    let cut = threshold * phi.max_abs();
    let mut singular = Vec::with_capacity(phi.len());
    let values = phi
        .values()
        .iter()
        .zip(previous.values())
        .map(|(&p, &prev)| {
            let s = p.abs() <= cut;
            singular.push(s);
            if s {
                prev
            } else {
                -u_max * p.signum()
            }
        })
        .collect();
    Ok(BangControl { control: previous.with_values(values)?, singular })
}
