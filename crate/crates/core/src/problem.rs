//! Control problem definitions and the two single-qubit benchmark presets.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::algebra::{c, Operator, StateVector, TOL_ALGEBRA};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;

/// Basis used for the retention preset's state.
///
/// `Z` takes the state vector `(1, 0)` literally, i.e. `rho = ½(1 + σz)`.
/// `X` uses `rho = ½(1 + σx)` instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetentionBasis {
    #[default]
    Z,
    X,
}

/// A single-control, single-channel Lindblad control problem
/// `d rho/dt = -i[H0 + u Hu, rho] + gamma (L rho L† - ½{L†L, rho})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblemSpec", into = "RawProblemSpec")]
pub struct ProblemSpec {
    h0: Operator,
    hu: Operator,
    l: Operator,
    gamma: f64,
    psi_ini: StateVector,
    psi_tar: StateVector,
    t_f: f64,
    n_bins: usize,
    u_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawProblemSpec {
    h0: Operator,
    hu: Operator,
    l: Operator,
    gamma: f64,
    psi_ini: StateVector,
    psi_tar: StateVector,
    t_f: f64,
    n_bins: usize,
    u_max: f64,
}

impl TryFrom<RawProblemSpec> for ProblemSpec {
    type Error = Error;
    fn try_from(r: RawProblemSpec) -> Result<Self> {
        ProblemSpec::new(r.h0, r.hu, r.l, r.gamma, r.psi_ini, r.psi_tar, r.t_f, r.n_bins, r.u_max)
    }
}

impl From<ProblemSpec> for RawProblemSpec {
    fn from(p: ProblemSpec) -> Self {
        RawProblemSpec {
            h0: p.h0,
            hu: p.hu,
            l: p.l,
            gamma: p.gamma,
            psi_ini: p.psi_ini,
            psi_tar: p.psi_tar,
            t_f: p.t_f,
            n_bins: p.n_bins,
            u_max: p.u_max,
        }
    }
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h0: Operator,
        hu: Operator,
        l: Operator,
        gamma: f64,
        psi_ini: StateVector,
        psi_tar: StateVector,
        t_f: f64,
        n_bins: usize,
        u_max: f64,
    ) -> Result<Self> {
        let d = h0.dim();
        for (name, dim) in [
            ("hu", hu.dim()),
            ("l", l.dim()),
            ("psi_ini", psi_ini.dim()),
            ("psi_tar", psi_tar.dim()),
        ] {
            if dim != d {
                return Err(Error::InvalidProblem(format!("{name} has dimension {dim}, expected {d}")));
            }
        }
        if !h0.is_hermitian(TOL_ALGEBRA) {
            return Err(Error::InvalidProblem("h0 is not Hermitian".into()));
        }
        if !hu.is_hermitian(TOL_ALGEBRA) {
            return Err(Error::InvalidProblem("hu is not Hermitian".into()));
        }
        if !l.is_finite() {
            return Err(Error::InvalidProblem("l has non-finite entries".into()));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidProblem(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        for (name, psi) in [("psi_ini", &psi_ini), ("psi_tar", &psi_tar)] {
            if (psi.norm() - 1.0).abs() > TOL_ALGEBRA {
                return Err(Error::InvalidProblem(format!("{name} is not normalized (norm {})", psi.norm())));
            }
        }
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::InvalidProblem(format!("t_f must be > 0, got {t_f}")));
        }
        if n_bins == 0 {
            return Err(Error::InvalidProblem("n_bins must be positive".into()));
        }
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::InvalidProblem(format!("u_max must be > 0, got {u_max}")));
        }
        Ok(Self { h0, hu, l, gamma, psi_ini, psi_tar, t_f, n_bins, u_max })
    }

    pub fn h0(&self) -> &Operator {
        &self.h0
    }
    pub fn hu(&self) -> &Operator {
        &self.hu
    }
    pub fn l(&self) -> &Operator {
        &self.l
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn psi_ini(&self) -> &StateVector {
        &self.psi_ini
    }
    pub fn psi_tar(&self) -> &StateVector {
        &self.psi_tar
    }
    pub fn t_f(&self) -> f64 {
        self.t_f
    }
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn u_max(&self) -> f64 {
        self.u_max
    }
    pub fn dim(&self) -> usize {
        self.h0.dim()
    }
    pub fn dt(&self) -> f64 {
        self.t_f / self.n_bins as f64
    }

    /// Grid nodes `t_0 .. t_{n_bins}`.
    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_bins).map(|i| i as f64 * dt).collect()
    }

    pub fn rho_ini(&self) -> Operator {
        Operator::projector(&self.psi_ini)
    }

    pub fn rho_tar(&self) -> Operator {
        Operator::projector(&self.psi_tar)
    }

    pub fn with_bins(&self, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidProblem("n_bins must be positive".into()));
        }
        Ok(Self { n_bins, ..self.clone() })
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let s = self.clone();
        Self::new(s.h0, s.hu, s.l, gamma, s.psi_ini, s.psi_tar, s.t_f, s.n_bins, s.u_max)
    }

    pub fn with_states(&self, psi_ini: StateVector, psi_tar: StateVector) -> Result<Self> {
        let s = self.clone();
        Self::new(s.h0, s.hu, s.l, s.gamma, psi_ini, psi_tar, s.t_f, s.n_bins, s.u_max)
    }

    /// `H0 + u Hu`. Values beyond `u_max` are allowed here since optimizer
    /// intermediates may exceed the bound before projection.
    pub fn hamiltonian_at(&self, u: f64) -> Operator {
        &self.h0 + &self.hu.scale(u)
    }

    /// Checks that a control schedule lives on this problem's grid.
    pub fn check_schedule(&self, u: &ControlSchedule) -> Result<()> {
        if u.n_bins() != self.n_bins {
            return Err(Error::GridMismatch { expected: self.n_bins, got: u.n_bins() });
        }
        if (u.dt() - self.dt()).abs() > 1e-12 * self.dt().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "control dt {} does not match problem dt {}",
                u.dt(),
                self.dt()
            )));
        }
        Ok(())
    }
}

fn qubit_preset(psi_ini: StateVector, psi_tar: StateVector) -> ProblemSpec {
    ProblemSpec::new(
        Operator::sigma_x(),
        Operator::sigma_z(),
        Operator::sigma_x(),
        0.5,
        psi_ini,
        psi_tar,
        0.9 * PI,
        DEFAULT_BINS,
        1.0,
    )
    .expect("preset is valid")
}

/// State retention: `psi_ini = psi_tar = (1, 0)`.
pub fn make_retention_problem() -> ProblemSpec {
    make_retention_problem_in(RetentionBasis::Z)
}

pub fn make_retention_problem_in(basis: RetentionBasis) -> ProblemSpec {
    let psi = match basis {
        RetentionBasis::Z => StateVector::basis(2, 0),
        RetentionBasis::X => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            StateVector::new(vec![c(h, 0.0), c(h, 0.0)]).expect("non-empty")
        }
    };
    qubit_preset(psi.clone(), psi)
}

/// State preparation between the two states with Bloch vectors
/// `(-1/√5, 0, ∓2/√5)`.
pub fn make_preparation_problem() -> ProblemSpec {
    let s5 = 5f64.sqrt();
    let ni = (10.0 + 4.0 * s5).sqrt();
    let nt = (10.0 - 4.0 * s5).sqrt();
    let psi_ini = StateVector::new(vec![c(1.0 / ni, 0.0), c((-2.0 - s5) / ni, 0.0)]).expect("non-empty");
    let psi_tar = StateVector::new(vec![c(1.0 / nt, 0.0), c((2.0 - s5) / nt, 0.0)]).expect("non-empty");
    qubit_preset(psi_ini, psi_tar)
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Result<ProblemSpec> {
    match name {
        "retention" => Ok(make_retention_problem()),
        "retention-x" => Ok(make_retention_problem_in(RetentionBasis::X)),
        "preparation" => Ok(make_preparation_problem()),
        other => Err(Error::InvalidArgument(format!(
            "unknown problem preset '{other}' (expected retention, retention-x or preparation)"
        ))),
    }
}

/// Piecewise-constant control on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    values: Vec<f64>,
    dt: f64,
}

impl ControlSchedule {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("control schedule needs at least one bin".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control schedule"));
        }
        Ok(Self { values, dt })
    }

    pub fn constant(value: f64, t_f: f64, n_bins: usize) -> Result<Self> {
        Self::new(vec![value; n_bins], t_f / n_bins as f64)
    }

    pub fn zeros_for(spec: &ProblemSpec) -> Self {
        Self::constant(0.0, spec.t_f(), spec.n_bins()).expect("spec grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::GridMismatch { expected: self.values.len(), got: values.len() });
        }
        Self::new(values, self.dt)
    }

    pub fn max_abs_diff(&self, other: &ControlSchedule) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `u(t) = -1 + 2 Θ(t - t_f/2)`: first half `-1`, second half `+1`.
pub fn step_control(t_f: f64, n_bins: usize) -> Result<ControlSchedule> {
    if n_bins == 0 || n_bins % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "step control needs an even, positive number of bins, got {n_bins}"
        )));
    }
    let values = (0..n_bins).map(|i| if i < n_bins / 2 { -1.0 } else { 1.0 }).collect();
    ControlSchedule::new(values, t_f / n_bins as f64)
}
