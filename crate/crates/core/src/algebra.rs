//! Dense complex operator and state-vector algebra for small Hilbert spaces.
//!
//! Everything here is a pure function of its inputs. Operators are stored as
//! dense `dim x dim` matrices; there is no sparse path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{check_dims, Error, Result};

/// Tolerance used for algebraic identities (Hermiticity, trace, duality).
pub const TOL_ALGEBRA: f64 = 1e-12;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A dense square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(DMatrix<Complex64>);

/// A (not necessarily normalized) state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<Complex64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "operator must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(m))
    }

    /// Builds an operator from row-major entries.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("operator rows must form a square".into()));
        }
        Self::from_matrix(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c(values[i], 0.0)
            } else {
                c(0.0, 0.0)
            }
        }))
    }

    pub fn sigma_x() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]))
    }

    pub fn sigma_y() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]))
    }

    pub fn sigma_z() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]))
    }

    /// `|a><b|`
    pub fn outer(a: &StateVector, b: &StateVector) -> Self {
        Self(&a.0 * b.0.adjoint())
    }

    /// `|psi><psi|`
    pub fn projector(psi: &StateVector) -> Self {
        Self::outer(psi, psi)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self(&self.0 * s)
    }

    pub fn matmul(&self, other: &Operator) -> Result<Operator> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(&self.0 * &other.0))
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        check_dims(self.dim(), psi.dim())?;
        Ok(StateVector(&self.0 * &psi.0))
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| (self.0[(i, j)] - self.0[(j, i)].conj()).norm() <= tol))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.0 + self.0.adjoint()) * c(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Hermitian eigendecomposition: `(eigenvalues, eigenvectors)` in ascending order.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, Vec<StateVector>) {
        let herm = (&self.0 + self.0.adjoint()) * c(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        let mut idx: Vec<usize> = (0..self.dim()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = idx
            .iter()
            .map(|&k| StateVector(eig.eigenvectors.column(k).into_owned()))
            .collect();
        (values, vectors)
    }

    /// Hermitian and with smallest eigenvalue `>= -tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.is_hermitian(tol.max(TOL_ALGEBRA))
            && self.hermitian_eigenvalues().first().copied().unwrap_or(0.0) >= -tol
    }

    pub fn has_unit_trace(&self, tol: f64) -> bool {
        (self.trace() - c(1.0, 0.0)).norm() <= tol
    }

    /// Bloch vector `(Tr[rho sx], Tr[rho sy], Tr[rho sz])` of a qubit operator.
    pub fn bloch_vector(&self) -> Result<[f64; 3]> {
        check_dims(self.dim(), 2)?;
        let comp = |p: Operator| (&self.0 * p.0).trace().re;
        Ok([comp(Self::sigma_x()), comp(Self::sigma_y()), comp(Self::sigma_z())])
    }

    /// Column-stacked vectorization, `vec(A)[i + d*j] = A[i, j]`.
    pub fn vectorize(&self) -> DVector<Complex64> {
        DVector::from_column_slice(self.0.as_slice())
    }

    pub fn unvectorize(v: &DVector<Complex64>, dim: usize) -> Result<Self> {
        check_dims(v.len(), dim * dim)?;
        Ok(Self(DMatrix::from_column_slice(dim, dim, v.as_slice())))
    }
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidArgument("state vector must be non-empty".into()));
        }
        Ok(Self(DVector::from_vec(amplitudes)))
    }

    pub fn from_vector(v: DVector<Complex64>) -> Self {
        Self(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    /// Computational basis vector `e_k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[k] = c(1.0, 0.0);
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn vector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self(self.0.map(|z| z / n)))
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        Self(&self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    check_dims(a.dim(), b.dim())?;
    Ok(Operator(&a.0 * &b.0 - &b.0 * &a.0))
}

pub fn anticommutator(a: &Operator, b: &Operator) -> Result<Operator> {
    check_dims(a.dim(), b.dim())?;
    Ok(Operator(&a.0 * &b.0 + &b.0 * &a.0))
}

/// `L rho L† - ½{L†L, rho}`
pub fn dissipator(l: &Operator, rho: &Operator) -> Result<Operator> {
    check_dims(l.dim(), rho.dim())?;
    let ld = l.0.adjoint();
    let ldl = &ld * &l.0;
    let sandwich = &l.0 * &rho.0 * &ld;
    let anti = &ldl * &rho.0 + &rho.0 * &ldl;
    Ok(Operator(sandwich - anti * c(0.5, 0.0)))
}

/// `L† lam L - ½{L†L, lam}`: the Heisenberg-picture dual of [`dissipator`].
pub fn adjoint_dissipator(l: &Operator, lam: &Operator) -> Result<Operator> {
    check_dims(l.dim(), lam.dim())?;
    let ld = l.0.adjoint();
    let ldl = &ld * &l.0;
    let sandwich = &ld * &lam.0 * &l.0;
    let anti = &ldl * &lam.0 + &lam.0 * &ldl;
    Ok(Operator(sandwich - anti * c(0.5, 0.0)))
}

/// `Tr[a b]` without forming the product.
pub fn trace_product(a: &Operator, b: &Operator) -> Result<Complex64> {
    check_dims(a.dim(), b.dim())?;
    let d = a.dim();
    let mut acc = c(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += a.0[(i, j)] * b.0[(j, i)];
        }
    }
    Ok(acc)
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.0.dotc(&b.0))
}

/// `<pi|A|psi>`
pub fn expectation_form(pi: &StateVector, a: &Operator, psi: &StateVector) -> Result<Complex64> {
    check_dims(pi.dim(), a.dim())?;
    check_dims(a.dim(), psi.dim())?;
    Ok(pi.0.dotc(&(&a.0 * &psi.0)))
}

/// Matrix exponential of a dense complex matrix (Padé with scaling and squaring).
pub fn expm(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    m.clone().exp()
}

// JSON form: nested arrays of `[re, im]` pairs, rows outermost.

fn pairs_of(z: &[Complex64]) -> Vec<[f64; 2]> {
    z.iter().map(|z| [z.re, z.im]).collect()
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let rows: Vec<Vec<[f64; 2]>> = (0..d)
            .map(|i| (0..d).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let rows: Vec<Vec<Complex64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| c(re, im)).collect())
            .collect();
        Operator::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        pairs_of(self.0.as_slice()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        StateVector::new(pairs.into_iter().map(|[re, im]| c(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sx() -> Operator {
        Operator::sigma_x()
    }
    fn sy() -> Operator {
        Operator::sigma_y()
    }
    fn sz() -> Operator {
        Operator::sigma_z()
    }
    fn p0() -> Operator {
        // ½(1 + σz)
        (&Operator::identity(2) + &sz()).scale(0.5)
    }

    // Explicit 2x2 product, independent of nalgebra's multiply.
    fn mul2(a: &Operator, b: &Operator) -> [[Complex64; 2]; 2] {
        let mut out = [[c(0., 0.); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = a.get(i, 0) * b.get(0, j) + a.get(i, 1) * b.get(1, j);
            }
        }
        out
    }

    fn assert_op_eq(a: &Operator, b: &Operator) {
        assert!(a.max_abs_diff(b) <= 1e-14, "{a:?} != {b:?}");
    }

    #[test]
    fn commutator_examples() {
        assert_op_eq(&commutator(&sx(), &sx()).unwrap(), &Operator::zeros(2));
        assert_op_eq(&commutator(&sx(), &sz()).unwrap(), &sy().scale_complex(c(0., -2.)));

        let a = &sx() + &sz();
        let ab = mul2(&a, &p0());
        let ba = mul2(&p0(), &a);
        let expected = Operator::from_rows(&[
            vec![ab[0][0] - ba[0][0], ab[0][1] - ba[0][1]],
            vec![ab[1][0] - ba[1][0], ab[1][1] - ba[1][1]],
        ])
        .unwrap();
        let got = commutator(&a, &p0()).unwrap();
        assert_op_eq(&got, &expected);
        // [[0,-1],[1,0]]
        assert_op_eq(
            &got,
            &Operator::from_rows(&[vec![c(0., 0.), c(-1., 0.)], vec![c(1., 0.), c(0., 0.)]]).unwrap(),
        );
    }

    #[test]
    fn anticommutator_examples() {
        let rho = Operator::from_rows(&[vec![c(0.3, 0.), c(0.1, 0.2)], vec![c(0.1, -0.2), c(0.7, 0.)]]).unwrap();
        assert_op_eq(&anticommutator(&Operator::identity(2), &rho).unwrap(), &rho.scale(2.0));
        assert_op_eq(&anticommutator(&sx(), &sy()).unwrap(), &Operator::zeros(2));
        let ab = mul2(&sx(), &p0());
        let ba = mul2(&p0(), &sx());
        let expected = Operator::from_rows(&[
            vec![ab[0][0] + ba[0][0], ab[0][1] + ba[0][1]],
            vec![ab[1][0] + ba[1][0], ab[1][1] + ba[1][1]],
        ])
        .unwrap();
        assert_op_eq(&anticommutator(&sx(), &p0()).unwrap(), &expected);
        assert_op_eq(&expected, &sx());
    }

    #[test]
    fn dissipator_examples() {
        let px = (&Operator::identity(2) + &sx()).scale(0.5);
        assert_op_eq(&dissipator(&sx(), &px).unwrap(), &Operator::zeros(2));
        let d = dissipator(&sx(), &p0()).unwrap();
        assert_op_eq(&d, &(-&sz()));
        assert!(d.trace().norm() < 1e-15);
        let rho = Operator::from_rows(&[vec![c(0.3, 0.), c(0.1, 0.2)], vec![c(0.1, -0.2), c(0.7, 0.)]]).unwrap();
        assert_op_eq(&dissipator(&Operator::identity(2), &rho).unwrap(), &Operator::zeros(2));
    }

    #[test]
    fn adjoint_dissipator_examples() {
        let l = Operator::from_rows(&[vec![c(0.2, 0.1), c(1.0, -0.3)], vec![c(0.0, 0.5), c(-0.4, 0.)]]).unwrap();
        assert_op_eq(&adjoint_dissipator(&l, &Operator::identity(2)).unwrap(), &Operator::zeros(2));
        assert_op_eq(&adjoint_dissipator(&sx(), &p0()).unwrap(), &(-&sz()));
        assert_op_eq(&adjoint_dissipator(&sx(), &sx()).unwrap(), &Operator::zeros(2));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = commutator(&sx(), &Operator::identity(3)).unwrap_err();
        assert_eq!(e, Error::DimensionMismatch { left: 2, right: 3 });
        assert!(anticommutator(&sx(), &Operator::identity(3)).is_err());
        assert!(dissipator(&sx(), &Operator::identity(3)).is_err());
        assert!(adjoint_dissipator(&sx(), &Operator::identity(3)).is_err());
        assert!(overlap(&StateVector::basis(2, 0), &StateVector::basis(3, 0)).is_err());
        assert!(expectation_form(&StateVector::basis(2, 0), &Operator::identity(3), &StateVector::basis(2, 0)).is_err());
    }

    #[test]
    fn overlap_examples() {
        let e0 = StateVector::basis(2, 0);
        let e1 = StateVector::basis(2, 1);
        assert_eq!(overlap(&e0, &e0).unwrap(), c(1., 0.));
        assert_eq!(overlap(&e0, &e1).unwrap(), c(0., 0.));
        // conjugate-linear in the first slot
        let a = StateVector::new(vec![c(0., 1.), c(0., 0.)]).unwrap();
        assert_eq!(overlap(&a, &e0).unwrap(), c(0., -1.));
    }

    #[test]
    fn expectation_form_examples() {
        let psi = StateVector::new(vec![c(0.6, 0.2), c(-0.1, 0.5)]).unwrap();
        let v = expectation_form(&psi, &Operator::identity(2), &psi).unwrap();
        assert_abs_diff_eq!(v.re, psi.norm().powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
        let e0 = StateVector::basis(2, 0);
        assert_eq!(expectation_form(&e0, &sz(), &e0).unwrap(), c(1., 0.));
        // π = (1, i)/√2, ψ = (1, 1)/√2: <π| = (1, -i)/√2, σz ψ = (1, -1)/√2, product (1 + i)/2
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let pi = StateVector::new(vec![c(h, 0.), c(0., h)]).unwrap();
        let psi = StateVector::new(vec![c(h, 0.), c(h, 0.)]).unwrap();
        let v = expectation_form(&pi, &sz(), &psi).unwrap();
        assert_abs_diff_eq!(v.re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.im, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn expm_matches_spectral_exponential() {
        // exp(-i H t) for Hermitian H via eigendecomposition
        let h = &sx() + &sz().scale(0.7);
        let t = 1.3;
        let got = expm(&(h.matrix() * c(0., -t)));
        let (vals, vecs) = h.hermitian_eigen();
        let mut want = DMatrix::zeros(2, 2);
        for (v, w) in vals.iter().zip(&vecs) {
            want += w.vector() * w.vector().adjoint() * (c(0., -t * v)).exp();
        }
        assert!((got - want).iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn json_round_trip_shape() {
        let op = Operator::from_rows(&[vec![c(1., 2.), c(3., 4.)], vec![c(5., 6.), c(7., 8.)]]).unwrap();
        let s = serde_json::to_string(&op).unwrap();
        assert_eq!(s, "[[[1.0,2.0],[3.0,4.0]],[[5.0,6.0],[7.0,8.0]]]");
        let back: Operator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, op);
        let psi = StateVector::new(vec![c(0.5, -0.5), c(0., 1.)]).unwrap();
        let s = serde_json::to_string(&psi).unwrap();
        assert_eq!(s, "[[0.5,-0.5],[0.0,1.0]]");
        assert!(serde_json::from_str::<Operator>("[[[1,0]],[[0,0]]]").is_err());
    }

    fn hermitian(dim: usize) -> impl Strategy<Value = Operator> {
        proptest::collection::vec(-1.0f64..1.0, 2 * dim * dim).prop_map(move |v| {
            let m = DMatrix::from_fn(dim, dim, |i, j| c(v[2 * (i * dim + j)], v[2 * (i * dim + j) + 1]));
            Operator((&m + m.adjoint()) * c(0.5, 0.))
        })
    }

    fn general(dim: usize) -> impl Strategy<Value = Operator> {
        proptest::collection::vec(-1.0f64..1.0, 2 * dim * dim).prop_map(move |v| {
            Operator(DMatrix::from_fn(dim, dim, |i, j| c(v[2 * (i * dim + j)], v[2 * (i * dim + j) + 1])))
        })
    }

    fn triple() -> impl Strategy<Value = (Operator, Operator, Operator, Operator)> {
        (2usize..=4).prop_flat_map(|d| (hermitian(d), hermitian(d), hermitian(d), general(d)))
    }

    proptest! {
        #[test]
        fn hermitian_commutator_forms_are_imaginary((lam, h, rho, _l) in triple()) {
            let comm = commutator(&h, &rho).unwrap();
            prop_assert!(comm.trace().norm() <= 1e-12);
            let form = trace_product(&lam, &comm).unwrap();
            prop_assert!(form.re.abs() <= 1e-12);
        }

        #[test]
        fn dissipator_is_traceless((_lam, _h, rho, l) in triple()) {
            prop_assert!(dissipator(&l, &rho).unwrap().trace().norm() <= 1e-12);
        }

        #[test]
        fn dissipator_duality((lam, _h, rho, l) in triple()) {
            let lhs = trace_product(&lam, &dissipator(&l, &rho).unwrap()).unwrap();
            let rhs = trace_product(&rho, &adjoint_dissipator(&l, &lam).unwrap()).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }

        #[test]
        fn adjoint_dissipator_is_unital((_lam, _h, rho, l) in triple()) {
            let id = Operator::identity(rho.dim());
            prop_assert_eq!(adjoint_dissipator(&l, &id).unwrap().max_abs(), 0.0);
        }
    }
}
