//! Small dense symmetric matrices: Jacobi eigendecomposition, Cholesky,
//! quadratic-form norms and the two Frobenius projections used by the
//! feasibility engine.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::policy::Tolerances;

pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("quadratic form is negative ({0:e})")]
    NegativeQuadraticForm(f64),
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.values.len();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            let lam = f(self.values[k]);
            if lam == 0.0 {
                continue;
            }
            let q = self.vectors.column(k);
            for j in 0..n {
                let qj = lam * q[j];
                for i in 0..n {
                    out[(i, j)] += q[i] * qj;
                }
            }
        }
        SymMatrix::symmetrized(out)
    }
}

impl SymMatrix {
    /// Checks squareness, finiteness and symmetry, then stores `(M + Mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        Self::with_tolerance(m, Tolerances::default().symmetry)
    }

    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let asym = (&m - m.transpose()).amax();
        if asym > tol * scale {
            return Err(LinalgError::NotSymmetric(asym));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self, LinalgError> {
        if data.len() != n * n {
            return Err(LinalgError::DimensionMismatch {
                expected: n * n,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `v vᵀ`.
    pub fn outer(v: &Vector) -> Self {
        SymMatrix(v * v.transpose())
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &Vector) -> f64 {
        (x.transpose() * &self.0 * x)[(0, 0)]
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn eigen(&self) -> Result<SymEigen, LinalgError> {
        let tol = Tolerances::default();
        jacobi_eigen(&self.0, tol.jacobi_threshold, tol.jacobi_max_sweeps)
    }

    pub fn eigenvalues(&self) -> Result<Vector, LinalgError> {
        Ok(self.eigen()?.values)
    }

    /// Product of the eigenvalues.
    pub fn det(&self) -> Result<f64, LinalgError> {
        Ok(self.eigen()?.values.iter().product())
    }

    /// Upper-triangular `L` with `LᵀL = self`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>, LinalgError> {
        let min = self.eigen()?.min();
        if min <= 1e-12 {
            return Err(LinalgError::NotPositiveDefinite(min));
        }
        let n = self.order();
        let a = &self.0;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut diag = a[(i, i)];
            for k in 0..i {
                diag -= l[(k, i)] * l[(k, i)];
            }
            if diag <= 0.0 {
                return Err(LinalgError::NotPositiveDefinite(diag));
            }
            let d = diag.sqrt();
            l[(i, i)] = d;
            for j in i + 1..n {
                let mut v = a[(i, j)];
                for k in 0..i {
                    v -= l[(k, i)] * l[(k, j)];
                }
                l[(i, j)] = v / d;
            }
        }
        Ok(l)
    }

    /// Nearest matrix (in Frobenius norm) whose eigenvalues are all `>= 1`.
    pub fn project_psd_floor(&self) -> Result<SymMatrix, LinalgError> {
        let eig = self.eigen()?;
        if eig.min() >= 1.0 {
            return Ok(self.clone());
        }
        Ok(eig.recompose(|l| l.max(1.0)))
    }

    /// Nearest matrix with all eigenvalues `>= 1` and Frobenius norm at most
    /// `radius`.
    pub fn project_floor_ball(&self, radius: f64) -> Result<SymMatrix, LinalgError> {
        let eig = self.eigen()?;
        let mut values: Vec<f64> = eig.values.iter().copied().collect();
        project_floor_ball_values(&mut values, radius);
        let projected = SymEigen {
            values: Vector::from_vec(values),
            vectors: eig.vectors,
        };
        Ok(projected.recompose(|l| l))
    }

    /// Radial projection onto the Frobenius ball of radius `radius`.
    pub fn project_frobenius_ball(&self, radius: f64) -> SymMatrix {
        let norm = self.frobenius_norm();
        if norm <= radius {
            self.clone()
        } else {
            self.scale(radius / norm)
        }
    }
}

/// Euclidean projection of `values` onto `{v : v_i >= 1, ‖v‖ <= radius}`,
/// in place. Requires `radius >= sqrt(len)`.
///
/// The projection has the form `v_i = max(1, s·z_i)` for some
/// `s ∈ (0, 1]`; `s` is found by bisection and rounded toward the inside
/// of the ball.
pub fn project_floor_ball_values(values: &mut [f64], radius: f64) {
    let clamped_norm = |s: f64, z: &[f64]| -> f64 {
        z.iter().map(|&v| (s * v).max(1.0).powi(2)).sum::<f64>().sqrt()
    };
    if clamped_norm(1.0, values) <= radius {
        for v in values.iter_mut() {
            *v = v.max(1.0);
        }
        return;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clamped_norm(mid, values) <= radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for v in values.iter_mut() {
        *v = (lo * *v).max(1.0);
    }
}

/// `‖x‖_P = sqrt(xᵀ P x)` for positive semidefinite `P`.
pub fn p_norm(x: &Vector, p: &SymMatrix) -> Result<f64, LinalgError> {
    if x.len() != p.order() {
        return Err(LinalgError::DimensionMismatch {
            expected: p.order(),
            got: x.len(),
        });
    }
    let q = p.quad_form(x);
    if q >= 0.0 {
        Ok(q.sqrt())
    } else if q >= -1e-12 {
        Ok(0.0)
    } else {
        Err(LinalgError::NegativeQuadraticForm(q))
    }
}

/// Cyclic Jacobi rotations.
pub fn jacobi_eigen(
    m: &DMatrix<f64>,
    threshold: f64,
    max_sweeps: usize,
) -> Result<SymEigen, LinalgError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    // row-major working copy
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = threshold * norm;

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = off(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p * n + p] -= t * apq;
                a[q * n + q] += t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
        converged = off(&a) <= target;
    }
    if !converged {
        return Err(LinalgError::NoConvergence(max_sweeps));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[i * n + i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, k)] = v[r * n + i];
        }
    }
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(n: usize, data: &[f64]) -> SymMatrix {
        SymMatrix::from_row_slice(n, data).unwrap()
    }

    fn random_sym(n: usize, entries: &[f64]) -> SymMatrix {
        let m = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
        SymMatrix::symmetrized(m)
    }

    #[test]
    fn eigen_small_cases() {
        let e = SymMatrix::identity(2).eigen().unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0]);

        let e = SymMatrix::diagonal(&[4.0, 1.0]).eigen().unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 4.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-15);

        let e = sym(2, &[2.0, 1.0, 1.0, 2.0]).eigen().unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(LinalgError::NotSymmetric(_))));
        let m = DMatrix::from_row_slice(2, 3, &[0.0; 6]);
        assert!(matches!(SymMatrix::new(m), Err(LinalgError::NotSquare { .. })));
    }

    #[test]
    fn cholesky_cases() {
        let l = SymMatrix::identity(3).cholesky().unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
        let l = SymMatrix::diagonal(&[4.0, 9.0]).cholesky().unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let p = sym(2, &[2.0, 1.0, 1.0, 2.0]);
        let l = p.cholesky().unwrap();
        assert!((l.transpose() * &l - p.as_matrix()).norm() < 1e-12);
        assert_eq!(l[(1, 0)], 0.0);
        assert!(matches!(
            sym(2, &[1.0, 2.0, 2.0, 1.0]).cholesky(),
            Err(LinalgError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn p_norm_cases() {
        let x = Vector::from_vec(vec![1.0, 0.0]);
        assert_eq!(p_norm(&x, &SymMatrix::identity(2)).unwrap(), 1.0);
        let x = Vector::from_vec(vec![1.0, 1.0]);
        let got = p_norm(&x, &SymMatrix::diagonal(&[1.0, 4.0])).unwrap();
        assert!((got - 5f64.sqrt()).abs() < 1e-15);
        let x = Vector::from_vec(vec![1.0, -1.0]);
        assert_eq!(p_norm(&x, &sym(2, &[1.0, 1.0, 1.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            p_norm(&x, &SymMatrix::diagonal(&[-1.0, -1.0])),
            Err(LinalgError::NegativeQuadraticForm(_))
        ));
    }

    #[test]
    fn projections() {
        assert_eq!(SymMatrix::identity(2).project_psd_floor().unwrap(), SymMatrix::identity(2));
        let p = SymMatrix::diagonal(&[0.5, 2.0]).project_psd_floor().unwrap();
        assert!((p.as_matrix() - DMatrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]))).norm() < 1e-14);
        let d = SymMatrix::diagonal(&[3.0, 5.0]);
        assert_eq!(d.project_psd_floor().unwrap(), d);

        let c = 2.0;
        let half = SymMatrix::identity(2).scale(0.5 * c / 2f64.sqrt());
        assert_eq!(half.project_frobenius_ball(c), half);
        let big = SymMatrix::identity(2).scale(2.0 * c / 2f64.sqrt());
        assert!((big.project_frobenius_ball(c).frobenius_norm() - c).abs() < 1e-12);
        assert_eq!(SymMatrix::zeros(3).project_frobenius_ball(c), SymMatrix::zeros(3));
    }

    #[test]
    fn floor_ball_projection_examples() {
        let p = SymMatrix::diagonal(&[0.0, 5.0]).project_floor_ball(1e6).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-14 && (p.get(1, 1) - 5.0).abs() < 1e-14);
        let p = SymMatrix::diagonal(&[3.0, 3.0]).project_floor_ball(2f64.sqrt()).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12 && (p.get(1, 1) - 1.0).abs() < 1e-12);
        let mut v = [0.5, 10.0, 2.0];
        project_floor_ball_values(&mut v, 5.0);
        assert_eq!(v[0], 1.0);
        assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() <= 5.0);
        assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn floor_ball_projection_is_optimal(
            a in prop::collection::vec(-6.0f64..6.0, 9),
            b in prop::collection::vec(-6.0f64..6.0, 9),
            radius in 1.8f64..8.0,
        ) {
            let m = random_sym(3, &a);
            let p = m.project_floor_ball(radius).unwrap();
            let e = p.eigen().unwrap();
            prop_assert!(e.min() >= 1.0 - 1e-10);
            prop_assert!(p.frobenius_norm() <= radius + 1e-10);
            let z = random_sym(3, &b).project_floor_ball(radius).unwrap();
            let diff = SymMatrix::symmetrized(m.as_matrix() - p.as_matrix());
            let dir = SymMatrix::symmetrized(z.as_matrix() - p.as_matrix());
            prop_assert!(diff.inner(&dir) <= 1e-8 * (1.0 + m.frobenius_norm().powi(2)));
        }

        #[test]
        fn eigen_reconstructs(n in 1usize..7, entries in prop::collection::vec(-10.0f64..10.0, 49)) {
            let m = random_sym(n, &entries);
            let e = m.eigen().unwrap();
            let q = &e.vectors;
            let recon = q * DMatrix::from_diagonal(&e.values) * q.transpose();
            prop_assert!((recon - m.as_matrix()).norm() <= 1e-10 * (1.0 + m.frobenius_norm()));
            prop_assert!((q.transpose() * q - DMatrix::identity(n, n)).norm() <= 1e-10);
            prop_assert!((e.values.sum() - m.trace()).abs() <= 1e-9);
            for k in 1..n {
                prop_assert!(e.values[k - 1] <= e.values[k]);
            }
        }

        #[test]
        fn det_matches_lu(n in 1usize..6, entries in prop::collection::vec(-3.0f64..3.0, 36)) {
            let m = random_sym(n, &entries);
            let det = m.det().unwrap();
            let lu = m.as_matrix().clone().determinant();
            prop_assert!((det - lu).abs() <= 1e-8 * (1.0 + lu.abs()));
        }

        #[test]
        fn floor_projection_idempotent(n in 1usize..6, entries in prop::collection::vec(-5.0f64..5.0, 36)) {
            let m = random_sym(n, &entries);
            let once = m.project_psd_floor().unwrap();
            let twice = once.project_psd_floor().unwrap();
            prop_assert!((once.as_matrix() - twice.as_matrix()).amax() <= 1e-12 * (1.0 + once.frobenius_norm()));
            prop_assert!(once.eigen().unwrap().min() >= 1.0 - 1e-12);
        }

        #[test]
        fn rayleigh_bounds(entries in prop::collection::vec(-2.0f64..2.0, 9), x in prop::collection::vec(-5.0f64..5.0, 3)) {
            let b = DMatrix::from_row_slice(3, 3, &entries);
            let p = SymMatrix::symmetrized(b.transpose() * &b + DMatrix::identity(3, 3) * 0.1);
            let x = Vector::from_vec(x);
            let e = p.eigen().unwrap();
            let v = p_norm(&x, &p).unwrap();
            let nx = x.norm();
            prop_assert!(e.min().sqrt() * nx <= v + 1e-10);
            prop_assert!(v <= e.max().sqrt() * nx + 1e-10);
        }

        #[test]
        fn quadratic_form_polarization(x in prop::collection::vec(-3.0f64..3.0, 2), y in prop::collection::vec(-3.0f64..3.0, 2)) {
            let p = sym(2, &[3.0, 0.5, 0.5, 1.0]);
            let x = Vector::from_vec(x);
            let y = Vector::from_vec(y);
            let cross = (x.transpose() * p.as_matrix() * &y)[(0, 0)];
            let lhs = p_norm(&(&x + &y), &p).unwrap().powi(2);
            let rhs = p_norm(&x, &p).unwrap().powi(2) + p_norm(&y, &p).unwrap().powi(2) + 2.0 * cross;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
