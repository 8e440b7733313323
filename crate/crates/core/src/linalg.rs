//! Dense symmetric-matrix primitives.
//!
//! [`SymMatrix`] wraps a square `nalgebra` matrix whose symmetry is enforced
//! at construction: the upper triangle is authoritative and mirrored into the
//! lower one. Everything here is a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A symmetric `dim × dim` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix needs dim >= 1");
        Self { inner: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix needs dim >= 1");
        Self { inner: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "SymMatrix needs dim >= 1");
        Self { inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle (`i <= j`).
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(dim >= 1, "SymMatrix needs dim >= 1");
        let mut inner = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..=j {
                let v = f(i, j);
                inner[(i, j)] = v;
                inner[(j, i)] = v;
            }
        }
        Self { inner }
    }

    /// Takes the upper triangle of a square matrix and mirrors it.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        Ok(Self::from_upper_fn(m.nrows(), |i, j| m[(i, j)]))
    }

    /// Row-major entries, upper triangle authoritative.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: entries.len() });
        }
        if dim == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        Ok(Self::from_upper_fn(dim, |i, j| entries[i * dim + j]))
    }

    /// `(M + Mᵀ) / 2` for an arbitrary square matrix.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        Ok(Self::from_upper_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    /// `Σ_b e_b e_bᵀ ⊗ block`: `copies` identical diagonal blocks.
    pub fn block_diagonal(block: &SymMatrix, copies: usize) -> Self {
        let d = block.dim();
        let mut inner = DMatrix::zeros(d * copies, d * copies);
        for c in 0..copies {
            inner.view_mut((c * d, c * d), (d, d)).copy_from(&block.inner);
        }
        Self { inner }
    }

    /// Extracts the diagonal block starting at `offset`.
    pub fn diagonal_block(&self, offset: usize, size: usize) -> Result<Self> {
        if offset + size > self.dim() || size == 0 {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: offset + size });
        }
        Ok(Self { inner: self.inner.view((offset, offset), (size, size)).into_owned() })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let v = &self.inner * DVector::from_column_slice(x);
        Ok(v.as_slice().to_vec())
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                col += self.inner[(i, j)] * x[i];
            }
            acc += col * x[j];
        }
        Ok(acc)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        self.check_len(other.dim())?;
        Ok(Self { inner: &self.inner + &other.inner })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        self.check_len(other.dim())?;
        Ok(Self { inner: &self.inner - &other.inner })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { inner: &self.inner * s }
    }

    pub fn add_diagonal(&self, shift: f64) -> Self {
        let mut inner = self.inner.clone();
        for i in 0..self.dim() {
            inner[(i, i)] += shift;
        }
        Self { inner }
    }

    /// Frobenius inner product `tr(AB)`.
    pub fn frobenius_dot(&self, other: &SymMatrix) -> Result<f64> {
        self.check_len(other.dim())?;
        Ok(self.inner.dot(&other.inner))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        let eig = self.eigen();
        eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigen().eigenvalues.last().expect("dim >= 1")
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.inner.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn eigen(&self) -> EigenDecomposition {
        EigenDecomposition::new(self)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: len });
        }
        Ok(())
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn new(a: &SymMatrix) -> Self {
        // Householder tridiagonalization followed by implicit symmetric QR.
        let eig = SymmetricEigen::new(a.inner.clone());
        let n = a.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { eigenvalues, eigenvectors }
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        let full = &scaled * self.eigenvectors.transpose();
        SymMatrix::symmetrize(&full).expect("square")
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky, with one
/// step of iterative refinement.
pub fn solve_spd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    a.check_len(b.len())?;
    let chol = nalgebra::Cholesky::new(a.inner.clone()).ok_or(Error::NotPositiveDefinite)?;
    let rhs = DVector::from_column_slice(b);
    let mut x = chol.solve(&rhs);
    let resid = &rhs - &a.inner * &x;
    x += chol.solve(&resid);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x.as_slice().to_vec())
}

/// Cholesky factor wrapper for repeated solves against the same matrix.
pub struct SpdFactor {
    matrix: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SpdFactor {
    pub fn new(a: &SymMatrix) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(a.inner.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { matrix: a.inner.clone(), chol })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: self.matrix.nrows(), found: b.len() });
        }
        let rhs = DVector::from_column_slice(b);
        let mut x = self.chol.solve(&rhs);
        let resid = &rhs - &self.matrix * &x;
        x += self.chol.solve(&resid);
        Ok(x.as_slice().to_vec())
    }
}

/// Frobenius-nearest PSD matrix: eigenvalues clamped at exactly zero.
pub fn project_psd(a: &SymMatrix) -> SymMatrix {
    let eig = a.eigen();
    if eig.eigenvalues.last().is_some_and(|&l| l >= 0.0) {
        return a.clone();
    }
    eig.reconstruct_with(|l| l.max(0.0))
}

pub fn frobenius_norm(a: &SymMatrix) -> f64 {
    a.inner.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `y ← y + alpha · x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &SymMatrix, b: &SymMatrix, tol: f64) -> bool {
        a.sub(b).unwrap().max_abs_entry() <= tol
    }

    #[test]
    fn solve_identity() {
        let x = solve_spd(&SymMatrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn solve_diagonal() {
        let a = SymMatrix::from_diagonal(&[2.0, 4.0]);
        let x = solve_spd(&a, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_two_by_two_matches_closed_form_inverse() {
        let a = SymMatrix::from_row_major(2, &[4.0, 1.0, 1.0, 3.0]).unwrap();
        let b = [1.0, 2.0];
        let x = solve_spd(&a, &b).unwrap();
        // inverse of [[a,b],[b,c]] is [[c,-b],[-b,a]] / (ac - b²)
        let det = 4.0 * 3.0 - 1.0;
        let expect = [(3.0 * 1.0 - 1.0 * 2.0) / det, (-1.0 * 1.0 + 4.0 * 2.0) / det];
        assert!((x[0] - expect[0]).abs() < 1e-14 && (x[1] - expect[1]).abs() < 1e-14);
        let ax = a.mul_vec(&x).unwrap();
        assert!(norm2(&sub(&ax, &b)) < 1e-10);
    }

    #[test]
    fn solve_rejects_indefinite() {
        let a = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::NotPositiveDefinite)));
        let z = SymMatrix::zeros(2);
        assert!(matches!(solve_spd(&z, &[1.0, 1.0]), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn solve_rejects_wrong_length() {
        let a = SymMatrix::identity(3);
        assert!(matches!(solve_spd(&a, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn project_clamps_diagonal() {
        let a = SymMatrix::from_diagonal(&[1.0, -2.0]);
        let p = project_psd(&a);
        assert!(close(&p, &SymMatrix::from_diagonal(&[1.0, 0.0]), 1e-14));
    }

    #[test]
    fn project_swap_matrix() {
        let a = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = project_psd(&a);
        let want = SymMatrix::from_row_major(2, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(close(&p, &want, 1e-14));
    }

    #[test]
    fn project_fixes_psd_input() {
        let a = SymMatrix::from_row_major(3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(close(&project_psd(&a), &a, 1e-10));
    }

    #[test]
    fn frobenius_examples() {
        assert!((frobenius_norm(&SymMatrix::identity(7)) - 7f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&SymMatrix::zeros(3)), 0.0);
        assert_eq!(frobenius_norm(&SymMatrix::from_diagonal(&[3.0, 4.0])), 5.0);
    }

    #[test]
    fn upper_triangle_is_authoritative() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 99.0, 3.0]);
        let s = SymMatrix::from_upper(&m).unwrap();
        assert_eq!(s.get(1, 0), 2.0);
        assert_eq!(s.get(0, 1), 2.0);
    }

    #[test]
    fn block_diagonal_roundtrip() {
        let b = SymMatrix::from_row_major(2, &[1.0, 0.5, 0.5, 2.0]).unwrap();
        let full = SymMatrix::block_diagonal(&b, 3);
        assert_eq!(full.dim(), 6);
        assert_eq!(full.get(2, 3), 0.5);
        assert_eq!(full.get(1, 2), 0.0);
        assert_eq!(full.diagonal_block(4, 2).unwrap(), b);
    }

    fn sym_strategy(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
        (1..=max_dim).prop_flat_map(|n| {
            prop::collection::vec(-5.0f64..5.0, n * n)
                .prop_map(move |v| SymMatrix::from_row_major(n, &v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn eigen_reconstructs(a in sym_strategy(8)) {
            let eig = a.eigen();
            let scale = a.frobenius_norm().max(1.0);
            prop_assert!(close(&eig.reconstruct(), &a, 1e-8 * scale));
            let vtv = eig.eigenvectors.transpose() * &eig.eigenvectors;
            let id = DMatrix::<f64>::identity(a.dim(), a.dim());
            prop_assert!((vtv - id).amax() <= 1e-10);
            for w in eig.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn projection_is_idempotent_and_psd(a in sym_strategy(8)) {
            let p = project_psd(&a);
            prop_assert!(p.min_eigenvalue() >= -1e-10);
            let pp = project_psd(&p);
            prop_assert!(close(&pp, &p, 1e-10 * a.frobenius_norm().max(1.0)));
        }

        #[test]
        fn projection_is_nearest(a in sym_strategy(6), seed in prop::collection::vec(-3.0f64..3.0, 36)) {
            let n = a.dim();
            // Random PSD competitor BᵀB.
            let b = DMatrix::from_fn(n, n, |i, j| seed[(i * 6 + j) % 36]);
            let candidate = SymMatrix::symmetrize(&(b.transpose() * &b)).unwrap();
            let p = project_psd(&a);
            let best = p.sub(&a).unwrap().frobenius_norm();
            let other = candidate.sub(&a).unwrap().frobenius_norm();
            prop_assert!(best <= other + 1e-10);
        }

        #[test]
        fn solve_then_multiply_recovers_rhs(a in sym_strategy(8), b in prop::collection::vec(-10.0f64..10.0, 8)) {
            let n = a.dim();
            // Make SPD: AᵀA + I.
            let spd = SymMatrix::symmetrize(&(a.as_matrix().transpose() * a.as_matrix())).unwrap().add_diagonal(1.0);
            let rhs = &b[..n];
            let x = solve_spd(&spd, rhs).unwrap();
            let ax = spd.mul_vec(&x).unwrap();
            prop_assert!(norm2(&sub(&ax, rhs)) <= 1e-8 * norm2(rhs).max(1e-300));
        }
    }
}
