//! Dense symmetric eigendecomposition and small matrix helpers.
//!
//! Eigendecompositions dominate the runtime of this crate (Gram matrices
//! reach a few thousand rows), so we call LAPACK's divide-and-conquer driver
//! `dsyevd` directly: it is several times faster than the classic `dsyev`
//! driver at these sizes and its workspace query protocol is easy to drive
//! from Rust.
//!
//! Layout note: LAPACK is column-major while [`ndarray`] arrays here are
//! row-major. For a *symmetric* input the transposed interpretation is
//! harmless, and the eigenvector that LAPACK writes into its column `k`
//! lands in row `k` of the row-major array. [`SymEigen`] therefore stores
//! the eigenvector matrix transposed: row `k` of [`SymEigen::basis_t`] is
//! the eigenvector of the `k`-th (ascending) eigenvalue.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};

/// Eigendecomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Array1<f64>,
    /// Orthonormal eigenvectors, one per *row*, aligned with `values`.
    pub basis_t: Array2<f64>,
}

impl SymEigen {
    /// Dimension of the decomposed matrix.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Largest eigenvalue (the last one); zero for an empty matrix.
    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Smallest eigenvalue (the first one); zero for an empty matrix.
    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Rebuild the original matrix `Q diag(values) Qᵀ`; mostly for tests.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut scaled = self.basis_t.clone();
        for (mut row, &v) in scaled.rows_mut().into_iter().zip(self.values.iter()) {
            row *= v;
        }
        self.basis_t.t().dot(&scaled)
    }

    /// Coordinates of the columns of `m` in the eigenbasis: returns `Q ᵀ`
    /// applied from the left, i.e. `basis_t · m`.
    pub fn to_eigenbasis(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        self.basis_t.dot(m)
    }
}

/// Raw `dsyevd` call on a matrix buffer in standard (row-major contiguous)
/// layout. `jobz` is `b'V'` for vectors or `b'N'` for values only.
fn dsyevd_inplace(a: &mut Array2<f64>, jobz: u8) -> Result<Array1<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "symmetric eigensolver needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let slice = a
        .as_slice_mut()
        .ok_or_else(|| Error::numerical("eigensolver input must be contiguous"))?;

    let n_i = n as i32;
    let jobz_c = jobz as core::ffi::c_char;
    let uplo_c = b'L' as core::ffi::c_char;
    let mut w = vec![0.0f64; n];
    let mut info: i32 = 0;

    // Workspace query.
    let mut work_query = 0.0f64;
    let mut iwork_query = 0i32;
    let query = -1i32;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz_c,
            &uplo_c,
            &n_i,
            slice.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            &mut work_query,
            &query,
            &mut iwork_query,
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::numerical(format!(
            "dsyevd workspace query failed with info={info}"
        )));
    }

    let lwork = work_query as i32;
    let liwork = iwork_query;
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz_c,
            &uplo_c,
            &n_i,
            slice.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::numerical(format!(
            "dsyevd failed to converge (info={info})"
        )));
    }
    Ok(Array1::from_vec(w))
}

/// Full eigendecomposition, consuming the input matrix as workspace.
pub fn sym_eigen_into(mut a: Array2<f64>) -> Result<SymEigen> {
    let values = dsyevd_inplace(&mut a, b'V')?;
    Ok(SymEigen { values, basis_t: a })
}

/// Full eigendecomposition of a symmetric matrix (the input is copied).
pub fn sym_eigen(a: &ArrayView2<f64>) -> Result<SymEigen> {
    sym_eigen_into(a.to_owned())
}

/// Eigenvalues only, ascending; cheaper than the full decomposition.
pub fn sym_eigenvalues(a: &ArrayView2<f64>) -> Result<Array1<f64>> {
    let mut work = a.to_owned();
    dsyevd_inplace(&mut work, b'N')
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration; used for step-size stability bounds where a cheap upper
/// estimate suffices.
pub fn psd_max_eigenvalue(a: &ArrayView2<f64>, iterations: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start: ramp + constant.
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + (i as f64) / (n as f64)));
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let av = a.dot(&v);
        let norm = av.dot(&av).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&av) / v.dot(&v);
        v = av / norm;
    }
    lambda
}

/// Replace `a` with its symmetric part `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Frobenius norm.
pub fn frobenius_norm(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F` (absolute if `b` is zero).
pub fn rel_frobenius_distance(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let denom = frobenius_norm(b);
    let mut num = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y) * (x - y);
    }
    let num = num.sqrt();
    if denom > 0.0 {
        num / denom
    } else {
        num
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn two_by_two_analytic() {
        // Oracle: [[2,1],[1,2]] has eigenpairs (1, (1,-1)/√2) and (3, (1,1)/√2).
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigen(&a.view()).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-12);
        let q0 = e.basis_t.row(0);
        let q1 = e.basis_t.row(1);
        assert_abs_diff_eq!((q0[0] + q0[1]).abs(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((q1[0] - q1[1]).abs(), 0.0, epsilon = 1e-12);
    }

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seeding::rng_stream(seed, &[0]);
        let mut a = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let at = a.t().to_owned();
        a += &at;
        a
    }

    #[test]
    fn residuals_orthonormality_and_trace() {
        let a = random_symmetric(40, 7);
        let e = sym_eigen(&a.view()).unwrap();

        // Ascending order.
        for k in 1..e.dim() {
            assert!(e.values[k] >= e.values[k - 1]);
        }
        // Trace identity.
        let trace: f64 = (0..40).map(|i| a[[i, i]]).sum();
        assert_abs_diff_eq!(e.values.sum(), trace, epsilon = 1e-9);
        // Eigen residuals ‖A q − λ q‖.
        for k in 0..e.dim() {
            let q = e.basis_t.row(k).to_owned();
            let resid = &a.dot(&q) - &(&q * e.values[k]);
            assert!(resid.dot(&resid).sqrt() < 1e-10, "residual at k={k}");
        }
        // Orthonormal rows.
        let gram = e.basis_t.dot(&e.basis_t.t());
        for i in 0..40 {
            for j in 0..40 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[[i, j]], expect, epsilon = 1e-10);
            }
        }
        // Reconstruction.
        assert!(rel_frobenius_distance(&e.reconstruct().view(), &a.view()) < 1e-12);
    }

    #[test]
    fn values_only_matches_full() {
        let a = random_symmetric(25, 11);
        let full = sym_eigen(&a.view()).unwrap();
        let vals = sym_eigenvalues(&a.view()).unwrap();
        for k in 0..25 {
            assert_abs_diff_eq!(vals[k], full.values[k], epsilon = 1e-11);
        }
    }

    #[test]
    fn power_iteration_estimates_top_eigenvalue_from_below() {
        let a = random_symmetric(30, 3);
        // Make it PSD: A².
        let psd = a.dot(&a);
        let vals = sym_eigenvalues(&psd.view()).unwrap();
        let est = psd_max_eigenvalue(&psd.view(), 300);
        let top = vals[vals.len() - 1];
        // Rayleigh quotients never exceed the top eigenvalue; convergence is
        // geometric in the spectral gap, so demand only a percent here.
        assert!(est <= top * (1.0 + 1e-12), "estimate {est} above top {top}");
        assert!(est > 0.99 * top, "power iteration estimate {est} vs {top}");
    }

    #[test]
    fn empty_and_one_by_one() {
        let a = Array2::<f64>::zeros((0, 0));
        assert_eq!(sym_eigen(&a.view()).unwrap().dim(), 0);
        let b = array![[4.0]];
        let e = sym_eigen(&b.view()).unwrap();
        assert_abs_diff_eq!(e.values[0], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.basis_t[[0, 0]].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetrize_and_distance_helpers() {
        let mut a = array![[1.0, 2.0], [4.0, 5.0]];
        symmetrize(&mut a);
        assert_abs_diff_eq!(a[[0, 1]], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[[1, 0]], 3.0, epsilon = 1e-15);
        let b = array![[1.0, 3.0], [3.0, 5.0]];
        assert_abs_diff_eq!(rel_frobenius_distance(&a.view(), &b.view()), 0.0, epsilon = 1e-15);
        assert!(frobenius_norm(&a.view()) > 0.0);
    }
}
