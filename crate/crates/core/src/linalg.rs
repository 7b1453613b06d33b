//! Small dense linear-algebra helpers shared by the GP and risk code.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Systems stay small
//! (a few hundred training points, risk blocks of a few dozen rows), so plain
//! unblocked factorizations are fine.

use nalgebra::storage::StorageMut;
use nalgebra::{DMatrix, Dim, Dyn, Matrix};

use crate::error::{Error, Result};

/// How many times the jitter is multiplied by 10 after the initial attempt.
pub const JITTER_ESCALATIONS: u32 = 4;

/// Cholesky factorization of a symmetric matrix with escalating diagonal
/// jitter: `base_jitter` is added to the diagonal first, then multiplied by 10
/// up to [`JITTER_ESCALATIONS`] times. Returns the lower factor and the jitter
/// actually used. `context` names the matrix in the error message.
pub fn cholesky_with_jitter(
    a: &DMatrix<f64>,
    base_jitter: f64,
    context: &str,
) -> Result<(DMatrix<f64>, f64)> {
    debug_assert_eq!(a.nrows(), a.ncols());
    let n = a.nrows();
    let mut jitter = base_jitter;
    for attempt in 0..=JITTER_ESCALATIONS {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(m) {
            return Ok((chol.unpack(), jitter));
        }
        if attempt < JITTER_ESCALATIONS {
            // A zero base jitter cannot escalate multiplicatively; bump it to
            // a tiny absolute floor scaled by the matrix diagonal.
            if jitter == 0.0 {
                let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
                jitter = 1e-12 * scale.max(1.0);
            } else {
                jitter *= 10.0;
            }
        }
    }
    Err(Error::numerical(format!(
        "cholesky of {context} failed after escalating jitter to {jitter:.3e}"
    )))
}

/// In-place forward substitution `b <- L^{-1} b` for lower-triangular `L`
/// (one right-hand side per column). Panics on a zero pivot, which the
/// jitter policy of [`cholesky_with_jitter`] rules out for its factors.
pub fn solve_lower<C: Dim, S: StorageMut<f64, Dyn, C>>(
    l: &DMatrix<f64>,
    b: &mut Matrix<f64, Dyn, C, S>,
) {
    assert!(l.solve_lower_triangular_mut(b), "singular triangular solve");
}

/// In-place backward substitution `b <- L^{-T} b` for lower-triangular `L`.
pub fn solve_lower_transpose<C: Dim, S: StorageMut<f64, Dyn, C>>(
    l: &DMatrix<f64>,
    b: &mut Matrix<f64, Dyn, C, S>,
) {
    assert!(l.tr_solve_lower_triangular_mut(b), "singular triangular solve");
}

/// Inverse of `A = L L^T` from its lower Cholesky factor.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut linv = DMatrix::identity(n, n);
    solve_lower(l, &mut linv);
    linv.transpose() * linv
}

/// Forward-mode derivative of a Cholesky factor.
///
/// Given the lower factor `L` of `Sigma` and a symmetric perturbation
/// `dSigma`, returns `dL` such that `Sigma + t dSigma` has factor
/// `L + t dL + O(t^2)`. Uses `dL = L * phi(L^{-1} dSigma L^{-T})` where `phi`
/// takes the lower triangle and halves the diagonal.
pub fn cholesky_derivative(l: &DMatrix<f64>, dsigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut a1 = dsigma.clone();
    solve_lower(l, &mut a1); // L^{-1} dSigma
    let mut t = a1.transpose();
    solve_lower(l, &mut t);
    let mut s = t.transpose(); // L^{-1} dSigma L^{-T}
    for i in 0..n {
        s[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            s[(i, j)] = 0.0;
        }
    }
    l * s
}
