//! Small dense linear-algebra helpers shared by the models.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{EigValsh, InverseC, SolveC, UPLO};

use crate::error::{Error, Result};

extern "C" {
    fn openblas_set_num_threads(num_threads: std::os::raw::c_int);
}

/// Force OpenBLAS to run single-threaded.
///
/// Multi-threaded BLAS kernels may partition reductions differently for
/// different thread counts; pinning keeps every output bitwise stable.
pub fn pin_blas_threads() {
    // SAFETY: plain setter exported by the linked OpenBLAS library.
    unsafe { openblas_set_num_threads(1) }
}

/// Two-sided normal tail probability `2·Φ(−|z|)`.
pub fn two_sided_normal_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Solve `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    a.solvec(b)
        .map_err(|e| Error::Numeric(format!("Cholesky solve failed ({e}) for a {}x{} system", a.nrows(), a.ncols())))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: &Array2<f64>) -> Result<Array2<f64>> {
    a.invc()
        .map_err(|e| Error::Numeric(format!("Cholesky inverse failed ({e}) for a {}x{} matrix", a.nrows(), a.ncols())))
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_condition_number(a: &Array2<f64>) -> Result<f64> {
    let ev = a
        .eigvalsh(UPLO::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigensolver failed: {e}")))?;
    let max = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// `Xᵀ diag(w) X`.
pub fn weighted_gram(x: ArrayView2<f64>, w: ArrayView1<f64>) -> Array2<f64> {
    let mut xw = x.to_owned();
    for (mut row, &wi) in xw.axis_iter_mut(Axis(0)).zip(w.iter()) {
        row *= wi;
    }
    x.t().dot(&xw)
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them.
///
/// Greedy modified Gram–Schmidt: a column is flagged when less than
/// `rel_tol` of its squared norm survives projection onto the accepted set.
pub fn dependent_columns(x: ArrayView2<f64>, rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut flagged = Vec::new();
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let norm2 = col.dot(&col);
        if norm2 == 0.0 {
            flagged.push(j);
            continue;
        }
        let mut r = col.to_owned();
        for q in &basis {
            let c = q.dot(&r);
            r.scaled_add(-c, q);
        }
        let rn2 = r.dot(&r);
        if rn2 <= rel_tol * norm2 {
            flagged.push(j);
        } else {
            r /= rn2.sqrt();
            basis.push(r);
        }
    }
    flagged
}
