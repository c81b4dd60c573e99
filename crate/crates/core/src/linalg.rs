//! Small complex-matrix helpers shared by the channel and pilot modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Kronecker product A ⊗ B.
pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Column-major vectorization, so that vec(ABC) = (Cᵀ ⊗ A) vec(B).
pub fn vec_mat(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of `vec_mat` for a matrix of the given shape.
pub fn unvec(v: &DVector<Complex64>, rows: usize, cols: usize) -> DMatrix<Complex64> {
    assert_eq!(v.len(), rows * cols, "vector length does not match shape");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}
