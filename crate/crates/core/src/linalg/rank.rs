use nalgebra::DMatrix;

use super::{DenseMatrix, Scalar};

/// Number of singular values above `tol * σ_max` (SVD in 64-bit).
pub fn numerical_rank<T: Scalar>(m: &DenseMatrix<T>, tol: f64) -> usize {
    let data: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), &data);
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_full_rank() {
        assert_eq!(numerical_rank(&DenseMatrix::<f64>::identity(4), 1e-10), 4);
    }

    #[test]
    fn outer_product_is_rank_one() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 4.0, -1.0];
        let m = DenseMatrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        assert_eq!(numerical_rank(&m, 1e-10), 1);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        assert_eq!(numerical_rank(&DenseMatrix::<f64>::zeros(3, 3), 1e-10), 0);
    }
}
