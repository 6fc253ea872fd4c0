#![allow(dead_code)]

use doping_core::linalg::DenseMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with an absolute floor, so that gradients that are
/// essentially zero are compared on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central finite difference of `f` with respect to `params[k]`, with the
/// step scaled to the parameter's magnitude.
pub fn central_diff(params: &mut [f64], k: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[k];
    let h = 1e-6 * orig.abs().max(1.0);
    params[k] = orig + h;
    let up = f(params);
    params[k] = orig - h;
    let down = f(params);
    params[k] = orig;
    (up - down) / (2.0 * h)
}

/// Rank by Gaussian elimination with partial pivoting, independent of the
/// SVD-based implementation.
pub fn gaussian_rank(m: &DenseMatrix, tol: f64) -> usize {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..rows).map(|i| m.row(i).to_vec()).collect();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() <= tol * scale {
            continue;
        }
        a.swap(rank, pivot);
        for i in rank + 1..rows {
            let f = a[i][col] / a[rank][col];
            for j in col..cols {
                a[i][j] -= f * a[rank][j];
            }
        }
        rank += 1;
    }
    rank
}
