mod common;

use common::*;
use doping_core::linalg::{
    matvec_csr, numerical_rank, prune_to_sparsity, CsrMatrix, DenseMatrix, PruneMask,
};
use doping_core::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_mask(r: &mut impl Rng, rows: usize, cols: usize, sparsity: f64) -> PruneMask {
    let bits = (0..rows * cols).map(|_| r.gen::<f64>() >= sparsity).collect();
    PruneMask::from_bits(rows, cols, bits).unwrap()
}

fn masked(w: &DenseMatrix, mask: &PruneMask) -> DenseMatrix {
    DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| {
        if mask.is_alive(i, j) {
            w.get(i, j)
        } else {
            0.0
        }
    })
}

#[test]
fn csr_matches_masked_dense_64() {
    let mut r = rng(20);
    let w = random_matrix(&mut r, 64, 64);
    let mask = random_mask(&mut r, 64, 64, 0.9);
    let s = CsrMatrix::from_masked(&w, &mask).unwrap();
    assert_eq!(s.nnz(), mask.alive_count());
    let x = random_vec(&mut r, 64);
    let want = masked(&w, &mask).matvec(&x).unwrap();
    assert!(max_abs_diff(&matvec_csr(&s, &x).unwrap(), &want) <= 1e-12);
}

#[test]
fn csr_dense_equivalence_thousand_trials() {
    let mut r = rng(21);
    for _ in 0..1000 {
        let (rows, cols) = (r.gen_range(1..=40), r.gen_range(1..=40));
        let w = random_matrix(&mut r, rows, cols);
        let sparsity = r.gen_range(0.0..1.0);
        let mask = random_mask(&mut r, rows, cols, sparsity);
        let s = CsrMatrix::from_masked(&w, &mask).unwrap();
        let x = random_vec(&mut r, cols);
        let want = masked(&w, &mask).matvec(&x).unwrap();
        assert!(max_abs_diff(&matvec_csr(&s, &x).unwrap(), &want) <= 1e-12);
        assert_eq!(s.to_dense(), masked(&w, &mask));
    }
}

#[test]
fn prune_examples() {
    let w = DenseMatrix::from_rows(&[&[1.0, -3.0, 2.0, 0.5]]);
    let m = prune_to_sparsity(&w, &PruneMask::all_alive(1, 4), 0.5).unwrap();
    assert_eq!(m.bits(), &[false, true, true, false]);
    assert_eq!(prune_to_sparsity(&w, &m, 0.5).unwrap(), m);
    let all = prune_to_sparsity(&w, &m, 1.0).unwrap();
    assert_eq!(all.alive_count(), 0);
    assert!(matches!(
        prune_to_sparsity(&w, &m, 0.25),
        Err(Error::SparsityDecrease { .. })
    ));
}

#[test]
fn gaussian_8x5_has_full_column_rank() {
    let mut r = rng(22);
    for _ in 0..20 {
        let m = DenseMatrix::from_fn(8, 5, |_, _| StandardNormal.sample(&mut r));
        assert_eq!(gaussian_rank(&m, 1e-10), 5);
        assert_eq!(numerical_rank(&m, 1e-10), 5);
    }
    assert_eq!(numerical_rank(&DenseMatrix::<f64>::identity(4), 1e-10), 4);
    let u = random_matrix(&mut r, 6, 1);
    let v = random_matrix(&mut r, 1, 7);
    assert_eq!(numerical_rank(&u.matmul(&v).unwrap(), 1e-10), 1);
}

proptest! {
    #[test]
    fn pruning_is_monotone_and_exact(
        rows in 1usize..=20, cols in 1usize..=20,
        s0 in 0.0f64..=1.0, ds in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let w = random_matrix(&mut r, rows, cols);
        let first = prune_to_sparsity(&w, &PruneMask::all_alive(rows, cols), s0).unwrap();
        let target = (first.sparsity() + ds * (1.0 - first.sparsity())).min(1.0);
        let next = prune_to_sparsity(&w, &first, target).unwrap();
        let n = (rows * cols) as f64;
        prop_assert!((next.sparsity() - target).abs() <= 1.0 / n + 1e-12);
        for k in 0..rows * cols {
            prop_assert!(!next.bits()[k] || first.bits()[k]);
        }
        // Every survivor is at least as large as every newly killed weight.
        let d = w.data();
        let killed = (0..rows * cols).filter(|&k| first.bits()[k] && !next.bits()[k]);
        let min_alive = (0..rows * cols).filter(|&k| next.bits()[k]).map(|k| d[k].abs()).fold(f64::INFINITY, f64::min);
        for k in killed {
            prop_assert!(d[k].abs() <= min_alive);
        }
    }
}
