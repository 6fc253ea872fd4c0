use super::{DenseMatrix, Scalar};
use crate::{Error, Result};

/// Alive/dead bit per weight. Bits only ever go from alive to dead: there is
/// no public way to revive one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
    alive: usize,
}

impl PruneMask {
    pub fn all_alive(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
            alive: rows * cols,
        }
    }

    pub fn all_dead(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
            alive: 0,
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape("PruneMask::from_bits", rows * cols, bits.len()));
        }
        let alive = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            rows,
            cols,
            bits,
            alive,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_alive(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn alive_count(&self) -> usize {
        self.alive
    }

    #[inline]
    pub fn dead_count(&self) -> usize {
        self.bits.len() - self.alive
    }

    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.dead_count() as f64 / self.bits.len() as f64
    }

    pub fn density(&self) -> f64 {
        1.0 - self.sparsity()
    }

    /// Zeroes every dead entry of `w`.
    pub fn apply<T: Scalar>(&self, w: &mut DenseMatrix<T>) {
        debug_assert_eq!(w.shape(), (self.rows, self.cols));
        for (v, &b) in w.data_mut().iter_mut().zip(&self.bits) {
            if !b {
                *v = T::zero();
            }
        }
    }

    /// Zeroes every dead position of a flat row-major buffer.
    pub fn apply_slice<T: Scalar>(&self, w: &mut [T]) {
        debug_assert_eq!(w.len(), self.bits.len());
        for (v, &b) in w.iter_mut().zip(&self.bits) {
            if !b {
                *v = T::zero();
            }
        }
    }

    /// True when every dead position of `w` holds exactly zero.
    pub fn is_respected_by<T: Scalar>(&self, w: &DenseMatrix<T>) -> bool {
        w.data()
            .iter()
            .zip(&self.bits)
            .all(|(&v, &b)| b || v == T::zero())
    }
}

/// Kills the smallest-magnitude alive weights of `w` until `current` reaches
/// `target_sparsity`.
///
/// The dead count is `round(target * len)`; ties in magnitude are broken by
/// the lowest flat index. Dead bits stay dead. Asking for fewer dead weights
/// than `current` already has is an error.
pub fn prune_to_sparsity<T: Scalar>(
    w: &DenseMatrix<T>,
    current: &PruneMask,
    target_sparsity: f64,
) -> Result<PruneMask> {
    if w.shape() != (current.rows, current.cols) {
        return Err(Error::shape(
            "prune_to_sparsity",
            format!("{}x{}", current.rows, current.cols),
            format!("{}x{}", w.rows(), w.cols()),
        ));
    }
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(Error::InvalidArgument(format!(
            "target sparsity {target_sparsity} outside [0, 1]"
        )));
    }
    let n = current.len();
    let target_dead = (target_sparsity * n as f64).round() as usize;
    let dead = current.dead_count();
    if target_dead < dead {
        return Err(Error::SparsityDecrease {
            current: current.sparsity(),
            target: target_sparsity,
        });
    }
    let to_kill = target_dead - dead;
    let mut next = current.clone();
    if to_kill == 0 {
        return Ok(next);
    }

    let mut alive: Vec<usize> = (0..n).filter(|&k| current.bits[k]).collect();
    let data = w.data();
    let key = |&k: &usize| (data[k].abs(), k);
    let cmp = |a: &usize, b: &usize| {
        let (ma, ia) = key(a);
        let (mb, ib) = key(b);
        ma.partial_cmp(&mb).expect("finite weights").then(ia.cmp(&ib))
    };
    if to_kill < alive.len() {
        alive.select_nth_unstable_by(to_kill - 1, cmp);
    }
    for &k in &alive[..to_kill] {
        next.bits[k] = false;
    }
    next.alive -= to_kill;
    Ok(next)
}
