//! Kronecker-factored matrices `W = B ⊗ C`.
//!
//! With `B: M1×N1` and `C: M2×N2`, `W[i1*M2 + i2, j1*N2 + j2] = B[i1,j1] * C[i2,j2]`.
//! The matvec never forms `W`: the input is viewed as `X: N2×N1` with
//! `X[j2,j1] = x[j1*N2 + j2]`, the product `Y = C X Bᵀ` is computed with two
//! small matrix products and read back as `y[i1*M2 + i2] = Y[i2,i1]`.
//!
//! The identity printed in some references as `Y = C × B × Xᵀ` does not
//! type-check for general shapes; `(B ⊗ C) vec(X) = vec(C X Bᵀ)` is the one
//! used here and is checked against [`kp_expand`] in the tests.

use super::{DenseMatrix, MacTally, NoTally, Scalar};
use crate::{Error, Result};

/// Upper bound on the element count [`kp_expand`] will materialize.
pub const DEFAULT_MAX_EXPAND_ELEMENTS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerPair<T: Scalar = f64> {
    pub b: DenseMatrix<T>,
    pub c: DenseMatrix<T>,
}

/// Which product of `C X Bᵀ` is formed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpOrder {
    /// `(C X) Bᵀ`: `M2*N2*N1 + M2*N1*M1` MACs.
    CxFirst,
    /// `C (X Bᵀ)`: `N2*N1*M1 + M2*N2*M1` MACs.
    XbFirst,
}

/// MAC count of each association order, `(CxFirst, XbFirst)`.
pub fn kp_order_macs(m1: usize, n1: usize, m2: usize, n2: usize) -> (u64, u64) {
    let (m1, n1, m2, n2) = (m1 as u64, n1 as u64, m2 as u64, n2 as u64);
    (m2 * n2 * n1 + m2 * n1 * m1, n2 * n1 * m1 + m2 * n2 * m1)
}

impl<T: Scalar> KroneckerPair<T> {
    pub fn new(b: DenseMatrix<T>, c: DenseMatrix<T>) -> Self {
        Self { b, c }
    }

    /// Logical `(M1*M2, N1*N2)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.b.rows() * self.c.rows(), self.b.cols() * self.c.cols())
    }

    pub fn param_count(&self) -> usize {
        self.b.len() + self.c.len()
    }

    /// `(M1, N1, M2, N2)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.b.rows(), self.b.cols(), self.c.rows(), self.c.cols())
    }

    pub fn cheaper_order(&self) -> KpOrder {
        let (m1, n1, m2, n2) = self.dims();
        let (cx, xb) = kp_order_macs(m1, n1, m2, n2);
        if xb <= cx {
            KpOrder::XbFirst
        } else {
            KpOrder::CxFirst
        }
    }

    /// Structured matvec MACs at the cheaper association order.
    pub fn matvec_macs(&self) -> u64 {
        let (m1, n1, m2, n2) = self.dims();
        let (cx, xb) = kp_order_macs(m1, n1, m2, n2);
        cx.min(xb)
    }

    pub fn cast<U: Scalar>(&self) -> KroneckerPair<U> {
        KroneckerPair {
            b: self.b.cast(),
            c: self.c.cast(),
        }
    }
}

pub fn kp_expand<T: Scalar>(kp: &KroneckerPair<T>) -> Result<DenseMatrix<T>> {
    kp_expand_with_limit(kp, DEFAULT_MAX_EXPAND_ELEMENTS)
}

/// Materializes `B ⊗ C`. Test and oracle use only.
pub fn kp_expand_with_limit<T: Scalar>(
    kp: &KroneckerPair<T>,
    max_elements: usize,
) -> Result<DenseMatrix<T>> {
    let (m1, n1, m2, n2) = kp.dims();
    let requested = (m1 as u128) * (m2 as u128) * (n1 as u128) * (n2 as u128);
    if requested > max_elements as u128 {
        return Err(Error::TooLarge {
            op: "kp_expand",
            requested,
            limit: max_elements,
        });
    }
    let mut w = DenseMatrix::zeros(m1 * m2, n1 * n2);
    for i1 in 0..m1 {
        for j1 in 0..n1 {
            let bv = kp.b.get(i1, j1);
            for i2 in 0..m2 {
                for j2 in 0..n2 {
                    w.set(i1 * m2 + i2, j1 * n2 + j2, bv * kp.c.get(i2, j2));
                }
            }
        }
    }
    Ok(w)
}

pub fn kp_matvec<T: Scalar>(kp: &KroneckerPair<T>, x: &[T]) -> Result<Vec<T>> {
    kp_matvec_tallied(kp, x, &mut NoTally)
}

/// `y = (B ⊗ C) x` via `C X Bᵀ`, at the cheaper association order.
pub fn kp_matvec_tallied<T: Scalar, K: MacTally>(
    kp: &KroneckerPair<T>,
    x: &[T],
    tally: &mut K,
) -> Result<Vec<T>> {
    let (m1, n1, m2, n2) = kp.dims();
    if x.len() != n1 * n2 {
        return Err(Error::shape("kp_matvec", n1 * n2, x.len()));
    }
    let b = kp.b.data();
    let c = kp.c.data();
    let mut y = vec![T::zero(); m1 * m2];
    match kp.cheaper_order() {
        KpOrder::XbFirst => {
            // P[j2, i1] = sum_j1 X[j2, j1] B[i1, j1]; x's block j1 is X's column j1.
            let mut p = vec![T::zero(); n2 * m1];
            for i1 in 0..m1 {
                let brow = &b[i1 * n1..(i1 + 1) * n1];
                for (j1, &bv) in brow.iter().enumerate() {
                    let xcol = &x[j1 * n2..(j1 + 1) * n2];
                    for (j2, &xv) in xcol.iter().enumerate() {
                        p[j2 * m1 + i1] = p[j2 * m1 + i1] + xv * bv;
                        tally.mac();
                    }
                }
            }
            // Y[i2, i1] = sum_j2 C[i2, j2] P[j2, i1]
            for i2 in 0..m2 {
                let crow = &c[i2 * n2..(i2 + 1) * n2];
                for i1 in 0..m1 {
                    let mut acc = T::zero();
                    for (j2, &cv) in crow.iter().enumerate() {
                        acc = acc + cv * p[j2 * m1 + i1];
                        tally.mac();
                    }
                    y[i1 * m2 + i2] = acc;
                }
            }
        }
        KpOrder::CxFirst => {
            // T[i2, j1] = sum_j2 C[i2, j2] X[j2, j1]
            let mut t = vec![T::zero(); m2 * n1];
            for i2 in 0..m2 {
                let crow = &c[i2 * n2..(i2 + 1) * n2];
                for j1 in 0..n1 {
                    let xcol = &x[j1 * n2..(j1 + 1) * n2];
                    let mut acc = T::zero();
                    for (&cv, &xv) in crow.iter().zip(xcol) {
                        acc = acc + cv * xv;
                        tally.mac();
                    }
                    t[i2 * n1 + j1] = acc;
                }
            }
            // Y[i2, i1] = sum_j1 T[i2, j1] B[i1, j1]
            for i1 in 0..m1 {
                let brow = &b[i1 * n1..(i1 + 1) * n1];
                for i2 in 0..m2 {
                    let trow = &t[i2 * n1..(i2 + 1) * n1];
                    let mut acc = T::zero();
                    for (&tv, &bv) in trow.iter().zip(brow) {
                        acc = acc + tv * bv;
                        tally.mac();
                    }
                    y[i1 * m2 + i2] = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of `y = (B ⊗ C) x` for an upstream gradient `g` on `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct KpGradients<T: Scalar = f64> {
    pub b: DenseMatrix<T>,
    pub c: DenseMatrix<T>,
    pub x: Vec<T>,
}

/// With `G[i2,i1] = g[i1*M2 + i2]`:
/// `dB = Gᵀ (C X)`, `dC = G (X Bᵀ)ᵀ`, `dX = Cᵀ G B`.
pub fn kp_matvec_backward<T: Scalar>(
    kp: &KroneckerPair<T>,
    x: &[T],
    g: &[T],
) -> Result<KpGradients<T>> {
    let (m1, n1, m2, n2) = kp.dims();
    if x.len() != n1 * n2 {
        return Err(Error::shape("kp_matvec_backward x", n1 * n2, x.len()));
    }
    if g.len() != m1 * m2 {
        return Err(Error::shape("kp_matvec_backward g", m1 * m2, g.len()));
    }
    let xm = DenseMatrix::from_fn(n2, n1, |j2, j1| x[j1 * n2 + j2]);
    let gm = DenseMatrix::from_fn(m2, m1, |i2, i1| g[i1 * m2 + i2]);
    let bt = kp.b.transpose();

    let cx = kp.c.matmul(&xm)?; // M2×N1
    let gb = gm.transpose().matmul(&cx)?; // M1×N1
    let p = xm.matmul(&bt)?; // N2×M1
    let gc = gm.matmul(&p.transpose())?; // M2×N2
    let gx_m = kp.c.transpose().matmul(&gm)?.matmul(&kp.b)?; // N2×N1
    let mut gx = vec![T::zero(); n1 * n2];
    for j1 in 0..n1 {
        for j2 in 0..n2 {
            gx[j1 * n2 + j2] = gx_m.get(j2, j1);
        }
    }
    Ok(KpGradients { b: gb, c: gc, x: gx })
}
