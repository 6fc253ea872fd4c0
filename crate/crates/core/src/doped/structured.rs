use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::gemm::{gemm, MatMut, MatRef};
use crate::linalg::{
    kp_expand, kp_matvec_backward, kp_matvec_tallied, matvec_dense_tallied, DenseMatrix,
    KroneckerPair, MacTally,
};
use crate::{Error, Result};

/// `W = B C` with `B: M×d`, `C: d×N`, `d < min(M, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPair {
    pub b: DenseMatrix,
    pub c: DenseMatrix,
}

/// Hybrid decomposition `W = [D; U V]`: an unconstrained `m1×N` block on top
/// of a rank-`r` block of `(M - m1)×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridParts {
    pub d: DenseMatrix,
    pub u: DenseMatrix,
    pub v: DenseMatrix,
}

/// Structured part of a doped weight.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredTerm {
    Kp(KroneckerPair),
    Lmf(LowRankPair),
    Hmd(HybridParts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Kp,
    Lmf,
    Hmd,
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariantKind::Kp => "kp",
            VariantKind::Lmf => "lmf",
            VariantKind::Hmd => "hmd",
        })
    }
}

impl LowRankPair {
    pub fn new(b: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        if b.cols() != c.rows() {
            return Err(Error::shape("LowRankPair", b.cols(), c.rows()));
        }
        let d = b.cols();
        if d >= b.rows().min(c.cols()) {
            return Err(Error::InvalidArgument(format!(
                "low-rank inner dimension {d} must be < min({}, {})",
                b.rows(),
                c.cols()
            )));
        }
        Ok(Self { b, c })
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }
}

impl HybridParts {
    pub fn new(d: DenseMatrix, u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let n = d.cols();
        if v.cols() != n {
            return Err(Error::shape("HybridParts V cols", n, v.cols()));
        }
        if u.cols() != v.rows() {
            return Err(Error::shape("HybridParts U cols", v.rows(), u.cols()));
        }
        Ok(Self { d, u, v })
    }

    pub fn top_rows(&self) -> usize {
        self.d.rows()
    }

    pub fn rank(&self) -> usize {
        self.v.rows()
    }
}

impl StructuredTerm {
    pub fn kind(&self) -> VariantKind {
        match self {
            StructuredTerm::Kp(_) => VariantKind::Kp,
            StructuredTerm::Lmf(_) => VariantKind::Lmf,
            StructuredTerm::Hmd(_) => VariantKind::Hmd,
        }
    }

    /// Logical `(M, N)`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            StructuredTerm::Kp(kp) => kp.shape(),
            StructuredTerm::Lmf(l) => (l.b.rows(), l.c.cols()),
            StructuredTerm::Hmd(h) => (h.d.rows() + h.u.rows(), h.d.cols()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.factors().iter().map(|f| f.len()).sum()
    }

    /// Upper bound on the rank of the expanded matrix.
    pub fn rank_bound(&self) -> usize {
        match self {
            StructuredTerm::Kp(kp) => {
                let (m1, n1, m2, n2) = kp.dims();
                m1.min(n1) * m2.min(n2)
            }
            StructuredTerm::Lmf(l) => l.rank(),
            StructuredTerm::Hmd(h) => h.top_rows() + h.rank(),
        }
    }

    /// MACs of one structured matvec through [`Self::matvec_tallied`].
    pub fn matvec_macs(&self) -> u64 {
        let (m, n) = self.shape();
        match self {
            StructuredTerm::Kp(kp) => kp.matvec_macs(),
            StructuredTerm::Lmf(l) => (l.rank() * (m + n)) as u64,
            StructuredTerm::Hmd(h) => {
                let (m1, r) = (h.top_rows(), h.rank());
                (m1 * n + r * n + r * (m - m1)) as u64
            }
        }
    }

    /// Factor matrices in a fixed order (KP: B, C; LMF: B, C; HMD: D, U, V).
    pub fn factors(&self) -> Vec<&DenseMatrix> {
        match self {
            StructuredTerm::Kp(kp) => vec![&kp.b, &kp.c],
            StructuredTerm::Lmf(l) => vec![&l.b, &l.c],
            StructuredTerm::Hmd(h) => vec![&h.d, &h.u, &h.v],
        }
    }

    pub fn factors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        match self {
            StructuredTerm::Kp(kp) => vec![&mut kp.b, &mut kp.c],
            StructuredTerm::Lmf(l) => vec![&mut l.b, &mut l.c],
            StructuredTerm::Hmd(h) => vec![&mut h.d, &mut h.u, &mut h.v],
        }
    }

    /// Same variant and factor shapes, all zeros. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for f in z.factors_mut() {
            f.fill(0.0);
        }
        z
    }

    /// Re-draws every factor from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// where fan_in is the factor's column count.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for f in self.factors_mut() {
            let bound = 1.0 / (f.cols() as f64).sqrt();
            *f = DenseMatrix::random_uniform(f.rows(), f.cols(), bound, rng);
        }
    }

    /// Dense `M×N` expansion. Oracle use only.
    pub fn expand(&self) -> Result<DenseMatrix> {
        match self {
            StructuredTerm::Kp(kp) => kp_expand(kp),
            StructuredTerm::Lmf(l) => l.b.matmul(&l.c),
            StructuredTerm::Hmd(h) => {
                let low = h.u.matmul(&h.v)?;
                let (m, n) = self.shape();
                let mut out = DenseMatrix::zeros(m, n);
                let top = h.d.len();
                out.data_mut()[..top].copy_from_slice(h.d.data());
                out.data_mut()[top..].copy_from_slice(low.data());
                Ok(out)
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matvec_tallied(x, &mut crate::linalg::NoTally)
    }

    /// Fast structured matvec: KP via `C X Bᵀ`, LMF as `B (C x)`, HMD as
    /// `[D x; U (V x)]`.
    pub fn matvec_tallied<K: MacTally>(&self, x: &[f64], tally: &mut K) -> Result<Vec<f64>> {
        let (_, n) = self.shape();
        if x.len() != n {
            return Err(Error::shape("structured matvec", n, x.len()));
        }
        match self {
            StructuredTerm::Kp(kp) => kp_matvec_tallied(kp, x, tally),
            StructuredTerm::Lmf(l) => {
                let h = matvec_dense_tallied(&l.c, x, tally)?;
                matvec_dense_tallied(&l.b, &h, tally)
            }
            StructuredTerm::Hmd(hp) => {
                let mut y = matvec_dense_tallied(&hp.d, x, tally)?;
                let h = matvec_dense_tallied(&hp.v, x, tally)?;
                y.extend(matvec_dense_tallied(&hp.u, &h, tally)?);
                Ok(y)
            }
        }
    }

    /// Gradients of `y = W x` for upstream `g`: factor gradients (as a
    /// same-shaped term) and the input gradient.
    pub fn backward(&self, x: &[f64], g: &[f64]) -> Result<(StructuredTerm, Vec<f64>)> {
        let (m, n) = self.shape();
        if x.len() != n {
            return Err(Error::shape("structured backward x", n, x.len()));
        }
        if g.len() != m {
            return Err(Error::shape("structured backward g", m, g.len()));
        }
        let outer = |a: &[f64], b: &[f64]| DenseMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j]);
        match self {
            StructuredTerm::Kp(kp) => {
                let gr = kp_matvec_backward(kp, x, g)?;
                Ok((StructuredTerm::Kp(KroneckerPair::new(gr.b, gr.c)), gr.x))
            }
            StructuredTerm::Lmf(l) => {
                let h = l.c.matvec(x)?;
                let gb = outer(g, &h);
                let gh = l.b.transpose().matvec(g)?;
                let gc = outer(&gh, x);
                let gx = l.c.transpose().matvec(&gh)?;
                Ok((StructuredTerm::Lmf(LowRankPair { b: gb, c: gc }), gx))
            }
            StructuredTerm::Hmd(hp) => {
                let m1 = hp.top_rows();
                let (gtop, gbot) = g.split_at(m1);
                let gd = outer(gtop, x);
                let h = hp.v.matvec(x)?;
                let gu = outer(gbot, &h);
                let gh = hp.u.transpose().matvec(gbot)?;
                let gv = outer(&gh, x);
                let mut gx = hp.d.transpose().matvec(gtop)?;
                for (a, b) in gx.iter_mut().zip(hp.v.transpose().matvec(&gh)?) {
                    *a += b;
                }
                Ok((StructuredTerm::Hmd(HybridParts { d: gd, u: gu, v: gv }), gx))
            }
        }
    }

    /// Batched forward of `batch` row-major inputs `z: batch×N`. Writes
    /// `batch×M` outputs into `y` and returns the intermediate needed by
    /// [`Self::backward_batch`].
    pub(crate) fn forward_batch(&self, z: &[f64], batch: usize, y: &mut [f64]) -> Vec<f64> {
        let (m, n) = self.shape();
        debug_assert_eq!(z.len(), batch * n);
        debug_assert_eq!(y.len(), batch * m);
        match self {
            StructuredTerm::Kp(kp) => {
                let (m1, n1, m2, n2) = kp.dims();
                // T = Zr Cᵀ with Zr: (batch*N1)×N2
                let mut t = vec![0.0; batch * n1 * m2];
                gemm(
                    1.0,
                    MatRef::new(z, batch * n1, n2),
                    MatRef::new(kp.c.data(), m2, n2).t(),
                    0.0,
                    MatMut::new(&mut t, batch * n1, m2),
                );
                // Y_b = B T_b
                for b in 0..batch {
                    gemm(
                        1.0,
                        MatRef::new(kp.b.data(), m1, n1),
                        MatRef::new(&t[b * n1 * m2..(b + 1) * n1 * m2], n1, m2),
                        0.0,
                        MatMut::new(&mut y[b * m..(b + 1) * m], m1, m2),
                    );
                }
                t
            }
            StructuredTerm::Lmf(l) => {
                let d = l.rank();
                let mut h = vec![0.0; batch * d];
                gemm(
                    1.0,
                    MatRef::new(z, batch, n),
                    MatRef::new(l.c.data(), d, n).t(),
                    0.0,
                    MatMut::new(&mut h, batch, d),
                );
                gemm(
                    1.0,
                    MatRef::new(&h, batch, d),
                    MatRef::new(l.b.data(), m, d).t(),
                    0.0,
                    MatMut::new(y, batch, m),
                );
                h
            }
            StructuredTerm::Hmd(hp) => {
                let (m1, r) = (hp.top_rows(), hp.rank());
                gemm(
                    1.0,
                    MatRef::new(z, batch, n),
                    MatRef::new(hp.d.data(), m1, n).t(),
                    0.0,
                    MatMut { data: &mut *y, rows: batch, cols: m1, rs: m, cs: 1 },
                );
                let mut h = vec![0.0; batch * r];
                gemm(
                    1.0,
                    MatRef::new(z, batch, n),
                    MatRef::new(hp.v.data(), r, n).t(),
                    0.0,
                    MatMut::new(&mut h, batch, r),
                );
                gemm(
                    1.0,
                    MatRef::new(&h, batch, r),
                    MatRef::new(hp.u.data(), m - m1, r).t(),
                    0.0,
                    MatMut { data: &mut y[m1..], rows: batch, cols: m - m1, rs: m, cs: 1 },
                );
                h
            }
        }
    }

    /// Accumulates factor gradients into `grads` and the input gradient into
    /// `gz` for upstream `g: batch×M`.
    pub(crate) fn backward_batch(
        &self,
        z: &[f64],
        inner: &[f64],
        g: &[f64],
        batch: usize,
        grads: &mut StructuredTerm,
        gz: &mut [f64],
    ) {
        let (m, n) = self.shape();
        match (self, grads) {
            (StructuredTerm::Kp(kp), StructuredTerm::Kp(gkp)) => {
                let (m1, n1, m2, n2) = kp.dims();
                let t = inner;
                let mut gt = vec![0.0; batch * n1 * m2];
                for b in 0..batch {
                    let gb = &g[b * m..(b + 1) * m];
                    let tb = &t[b * n1 * m2..(b + 1) * n1 * m2];
                    // dB += G_b T_bᵀ
                    gemm(
                        1.0,
                        MatRef::new(gb, m1, m2),
                        MatRef::new(tb, n1, m2).t(),
                        1.0,
                        MatMut::new(gkp.b.data_mut(), m1, n1),
                    );
                    // dT_b = Bᵀ G_b
                    gemm(
                        1.0,
                        MatRef::new(kp.b.data(), m1, n1).t(),
                        MatRef::new(gb, m1, m2),
                        0.0,
                        MatMut::new(&mut gt[b * n1 * m2..(b + 1) * n1 * m2], n1, m2),
                    );
                }
                // dC += dTᵀ Zr ; dZr += dT C
                gemm(
                    1.0,
                    MatRef::new(&gt, batch * n1, m2).t(),
                    MatRef::new(z, batch * n1, n2),
                    1.0,
                    MatMut::new(gkp.c.data_mut(), m2, n2),
                );
                gemm(
                    1.0,
                    MatRef::new(&gt, batch * n1, m2),
                    MatRef::new(kp.c.data(), m2, n2),
                    1.0,
                    MatMut::new(gz, batch * n1, n2),
                );
            }
            (StructuredTerm::Lmf(l), StructuredTerm::Lmf(gl)) => {
                let d = l.rank();
                let h = inner;
                gemm(
                    1.0,
                    MatRef::new(g, batch, m).t(),
                    MatRef::new(h, batch, d),
                    1.0,
                    MatMut::new(gl.b.data_mut(), m, d),
                );
                let mut gh = vec![0.0; batch * d];
                gemm(
                    1.0,
                    MatRef::new(g, batch, m),
                    MatRef::new(l.b.data(), m, d),
                    0.0,
                    MatMut::new(&mut gh, batch, d),
                );
                gemm(
                    1.0,
                    MatRef::new(&gh, batch, d).t(),
                    MatRef::new(z, batch, n),
                    1.0,
                    MatMut::new(gl.c.data_mut(), d, n),
                );
                gemm(
                    1.0,
                    MatRef::new(&gh, batch, d),
                    MatRef::new(l.c.data(), d, n),
                    1.0,
                    MatMut::new(gz, batch, n),
                );
            }
            (StructuredTerm::Hmd(hp), StructuredTerm::Hmd(gh_parts)) => {
                let (m1, r) = (hp.top_rows(), hp.rank());
                let h = inner;
                let gtop = MatRef { data: g, rows: batch, cols: m1, rs: m, cs: 1 };
                let gbot = MatRef { data: &g[m1..], rows: batch, cols: m - m1, rs: m, cs: 1 };
                gemm(1.0, gtop.t(), MatRef::new(z, batch, n), 1.0, MatMut::new(gh_parts.d.data_mut(), m1, n));
                gemm(1.0, gbot.t(), MatRef::new(h, batch, r), 1.0, MatMut::new(gh_parts.u.data_mut(), m - m1, r));
                let mut gh = vec![0.0; batch * r];
                gemm(1.0, gbot, MatRef::new(hp.u.data(), m - m1, r), 0.0, MatMut::new(&mut gh, batch, r));
                gemm(
                    1.0,
                    MatRef::new(&gh, batch, r).t(),
                    MatRef::new(z, batch, n),
                    1.0,
                    MatMut::new(gh_parts.v.data_mut(), r, n),
                );
                gemm(1.0, gtop, MatRef::new(hp.d.data(), m1, n), 1.0, MatMut::new(&mut *gz, batch, n));
                gemm(
                    1.0,
                    MatRef::new(&gh, batch, r),
                    MatRef::new(hp.v.data(), r, n),
                    1.0,
                    MatMut::new(gz, batch, n),
                );
            }
            _ => panic!("gradient buffer variant does not match the structured term"),
        }
    }
}
