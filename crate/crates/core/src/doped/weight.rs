use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sizing::{hmd_dims_for_budget, size_kp_factors, KpShape};
use super::structured::{HybridParts, LowRankPair, StructuredTerm, VariantKind};
use super::{CmrBatchMasks, CmrMasks};
use crate::linalg::gemm::{gemm, MatMut, MatRef};
use crate::linalg::{
    matvec_csr_tallied, prune_to_sparsity, CsrMatrix, DenseMatrix, KroneckerPair, MacTally,
    NoTally, PruneMask,
};
use crate::{Error, Result};

/// How the structured term is shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariantConfig {
    /// Kronecker product; explicit factor shapes, or auto-sized when absent.
    Kp {
        #[serde(default)]
        shape: Option<KpShape>,
    },
    /// Low-rank `B C` with inner dimension `rank`.
    Lmf { rank: usize },
    /// Hybrid `[D; U V]`. Either both `m1` and `rank`, or a structured
    /// parameter `budget` from which they are derived.
    Hmd {
        #[serde(default)]
        m1: Option<usize>,
        #[serde(default)]
        rank: Option<usize>,
        #[serde(default)]
        budget: Option<usize>,
    },
}

impl VariantConfig {
    pub fn kind(&self) -> VariantKind {
        match self {
            VariantConfig::Kp { .. } => VariantKind::Kp,
            VariantConfig::Lmf { .. } => VariantKind::Lmf,
            VariantConfig::Hmd { .. } => VariantKind::Hmd,
        }
    }

    /// Builds a zero-initialized structured term of logical shape `m×n`.
    pub fn build_zeros(&self, m: usize, n: usize) -> Result<StructuredTerm> {
        Ok(match self {
            VariantConfig::Kp { shape } => {
                let s = match shape {
                    Some(s) => *s,
                    None => size_kp_factors(m, n)?.shape,
                };
                s.check_fits(m, n)?;
                StructuredTerm::Kp(KroneckerPair::new(
                    DenseMatrix::zeros(s.m1, s.n1),
                    DenseMatrix::zeros(s.m2, s.n2),
                ))
            }
            VariantConfig::Lmf { rank } => {
                if *rank == 0 {
                    return Err(Error::InvalidArgument("LMF rank must be positive".into()));
                }
                StructuredTerm::Lmf(LowRankPair::new(
                    DenseMatrix::zeros(m, *rank),
                    DenseMatrix::zeros(*rank, n),
                )?)
            }
            VariantConfig::Hmd { m1, rank, budget } => {
                let (m1, r) = match (m1, rank, budget) {
                    (Some(m1), Some(r), _) => (*m1, *r),
                    (_, _, Some(p)) => hmd_dims_for_budget(m, n, *p)?,
                    _ => {
                        return Err(Error::InvalidArgument(
                            "HMD needs either m1 and rank, or a budget".into(),
                        ))
                    }
                };
                if m1 == 0 || m1 >= m || r == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "HMD needs 0 < m1 < {m} and rank >= 1, got m1={m1}, rank={r}"
                    )));
                }
                StructuredTerm::Hmd(HybridParts::new(
                    DenseMatrix::zeros(m1, n),
                    DenseMatrix::zeros(m - m1, r),
                    DenseMatrix::zeros(r, n),
                )?)
            }
        })
    }
}

/// Multiply-accumulate accounting of one matvec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCount {
    pub dense: u64,
    pub structured: u64,
    pub sparse: u64,
}

impl MacCount {
    pub fn total(&self) -> u64 {
        self.structured + self.sparse
    }

    pub fn reduction(&self) -> f64 {
        self.dense as f64 / self.total().max(1) as f64
    }
}

/// `W = α·S + β·(mask ⊙ Ws)` where `S` is a structured term and `Ws` the
/// doping term.
///
/// Dead positions of `ws` hold exactly zero at all times. `alpha` and `beta`
/// stay at 1 unless a penalty variant trains them.
#[derive(Debug, Clone, PartialEq)]
pub struct DopedWeight {
    structured: StructuredTerm,
    ws: DenseMatrix,
    mask: PruneMask,
    alpha: f64,
    beta: f64,
    nnz_target: usize,
    frozen: Option<CsrMatrix>,
}

/// Gradients of a [`DopedWeight`], shaped like the weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DopedGrads {
    pub structured: StructuredTerm,
    pub ws: DenseMatrix,
    pub alpha: f64,
    pub beta: f64,
}

impl DopedGrads {
    pub fn zeros_like(w: &DopedWeight) -> Self {
        Self {
            structured: w.structured.zeros_like(),
            ws: DenseMatrix::zeros(w.ws.rows(), w.ws.cols()),
            alpha: 0.0,
            beta: 0.0,
        }
    }

    pub fn clear(&mut self) {
        for f in self.structured.factors_mut() {
            f.fill(0.0);
        }
        self.ws.fill(0.0);
        self.alpha = 0.0;
        self.beta = 0.0;
    }
}

/// Intermediates of [`DopedWeight::forward_batch`].
#[derive(Debug, Clone)]
pub struct DopedCache {
    batch: usize,
    yk: Vec<f64>,
    ys: Vec<f64>,
    inner: Vec<f64>,
}

/// Parameter budget implied by a target compression factor, and the number
/// of doping weights left after the structured term is paid for.
///
/// A structured term larger than the budget is an error, with half a
/// parameter of rounding slack so that `target_cf = M*N / structured_params`
/// yields a pure structured matrix.
pub fn nnz_target_for_cf(m: usize, n: usize, structured_params: usize, target_cf: f64) -> Result<usize> {
    if !(target_cf > 1.0) {
        return Err(Error::InvalidArgument(format!("target CF must exceed 1, got {target_cf}")));
    }
    let budget = (m * n) as f64 / target_cf;
    let remaining = budget - structured_params as f64;
    if remaining < -0.5 {
        return Err(Error::BudgetExceeded {
            structured: structured_params,
            budget,
        });
    }
    Ok((remaining.round().max(0.0) as usize).min(m * n))
}

/// Builds a randomly initialized doped weight of logical shape `m×n`.
///
/// With `target_cf = Some(cf)` the doping term starts dense and the final
/// non-zero budget is `M*N/cf - structured_params`. With `None` there is no
/// doping: the mask starts all dead and the weight is purely structured.
///
/// Structured factors are drawn from uniform(±1/sqrt(fan_in)) per factor;
/// the doping term uses the same bound (fan_in = N) scaled by 0.5.
pub fn make_doped<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    variant: &VariantConfig,
    target_cf: Option<f64>,
    rng: &mut R,
) -> Result<DopedWeight> {
    let mut structured = variant.build_zeros(m, n)?;
    let params = structured.param_count();
    let (nnz_target, mask) = match target_cf {
        Some(cf) => (nnz_target_for_cf(m, n, params, cf)?, PruneMask::all_alive(m, n)),
        None => (0, PruneMask::all_dead(m, n)),
    };
    structured.randomize(rng);
    let ws = if target_cf.is_some() {
        DenseMatrix::random_uniform(m, n, 0.5 / (n as f64).sqrt(), rng)
    } else {
        DenseMatrix::zeros(m, n)
    };
    DopedWeight::from_parts(structured, ws, mask, 1.0, 1.0, nnz_target)
}

impl DopedWeight {
    /// Assembles a weight from parts; dead positions of `ws` are zeroed.
    pub fn from_parts(
        structured: StructuredTerm,
        mut ws: DenseMatrix,
        mask: PruneMask,
        alpha: f64,
        beta: f64,
        nnz_target: usize,
    ) -> Result<Self> {
        let (m, n) = structured.shape();
        if ws.shape() != (m, n) || (mask.rows(), mask.cols()) != (m, n) {
            return Err(Error::shape(
                "DopedWeight::from_parts",
                format!("{m}x{n}"),
                format!("ws {:?}, mask {}x{}", ws.shape(), mask.rows(), mask.cols()),
            ));
        }
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArgument("alpha and beta must be finite".into()));
        }
        mask.apply(&mut ws);
        Ok(Self {
            structured,
            ws,
            mask,
            alpha,
            beta,
            nnz_target,
            frozen: None,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.structured.shape()
    }

    pub fn kind(&self) -> VariantKind {
        self.structured.kind()
    }

    pub fn structured(&self) -> &StructuredTerm {
        &self.structured
    }

    pub fn structured_mut(&mut self) -> &mut StructuredTerm {
        &mut self.structured
    }

    pub fn ws(&self) -> &DenseMatrix {
        &self.ws
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_alpha(&mut self, v: f64) {
        self.alpha = v;
    }

    pub fn set_beta(&mut self, v: f64) {
        self.beta = v;
    }

    pub fn nnz_target(&self) -> usize {
        self.nnz_target
    }

    /// Final sparsity implied by the non-zero target.
    pub fn target_sparsity(&self) -> f64 {
        let (m, n) = self.shape();
        1.0 - self.nnz_target as f64 / (m * n) as f64
    }

    pub fn frozen(&self) -> Option<&CsrMatrix> {
        self.frozen.as_ref()
    }

    /// True when the doping term has no surviving weights.
    pub fn is_pure_structured(&self) -> bool {
        self.mask.alive_count() == 0
    }

    /// Mutates the doping term; dead positions are re-zeroed afterwards and
    /// any frozen CSR copy is dropped.
    pub fn update_ws(&mut self, f: impl FnOnce(&mut DenseMatrix)) {
        f(&mut self.ws);
        self.mask.apply(&mut self.ws);
        self.frozen = None;
    }

    /// Magnitude-prunes the doping term to `target_sparsity`.
    pub fn prune_to(&mut self, target_sparsity: f64) -> Result<()> {
        self.mask = prune_to_sparsity(&self.ws, &self.mask, target_sparsity)?;
        self.mask.apply(&mut self.ws);
        self.frozen = None;
        Ok(())
    }

    pub fn sparsity(&self) -> f64 {
        self.mask.sparsity()
    }

    /// Surviving doping weights.
    pub fn nnz(&self) -> usize {
        self.mask.alive_count()
    }

    /// `M*N / (structured_params + nnz)`. Values below 1 are possible while
    /// the doping term is still dense.
    pub fn compression_factor(&self) -> f64 {
        let (m, n) = self.shape();
        (m * n) as f64 / (self.structured.param_count() + self.nnz()) as f64
    }

    /// MACs of one inference matvec.
    pub fn mac_count(&self) -> MacCount {
        let (m, n) = self.shape();
        let sparse = match &self.frozen {
            Some(csr) => csr.nnz(),
            None => self.nnz(),
        };
        MacCount {
            dense: (m * n) as u64,
            structured: self.structured.matvec_macs(),
            sparse: sparse as u64,
        }
    }

    /// Moves the masked doping term into CSR form for inference.
    pub fn freeze_for_inference(&self) -> DopedWeight {
        let mut w = self.clone();
        w.frozen = Some(CsrMatrix::from_masked(&w.ws, &w.mask).expect("mask shape matches ws"));
        w
    }

    /// `mask ⊙ ws` times `x`, visiting only alive entries (CSR when frozen).
    pub fn sparse_matvec_tallied<K: MacTally>(&self, x: &[f64], tally: &mut K) -> Result<Vec<f64>> {
        let (m, n) = self.shape();
        if x.len() != n {
            return Err(Error::shape("doped sparse matvec", n, x.len()));
        }
        if let Some(csr) = &self.frozen {
            return matvec_csr_tallied(csr, x, tally);
        }
        let mut y = vec![0.0; m];
        let bits = self.mask.bits();
        for (i, yi) in y.iter_mut().enumerate() {
            let row = self.ws.row(i);
            let alive = &bits[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for ((&w, &a), &xv) in row.iter().zip(alive).zip(x) {
                if a {
                    acc += w * xv;
                    tally.mac();
                }
            }
            *yi = acc;
        }
        Ok(y)
    }

    pub fn forward(&self, x: &[f64], masks: Option<&CmrMasks>) -> Result<Vec<f64>> {
        self.forward_tallied(x, masks, &mut NoTally)
    }

    /// `y[j] = b1[j]·α·(S x)[j] + b2[j]·β·((mask ⊙ Ws) x)[j]`, without any
    /// dropout rescaling.
    pub fn forward_tallied<K: MacTally>(
        &self,
        x: &[f64],
        masks: Option<&CmrMasks>,
        tally: &mut K,
    ) -> Result<Vec<f64>> {
        let (m, _) = self.shape();
        if let Some(mk) = masks {
            if mk.b1.len() != m || mk.b2.len() != m {
                return Err(Error::shape("doped_forward masks", m, mk.b1.len().min(mk.b2.len())));
            }
        }
        let yk = self.structured.matvec_tallied(x, tally)?;
        let ys = self.sparse_matvec_tallied(x, tally)?;
        Ok((0..m)
            .map(|j| {
                let (k1, k2) = masks.map_or((true, true), |mk| (mk.b1[j], mk.b2[j]));
                let a = if k1 { self.alpha * yk[j] } else { 0.0 };
                let b = if k2 { self.beta * ys[j] } else { 0.0 };
                a + b
            })
            .collect())
    }

    /// Gradients of the [`Self::forward`] output for upstream `g`. Returns the
    /// parameter gradients and the input gradient. The doping-term gradient is
    /// zero on dead positions and on rows whose `b2` bit is dropped.
    pub fn backward(&self, x: &[f64], g: &[f64], masks: Option<&CmrMasks>) -> Result<(DopedGrads, Vec<f64>)> {
        let (m, n) = self.shape();
        if x.len() != n {
            return Err(Error::shape("doped_backward x", n, x.len()));
        }
        if g.len() != m {
            return Err(Error::shape("doped_backward g", m, g.len()));
        }
        if let Some(mk) = masks {
            if mk.b1.len() != m || mk.b2.len() != m {
                return Err(Error::shape("doped_backward masks", m, mk.b1.len().min(mk.b2.len())));
            }
        }
        let keep = |j: usize| masks.map_or((true, true), |mk| (mk.b1[j], mk.b2[j]));
        let yk = self.structured.matvec(x)?;
        let ys = self.sparse_matvec_tallied(x, &mut NoTally)?;
        let mut gk = vec![0.0; m];
        let mut gs = vec![0.0; m];
        let (mut galpha, mut gbeta) = (0.0, 0.0);
        for j in 0..m {
            let (k1, k2) = keep(j);
            if k1 {
                gk[j] = self.alpha * g[j];
                galpha += g[j] * yk[j];
            }
            if k2 {
                gs[j] = self.beta * g[j];
                gbeta += g[j] * ys[j];
            }
        }
        let (gstruct, mut gx) = self.structured.backward(x, &gk)?;
        let mut gws = DenseMatrix::zeros(m, n);
        for i in 0..m {
            if gs[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if self.mask.is_alive(i, j) {
                    gws.set(i, j, gs[i] * x[j]);
                    gx[j] += self.ws.get(i, j) * gs[i];
                }
            }
        }
        Ok((
            DopedGrads {
                structured: gstruct,
                ws: gws,
                alpha: galpha,
                beta: gbeta,
            },
            gx,
        ))
    }

    /// Batched forward over row-major `z: batch×N`; returns `batch×M`
    /// outputs and the cache for [`Self::backward_batch`].
    pub fn forward_batch(
        &self,
        z: &[f64],
        batch: usize,
        masks: Option<&CmrBatchMasks>,
    ) -> Result<(Vec<f64>, DopedCache)> {
        let (m, n) = self.shape();
        if z.len() != batch * n {
            return Err(Error::shape("doped forward_batch", batch * n, z.len()));
        }
        if let Some(mk) = masks {
            if mk.batch != batch || mk.m != m {
                return Err(Error::shape(
                    "doped forward_batch masks",
                    format!("{batch}x{m}"),
                    format!("{}x{}", mk.batch, mk.m),
                ));
            }
        }
        let mut yk = vec![0.0; batch * m];
        let inner = self.structured.forward_batch(z, batch, &mut yk);
        let mut ys = vec![0.0; batch * m];
        if let Some(csr) = &self.frozen {
            for b in 0..batch {
                let row = matvec_csr_tallied(csr, &z[b * n..(b + 1) * n], &mut NoTally)?;
                ys[b * m..(b + 1) * m].copy_from_slice(&row);
            }
        } else if !self.is_pure_structured() {
            gemm(
                1.0,
                MatRef::new(z, batch, n),
                MatRef::new(self.ws.data(), m, n).t(),
                0.0,
                MatMut::new(&mut ys, batch, m),
            );
        }
        let mut y = vec![0.0; batch * m];
        for k in 0..batch * m {
            let (k1, k2) = masks.map_or((true, true), |mk| (mk.b1[k], mk.b2[k]));
            let a = if k1 { self.alpha * yk[k] } else { 0.0 };
            let s = if k2 { self.beta * ys[k] } else { 0.0 };
            y[k] = a + s;
        }
        Ok((y, DopedCache { batch, yk, ys, inner }))
    }

    /// Accumulates gradients of a batched forward into `grads` and adds the
    /// input gradient into `gz` (`batch×N`).
    pub fn backward_batch(
        &self,
        z: &[f64],
        cache: &DopedCache,
        g: &[f64],
        masks: Option<&CmrBatchMasks>,
        grads: &mut DopedGrads,
        gz: &mut [f64],
    ) -> Result<()> {
        let (m, n) = self.shape();
        let batch = cache.batch;
        if z.len() != batch * n || g.len() != batch * m || gz.len() != batch * n {
            return Err(Error::shape(
                "doped backward_batch",
                format!("z {}, g {}", batch * n, batch * m),
                format!("z {}, g {}, gz {}", z.len(), g.len(), gz.len()),
            ));
        }
        let mut gk = vec![0.0; batch * m];
        let mut gs = vec![0.0; batch * m];
        for k in 0..batch * m {
            let (k1, k2) = masks.map_or((true, true), |mk| (mk.b1[k], mk.b2[k]));
            if k1 {
                gk[k] = self.alpha * g[k];
                grads.alpha += g[k] * cache.yk[k];
            }
            if k2 {
                gs[k] = self.beta * g[k];
                grads.beta += g[k] * cache.ys[k];
            }
        }
        self.structured
            .backward_batch(z, &cache.inner, &gk, batch, &mut grads.structured, gz);
        if !self.is_pure_structured() {
            gemm(
                1.0,
                MatRef::new(&gs, batch, m).t(),
                MatRef::new(z, batch, n),
                1.0,
                MatMut::new(grads.ws.data_mut(), m, n),
            );
            self.mask.apply(&mut grads.ws);
            gemm(
                1.0,
                MatRef::new(&gs, batch, m),
                MatRef::new(self.ws.data(), m, n),
                1.0,
                MatMut::new(gz, batch, n),
            );
        }
        Ok(())
    }
}
