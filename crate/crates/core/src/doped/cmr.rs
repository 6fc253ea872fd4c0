use rand::Rng;

/// Co-matrix dropout masks for one output vector. `b1` gates the structured
/// contribution and `b2` the sparse one; `true` keeps the term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmrMasks {
    pub b1: Vec<bool>,
    pub b2: Vec<bool>,
}

impl CmrMasks {
    pub fn keep_all(m: usize) -> Self {
        Self {
            b1: vec![true; m],
            b2: vec![true; m],
        }
    }

    pub fn drop_all(m: usize) -> Self {
        Self {
            b1: vec![false; m],
            b2: vec![false; m],
        }
    }

    /// Independent draws per output element; each bit is dropped with
    /// probability `p`.
    pub fn draw<R: Rng + ?Sized>(m: usize, p: f64, rng: &mut R) -> Self {
        let mut draw = || (0..m).map(|_| !rng.gen_bool(p)).collect::<Vec<_>>();
        let b1 = draw();
        let b2 = draw();
        Self { b1, b2 }
    }

    pub fn len(&self) -> usize {
        self.b1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b1.is_empty()
    }
}

/// Masks for a batch, row-major `batch × M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmrBatchMasks {
    pub batch: usize,
    pub m: usize,
    pub b1: Vec<bool>,
    pub b2: Vec<bool>,
}

impl CmrBatchMasks {
    pub fn draw<R: Rng + ?Sized>(batch: usize, m: usize, p: f64, rng: &mut R) -> Self {
        let n = batch * m;
        let mut b1 = Vec::with_capacity(n);
        let mut b2 = Vec::with_capacity(n);
        for _ in 0..n {
            b1.push(!rng.gen_bool(p));
        }
        for _ in 0..n {
            b2.push(!rng.gen_bool(p));
        }
        Self { batch, m, b1, b2 }
    }

    pub fn keep_all(batch: usize, m: usize) -> Self {
        Self {
            batch,
            m,
            b1: vec![true; batch * m],
            b2: vec![true; batch * m],
        }
    }

    pub fn row(&self, b: usize) -> CmrMasks {
        CmrMasks {
            b1: self.b1[b * self.m..(b + 1) * self.m].to_vec(),
            b2: self.b2[b * self.m..(b + 1) * self.m].to_vec(),
        }
    }
}
