use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Factor shapes of a Kronecker pair: `B: m1×n1`, `C: m2×n2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpShape {
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
}

impl KpShape {
    pub fn new(m1: usize, n1: usize, m2: usize, n2: usize) -> Self {
        Self { m1, n1, m2, n2 }
    }

    pub fn param_count(&self) -> usize {
        self.m1 * self.n1 + self.m2 * self.n2
    }

    pub fn rank_bound(&self) -> usize {
        self.m1.min(self.n1) * self.m2.min(self.n2)
    }

    pub fn logical(&self) -> (usize, usize) {
        (self.m1 * self.m2, self.n1 * self.n2)
    }

    pub fn check_fits(&self, m: usize, n: usize) -> Result<()> {
        if self.m1 == 0 || self.n1 == 0 || self.m2 == 0 || self.n2 == 0 {
            return Err(Error::InvalidArgument("Kronecker factor dims must be positive".into()));
        }
        if m % self.m1 != 0 {
            return Err(Error::NotDivisible { what: "rows", dim: m, factor: self.m1 });
        }
        if n % self.n1 != 0 {
            return Err(Error::NotDivisible { what: "cols", dim: n, factor: self.n1 });
        }
        if self.logical() != (m, n) {
            return Err(Error::shape(
                "Kronecker shape",
                format!("{m}x{n}"),
                format!("{}x{}", self.m1 * self.m2, self.n1 * self.n2),
            ));
        }
        Ok(())
    }
}

/// Result of [`size_kp_factors`]. `degenerate` is set when no split with
/// every dimension ≥ 2 exists and a factor of size 1 had to be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KpSizing {
    pub shape: KpShape,
    pub degenerate: bool,
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Picks Kronecker factor shapes for an `m×n` matrix: maximum rank bound
/// `min(m1,n1)*min(m2,n2)`, then fewest parameters, then lexicographically
/// smallest `(m1, n1, m2, n2)`.
pub fn size_kp_factors(m: usize, n: usize) -> Result<KpSizing> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("cannot size a {m}x{n} matrix")));
    }
    let pick = |min_dim: usize| -> Option<KpShape> {
        let mut best: Option<KpShape> = None;
        for &m1 in &divisors(m) {
            for &n1 in &divisors(n) {
                let s = KpShape::new(m1, n1, m / m1, n / n1);
                if [s.m1, s.n1, s.m2, s.n2].iter().any(|&d| d < min_dim) {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let key = |k: &KpShape| {
                            (std::cmp::Reverse(k.rank_bound()), k.param_count(), (k.m1, k.n1, k.m2, k.n2))
                        };
                        key(&s) < key(b)
                    }
                };
                if better {
                    best = Some(s);
                }
            }
        }
        best
    };
    if let Some(shape) = pick(2) {
        return Ok(KpSizing { shape, degenerate: false });
    }
    let shape = pick(1).expect("1x1 split always exists");
    Ok(KpSizing { shape, degenerate: true })
}

/// Hybrid block sizes for a structured parameter budget: `r = round(P / (M + 2N))`
/// and `m1 = r`, both clamped so the result is a valid split.
pub fn hmd_dims_for_budget(m: usize, n: usize, budget: usize) -> Result<(usize, usize)> {
    if m < 2 || n == 0 {
        return Err(Error::InvalidArgument(format!("HMD needs at least 2 rows, got {m}x{n}")));
    }
    let r = ((budget as f64 / (m + 2 * n) as f64).round() as usize).max(1);
    let m1 = r.clamp(1, m - 1);
    Ok((m1, r))
}

/// HMD parameter count `m1*N + r*(M - m1) + r*N`.
pub fn hmd_param_count(m: usize, n: usize, m1: usize, r: usize) -> usize {
    m1 * n + r * (m - m1) + r * n
}
