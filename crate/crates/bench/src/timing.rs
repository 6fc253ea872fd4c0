use std::hint::black_box;
use std::time::Instant;

use doping_core::doped::{DopedWeight, KpShape, StructuredTerm};
use doping_core::linalg::{kp_matvec, matvec_csr, CsrMatrix, DenseMatrix, KroneckerPair, PruneMask};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Dense,
    Csr,
    Kp,
    Doped,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Dense => "dense",
            KernelKind::Csr => "csr",
            KernelKind::Kp => "kp",
            KernelKind::Doped => "doped",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(KernelKind::Dense),
            "csr" => Ok(KernelKind::Csr),
            "kp" => Ok(KernelKind::Kp),
            "doped" => Ok(KernelKind::Doped),
            _ => Err(BenchError::Invalid(format!("unknown kernel {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSpec {
    pub kind: KernelKind,
    pub rows: usize,
    pub cols: usize,
    /// Fraction of zeros in the sparse operand (CSR and doped only).
    pub sparsity: f64,
    /// Kronecker factor shapes (KP and doped only).
    pub kp: Option<KpShape>,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl TimingSpec {
    pub fn new(kind: KernelKind, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            rows,
            cols,
            sparsity: 0.0,
            kp: None,
            warmup: 10,
            iters: 30,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Invalid(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("empty shape {}x{}", self.rows, self.cols));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad(format!("sparsity {} outside [0, 1)", self.sparsity));
        }
        if self.warmup < 10 || self.iters < 30 {
            return bad(format!(
                "need at least 10 warmups and 30 iterations, got {} and {}",
                self.warmup, self.iters
            ));
        }
        match (self.kind, self.kp) {
            (KernelKind::Kp | KernelKind::Doped, None) => bad(format!("{} needs factor shapes", self.kind)),
            (KernelKind::Kp | KernelKind::Doped, Some(s)) if s.logical() != (self.rows, self.cols) => bad(format!(
                "factors give {:?}, expected {}x{}",
                s.logical(),
                self.rows,
                self.cols
            )),
            (KernelKind::Dense | KernelKind::Csr, Some(_)) => bad(format!("{} takes no factor shapes", self.kind)),
            (KernelKind::Dense | KernelKind::Kp, _) if self.sparsity != 0.0 => {
                bad(format!("{} has no sparse operand", self.kind))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub kind: KernelKind,
    pub rows: usize,
    pub cols: usize,
    pub sparsity: f64,
    pub iterations: usize,
    pub warmup: usize,
    /// MACs of one call.
    pub macs: u64,
    /// Seconds per call.
    pub median_s: f64,
    pub mean_s: f64,
    pub p95_s: f64,
    /// Dense median over this kernel's median.
    pub speedup: f64,
}

struct Stats {
    median: f64,
    mean: f64,
    p95: f64,
}

/// Calls per timed sample, so that one sample lasts at least ~50 µs and
/// timer resolution does not dominate.
fn calls_per_sample(f: &mut impl FnMut()) -> usize {
    let t = Instant::now();
    f();
    let one = t.elapsed().as_secs_f64().max(1e-9);
    ((50e-6 / one).ceil() as usize).clamp(1, 10_000)
}

fn measure(warmup: usize, iters: usize, mut f: impl FnMut()) -> Stats {
    for _ in 0..warmup {
        f();
    }
    let reps = calls_per_sample(&mut f);
    let mut samples: Vec<f64> = (0..iters)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let p95 = samples[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    Stats {
        median,
        mean: samples.iter().sum::<f64>() / n as f64,
        p95,
    }
}

fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::random_uniform(rows, cols, 1.0, rng)
}

/// Uniformly random pattern with exactly `round(sparsity · rows · cols)`
/// zeros.
fn random_mask(rows: usize, cols: usize, sparsity: f64, rng: &mut ChaCha8Rng) -> Result<PruneMask> {
    let n = rows * cols;
    let dead = (sparsity * n as f64).round() as usize;
    let mut bits = vec![true; n];
    for i in sample(rng, n, dead) {
        bits[i] = false;
    }
    Ok(PruneMask::from_bits(rows, cols, bits)?)
}

fn random_kp(s: KpShape, rng: &mut ChaCha8Rng) -> KroneckerPair {
    KroneckerPair::new(random_dense(s.m1, s.n1, rng), random_dense(s.m2, s.n2, rng))
}

/// Times one kernel against a dense matvec of the same logical shape, in
/// the same process, on the calling thread.
pub fn time_matvec(spec: &TimingSpec) -> Result<TimingResult> {
    spec.validate()?;
    let (m, n) = (spec.rows, spec.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dense = random_dense(m, n, &mut rng);
    let base = measure(spec.warmup, spec.iters, || {
        black_box(dense.matvec(black_box(&x)).unwrap());
    });

    let (stats, macs) = match spec.kind {
        KernelKind::Dense => {
            let s = measure(spec.warmup, spec.iters, || {
                black_box(dense.matvec(black_box(&x)).unwrap());
            });
            (s, (m * n) as u64)
        }
        KernelKind::Csr => {
            let mask = random_mask(m, n, spec.sparsity, &mut rng)?;
            let csr = CsrMatrix::from_masked(&random_dense(m, n, &mut rng), &mask)?;
            let macs = csr.nnz() as u64;
            let s = measure(spec.warmup, spec.iters, || {
                black_box(matvec_csr(&csr, black_box(&x)).unwrap());
            });
            (s, macs)
        }
        KernelKind::Kp => {
            let kp = random_kp(spec.kp.expect("validated"), &mut rng);
            let macs = kp.matvec_macs();
            let s = measure(spec.warmup, spec.iters, || {
                black_box(kp_matvec(&kp, black_box(&x)).unwrap());
            });
            (s, macs)
        }
        KernelKind::Doped => {
            let kp = random_kp(spec.kp.expect("validated"), &mut rng);
            let mask = random_mask(m, n, spec.sparsity, &mut rng)?;
            let mut ws = random_dense(m, n, &mut rng);
            mask.apply(&mut ws);
            let nnz = mask.alive_count();
            let w = DopedWeight::from_parts(StructuredTerm::Kp(kp), ws, mask, 1.0, 1.0, nnz)?.freeze_for_inference();
            let macs = w.mac_count().total();
            let s = measure(spec.warmup, spec.iters, || {
                black_box(w.forward(black_box(&x), None).unwrap());
            });
            (s, macs)
        }
    };
    Ok(TimingResult {
        kind: spec.kind,
        rows: m,
        cols: n,
        sparsity: spec.sparsity,
        iterations: spec.iters,
        warmup: spec.warmup,
        macs,
        median_s: stats.median,
        mean_s: stats.mean,
        p95_s: stats.p95,
        speedup: base.median / stats.median,
    })
}

/// CSR timings across `sparsities`. Each point is repeated `repeats` times
/// and the run with the median speedup is kept.
pub fn csr_sparsity_sweep(rows: usize, cols: usize, sparsities: &[f64], repeats: usize, seed: u64) -> Result<Vec<TimingResult>> {
    if repeats == 0 {
        return Err(BenchError::Invalid("repeats must be positive".into()));
    }
    sparsities
        .iter()
        .map(|&s| {
            let mut runs = (0..repeats)
                .map(|r| {
                    let mut spec = TimingSpec::new(KernelKind::Csr, rows, cols);
                    spec.sparsity = s;
                    spec.seed = seed.wrapping_add(r as u64);
                    time_matvec(&spec)
                })
                .collect::<Result<Vec<_>>>()?;
            runs.sort_by(|a, b| a.speedup.total_cmp(&b.speedup));
            Ok(runs.swap_remove(repeats / 2))
        })
        .collect()
}
