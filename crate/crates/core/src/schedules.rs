//! Step-indexed training controllers: gradual sparsity annealing, co-matrix
//! dropout schedules, block-coordinate-descent gating and the α/β penalty
//! terms.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_exponent() -> f64 {
    3.0
}

fn default_prune_every() -> u64 {
    1
}

/// Gradual magnitude-pruning schedule:
/// `s(t) = s_f + (s_i - s_f) * (1 - (t - t0) / (t1 - t0))^exponent`,
/// evaluated on multiples of `prune_every` after `begin_step` and held
/// constant in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSchedule {
    #[serde(default)]
    pub s_initial: f64,
    pub s_final: f64,
    pub begin_step: u64,
    pub end_step: u64,
    #[serde(default = "default_prune_every")]
    pub prune_every: u64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

impl PruneSchedule {
    pub fn new(s_initial: f64, s_final: f64, begin_step: u64, end_step: u64, prune_every: u64) -> Result<Self> {
        let s = Self {
            s_initial,
            s_final,
            begin_step,
            end_step,
            prune_every,
            exponent: 3.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s_initial && self.s_initial <= self.s_final && self.s_final <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= s_initial ({}) <= s_final ({}) <= 1",
                self.s_initial, self.s_final
            )));
        }
        if self.begin_step >= self.end_step {
            return Err(Error::InvalidArgument(format!(
                "begin_step ({}) must be < end_step ({})",
                self.begin_step, self.end_step
            )));
        }
        if self.prune_every == 0 {
            return Err(Error::InvalidArgument("prune_every must be positive".into()));
        }
        if !(self.exponent > 0.0) {
            return Err(Error::InvalidArgument("exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn sparsity_at(&self, step: u64) -> f64 {
        if step < self.begin_step {
            return self.s_initial;
        }
        if step >= self.end_step {
            return self.s_final;
        }
        let offset = step - self.begin_step;
        let snapped = offset - offset % self.prune_every;
        if snapped == 0 {
            return self.s_initial;
        }
        let span = (self.end_step - self.begin_step) as f64;
        let frac = 1.0 - snapped as f64 / span;
        self.s_final + (self.s_initial - self.s_final) * frac.powf(self.exponent)
    }

    /// Steps at which the mask should be updated.
    pub fn is_prune_step(&self, step: u64) -> bool {
        (step >= self.begin_step && step < self.end_step && (step - self.begin_step) % self.prune_every == 0)
            || step == self.end_step
    }

    pub fn final_density(&self) -> f64 {
        1.0 - self.s_final
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CmrKind {
    Constant,
    LinDec,
    ExpDec,
}

/// Co-matrix dropout schedule. `p0` is a *drop* probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmrSchedule {
    pub kind: CmrKind,
    pub p0: f64,
}

impl CmrSchedule {
    pub fn disabled() -> Self {
        Self {
            kind: CmrKind::Constant,
            p0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p0) {
            return Err(Error::InvalidArgument(format!("CMR p0 {} outside [0, 1)", self.p0)));
        }
        Ok(())
    }

    /// Drop probability at `step`, with the pruning window taken from
    /// `prune`. `current_density` is the alive fraction of the doping term.
    pub fn p_at(&self, prune: &PruneSchedule, step: u64, current_density: f64) -> f64 {
        let p = match self.kind {
            CmrKind::Constant => self.p0,
            CmrKind::LinDec => {
                if step < prune.begin_step {
                    self.p0
                } else if step >= prune.end_step {
                    0.0
                } else {
                    let span = (prune.end_step - prune.begin_step) as f64;
                    self.p0 * (1.0 - (step - prune.begin_step) as f64 / span)
                }
            }
            CmrKind::ExpDec => {
                let d_final = prune.final_density();
                if step < prune.begin_step {
                    self.p0
                } else if step >= prune.end_step || current_density <= d_final + 1e-12 || d_final >= 1.0 {
                    0.0
                } else {
                    self.p0 * (current_density - d_final) / (1.0 - d_final)
                }
            }
        };
        p.clamp(0.0, self.p0)
    }
}

/// Which block receives gradients in a given epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientGate {
    Structured,
    Sparse,
    Both,
}

impl GradientGate {
    pub fn structured(self) -> bool {
        matches!(self, GradientGate::Structured | GradientGate::Both)
    }

    pub fn sparse(self) -> bool {
        matches!(self, GradientGate::Sparse | GradientGate::Both)
    }
}

fn default_period() -> u64 {
    1
}

/// Block coordinate descent: alternate the structured and sparse blocks
/// every `period_epochs` epochs, starting with the structured block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcdPolicy {
    pub enabled: bool,
    #[serde(default = "default_period")]
    pub period_epochs: u64,
}

impl Default for BcdPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            period_epochs: 1,
        }
    }
}

impl BcdPolicy {
    pub fn gate(&self, epoch: u64) -> GradientGate {
        if !self.enabled {
            return GradientGate::Both;
        }
        if (epoch / self.period_epochs.max(1)) % 2 == 0 {
            GradientGate::Structured
        } else {
            GradientGate::Sparse
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    None,
    /// `W = B⊗C + β Ws`, minimize `|β|`.
    SparseScale,
    /// `W = α (B⊗C) + β Ws`, minimize `|β| + 1/|α|`.
    BothScales,
}

fn default_lambda() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            mode: PenaltyMode::None,
            lambda: default_lambda(),
        }
    }
}

const ALPHA_POLE_GUARD: f64 = 1e-8;

impl PenaltyConfig {
    pub fn trains_alpha(&self) -> bool {
        self.mode == PenaltyMode::BothScales
    }

    pub fn trains_beta(&self) -> bool {
        self.mode != PenaltyMode::None
    }

    pub fn loss(&self, alpha: f64, beta: f64) -> Result<f64> {
        match self.mode {
            PenaltyMode::None => Ok(0.0),
            PenaltyMode::SparseScale => Ok(self.lambda * beta.abs()),
            PenaltyMode::BothScales => {
                if alpha.abs() < ALPHA_POLE_GUARD {
                    return Err(Error::InvalidArgument(format!(
                        "|alpha| = {} is below the 1/|alpha| pole guard",
                        alpha.abs()
                    )));
                }
                Ok(self.lambda * (beta.abs() + 1.0 / alpha.abs()))
            }
        }
    }

    /// `(d/dα, d/dβ)` of [`Self::loss`], taking the subgradient 0 at `β = 0`.
    pub fn grad(&self, alpha: f64, beta: f64) -> Result<(f64, f64)> {
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        match self.mode {
            PenaltyMode::None => Ok((0.0, 0.0)),
            PenaltyMode::SparseScale => Ok((0.0, self.lambda * sign(beta))),
            PenaltyMode::BothScales => {
                if alpha.abs() < ALPHA_POLE_GUARD {
                    return Err(Error::InvalidArgument(format!(
                        "|alpha| = {} is below the 1/|alpha| pole guard",
                        alpha.abs()
                    )));
                }
                Ok((-self.lambda * sign(alpha) / (alpha * alpha), self.lambda * sign(beta)))
            }
        }
    }
}
