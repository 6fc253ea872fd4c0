use doping_core::doped::VariantConfig;
use doping_core::schedules::{BcdPolicy, CmrSchedule, PenaltyConfig, PruneSchedule};
use serde::{Deserialize, Serialize};

use crate::{LmError, Result};

/// Compression of one LSTM layer's fused gate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub variant: VariantConfig,
    /// Overall layer compression factor. `None` means no doping term.
    #[serde(default)]
    pub target_cf: Option<f64>,
}

/// Pruning window in (fractional) epochs. The final sparsity of each layer
/// comes from its `target_cf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningConfig {
    pub begin_epoch: f64,
    pub end_epoch: f64,
    #[serde(default = "default_prune_every")]
    pub prune_every: u64,
    #[serde(default)]
    pub s_initial: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_prune_every() -> u64 {
    1
}

fn default_exponent() -> f64 {
    3.0
}

impl PruningConfig {
    /// Step-indexed schedule for a layer whose final sparsity is `s_final`.
    pub fn schedule(&self, steps_per_epoch: u64, s_final: f64) -> Result<PruneSchedule> {
        let begin = (self.begin_epoch * steps_per_epoch as f64).round() as u64;
        let end = ((self.end_epoch * steps_per_epoch as f64).round() as u64).max(begin + 1);
        let mut s = PruneSchedule::new(self.s_initial.min(s_final), s_final, begin, end, self.prune_every)?;
        s.exponent = self.exponent;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    /// One entry per LSTM layer.
    pub layers: Vec<LayerConfig>,
    pub bptt: usize,
    pub batch_size: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// First epoch (1-based) trained with a decayed rate.
    pub lr_decay_start: usize,
    pub max_grad_norm: f64,
    pub dropout: f64,
    pub l2: f64,
    #[serde(default = "default_forget_bias")]
    pub forget_bias: f64,
    /// Uniform init bound of the embedding and the output projection.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub pruning: Option<PruningConfig>,
    #[serde(default = "CmrSchedule::disabled")]
    pub cmr: CmrSchedule,
    #[serde(default)]
    pub cmr_share_timesteps: bool,
    #[serde(default)]
    pub bcd: BcdPolicy,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    /// Training tokens evaluated in inference mode at pruning onset and end.
    #[serde(default = "default_probe")]
    pub probe_tokens: usize,
}

fn default_eval_batch() -> usize {
    10
}

fn default_forget_bias() -> f64 {
    1.0
}

fn default_init_scale() -> f64 {
    0.1
}

fn default_probe() -> usize {
    5000
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(LmError::Config(msg()))
    }
}

impl TrainConfig {
    /// Field-level validation; run before any work starts.
    pub fn validate(&self) -> Result<()> {
        check(self.max_vocab >= 2, || format!("max_vocab must be >= 2, got {}", self.max_vocab))?;
        check(self.embed > 0, || "embed must be positive".into())?;
        check(self.hidden > 0, || "hidden must be positive".into())?;
        check(!self.layers.is_empty(), || "layers must not be empty".into())?;
        check(self.bptt > 0, || "bptt must be positive".into())?;
        check(self.batch_size > 0, || "batch_size must be positive".into())?;
        check(self.eval_batch_size > 0, || "eval_batch_size must be positive".into())?;
        check(self.epochs > 0, || "epochs must be positive".into())?;
        check(self.lr > 0.0 && self.lr.is_finite(), || format!("lr must be positive, got {}", self.lr))?;
        check(self.lr_decay > 0.0 && self.lr_decay <= 1.0, || {
            format!("lr_decay must be in (0, 1], got {}", self.lr_decay)
        })?;
        check(self.max_grad_norm > 0.0, || "max_grad_norm must be positive".into())?;
        check((0.0..1.0).contains(&self.dropout), || {
            format!("dropout must be in [0, 1), got {}", self.dropout)
        })?;
        check(self.l2 >= 0.0, || "l2 must be non-negative".into())?;
        check(self.init_scale > 0.0, || "init_scale must be positive".into())?;
        check(self.penalty.lambda >= 0.0, || "penalty.lambda must be non-negative".into())?;
        check(self.bcd.period_epochs > 0, || "bcd.period_epochs must be positive".into())?;
        self.cmr.validate().map_err(|e| LmError::Config(format!("cmr: {e}")))?;
        if let Some(p) = &self.pruning {
            check(p.begin_epoch >= 0.0 && p.end_epoch > p.begin_epoch, || {
                format!("pruning window [{}, {}] is empty", p.begin_epoch, p.end_epoch)
            })?;
            check(p.prune_every > 0, || "pruning.prune_every must be positive".into())?;
            check((0.0..=1.0).contains(&p.s_initial), || "pruning.s_initial must be in [0, 1]".into())?;
            check(p.exponent > 0.0, || "pruning.exponent must be positive".into())?;
        }
        let four_h = 4 * self.hidden;
        for (k, l) in self.layers.iter().enumerate() {
            let cols = self.hidden + if k == 0 { self.embed } else { self.hidden };
            let s = l
                .variant
                .build_zeros(four_h, cols)
                .map_err(|e| LmError::Config(format!("layers[{k}].variant: {e}")))?;
            if let Some(cf) = l.target_cf {
                doping_core::doped::nnz_target_for_cf(four_h, cols, s.param_count(), cf)
                    .map_err(|e| LmError::Config(format!("layers[{k}].target_cf: {e}")))?;
            }
        }
        Ok(())
    }

    /// Learning rate of 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let (e, start) = (epoch + 1, self.lr_decay_start.max(1));
        let decays = if e >= start { e - start + 1 } else { 0 };
        self.lr * self.lr_decay.powi(decays as i32)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| LmError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> TrainConfig {
        TrainConfig {
            seed: 1,
            max_vocab: 50,
            embed: 4,
            hidden: 4,
            layers: vec![LayerConfig {
                variant: VariantConfig::Lmf { rank: 2 },
                target_cf: None,
            }],
            bptt: 3,
            batch_size: 2,
            eval_batch_size: 2,
            epochs: 2,
            lr: 0.3,
            lr_decay: 0.5,
            lr_decay_start: 2,
            max_grad_norm: 5.0,
            dropout: 0.0,
            l2: 0.0,
            forget_bias: 1.0,
            init_scale: 0.1,
            pruning: None,
            cmr: CmrSchedule::disabled(),
            cmr_share_timesteps: false,
            bcd: BcdPolicy::default(),
            penalty: PenaltyConfig::default(),
            probe_tokens: 100,
        }
    }

    #[test]
    fn lr_decays_from_the_start_epoch() {
        let c = tiny();
        assert_eq!(c.lr_at(0), 0.3);
        assert_eq!(c.lr_at(1), 0.15);
        assert_eq!(c.lr_at(2), 0.075);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&tiny().to_json()).unwrap();
        v["bogus"] = 1.into();
        assert!(TrainConfig::from_json(&v.to_string()).is_err());
        assert!(TrainConfig::from_json(&tiny().to_json()).is_ok());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = tiny();
        c.dropout = 1.5;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("dropout"), "{e}");
        let mut c = tiny();
        c.layers[0].target_cf = Some(1000.0);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("target_cf"), "{e}");
    }
}
