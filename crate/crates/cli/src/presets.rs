use doping_core::doped::{KpShape, VariantConfig};
use doping_core::schedules::{BcdPolicy, CmrKind, CmrSchedule, PenaltyConfig};
use doping_lm::{LayerConfig, PruningConfig, TrainConfig};

use crate::{CliError, Result};

pub const PRESETS: &[&str] = &["medium-lm-toy", "kp-only", "doped-lmf"];

/// Doped KP gate matrix of the toy model: 256×128 from 16×8 ⊗ 16×16.
pub fn toy_doped_kp() -> VariantConfig {
    VariantConfig::Kp {
        shape: Some(KpShape::new(16, 8, 16, 16)),
    }
}

/// The Medium-LM hyperparameter row scaled to a one-layer H=64 model on
/// the bundled corpus: 100 epochs become 20, and the decay start and
/// pruning window keep their fractions of the run.
fn medium_lm_toy() -> TrainConfig {
    TrainConfig {
        seed: 1,
        max_vocab: 2000,
        embed: 64,
        hidden: 64,
        layers: vec![LayerConfig {
            variant: toy_doped_kp(),
            target_cf: Some(20.0),
        }],
        bptt: 35,
        batch_size: 20,
        eval_batch_size: 10,
        epochs: 20,
        lr: 0.3,
        lr_decay: 0.96,
        lr_decay_start: 3,
        max_grad_norm: 5.0,
        dropout: 0.5,
        l2: 1e-4,
        forget_bias: 1.0,
        init_scale: 0.1,
        pruning: Some(PruningConfig {
            begin_epoch: 4.0,
            end_epoch: 18.0,
            prune_every: 1,
            s_initial: 0.0,
            exponent: 3.0,
        }),
        cmr: CmrSchedule {
            kind: CmrKind::LinDec,
            p0: 0.7,
        },
        cmr_share_timesteps: false,
        bcd: BcdPolicy::default(),
        penalty: PenaltyConfig::default(),
        probe_tokens: 5000,
    }
}

pub fn preset(name: &str) -> Result<TrainConfig> {
    let mut c = medium_lm_toy();
    match name {
        "medium-lm-toy" => {}
        "kp-only" => {
            // 64×32 ⊗ 4×4: 2064 parameters, about 15.9×, no doping term.
            c.layers[0] = LayerConfig {
                variant: VariantConfig::Kp {
                    shape: Some(KpShape::new(64, 32, 4, 4)),
                },
                target_cf: None,
            };
            c.pruning = None;
            c.cmr = CmrSchedule::disabled();
        }
        "doped-lmf" => {
            // Rank-2 factors (768 parameters) plus 768 doping weights.
            c.layers[0] = LayerConfig {
                variant: VariantConfig::Lmf { rank: 2 },
                target_cf: Some(32768.0 / 1536.0),
            };
        }
        _ => {
            return Err(CliError::Input(format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    }
    c.validate()?;
    Ok(c)
}
