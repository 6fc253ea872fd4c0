#![allow(dead_code)]

use doping_core::doped::{KpShape, VariantConfig};
use doping_core::schedules::{BcdPolicy, CmrKind, CmrSchedule, PenaltyConfig};
use doping_lm::{Corpus, LayerConfig, PruningConfig, TrainConfig};

pub fn layer(variant: VariantConfig, target_cf: Option<f64>) -> LayerConfig {
    LayerConfig { variant, target_cf }
}

pub fn kp(m1: usize, n1: usize, m2: usize, n2: usize) -> VariantConfig {
    VariantConfig::Kp {
        shape: Some(KpShape::new(m1, n1, m2, n2)),
    }
}

/// A model small enough to train in well under a second per epoch.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        seed: 3,
        max_vocab: 60,
        embed: 8,
        hidden: 8,
        layers: vec![layer(VariantConfig::Lmf { rank: 2 }, Some(2.0))],
        bptt: 5,
        batch_size: 4,
        eval_batch_size: 4,
        epochs: 3,
        lr: 0.5,
        lr_decay: 0.5,
        lr_decay_start: 3,
        max_grad_norm: 5.0,
        dropout: 0.1,
        l2: 1e-5,
        forget_bias: 1.0,
        init_scale: 0.1,
        pruning: Some(PruningConfig {
            begin_epoch: 0.5,
            end_epoch: 2.0,
            prune_every: 2,
            s_initial: 0.0,
            exponent: 3.0,
        }),
        cmr: CmrSchedule {
            kind: CmrKind::LinDec,
            p0: 0.3,
        },
        cmr_share_timesteps: false,
        bcd: BcdPolicy::default(),
        penalty: PenaltyConfig::default(),
        probe_tokens: 200,
    }
}

pub fn small_corpus(max_vocab: usize) -> Corpus {
    let text = doping_lm::synthetic_corpus(11, 12_000);
    Corpus::from_text(&text, max_vocab).unwrap()
}
