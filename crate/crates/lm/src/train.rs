use std::time::Instant;

use doping_core::schedules::{CmrKind, GradientGate, PruneSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::{Batches, Corpus};
use crate::model::{LanguageModel, ModelGrads, State, WindowMode};
use crate::{LmError, Result};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_ppl: f64,
    pub valid_ppl: f64,
    pub sparsity: f64,
    pub cmr_p: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

/// A mask update: the scheduled target and the sparsity actually reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub step: u64,
    pub layer: usize,
    pub target: f64,
    pub achieved: f64,
}

/// Inference-mode perplexity on the head of the training stream, measured
/// when pruning starts and when it ends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneProbe {
    pub onset_ppl: Option<f64>,
    pub end_ppl: Option<f64>,
}

impl PruneProbe {
    /// Relative perplexity change across the pruning window.
    pub fn degradation(&self) -> Option<f64> {
        Some(self.end_ppl? / self.onset_ppl? - 1.0)
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: LanguageModel,
    pub rng: ChaCha8Rng,
    /// Optimizer steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochRecord>,
    pub prune_log: Vec<PruneEvent>,
    pub probe: PruneProbe,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = LanguageModel::new(cfg, vocab_size, &mut rng)?;
        Ok(Self {
            model,
            rng,
            step: 0,
            epoch: 0,
            log: Vec::new(),
            prune_log: Vec::new(),
            probe: PruneProbe::default(),
        })
    }
}

/// Scales every block so the global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(blocks: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = blocks
        .iter()
        .flat_map(|b| b.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for b in blocks.iter_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `exp(mean NLL)` over `ids`, with CMR and dropout off. Uses the CSR path
/// for layers that have been frozen.
pub fn evaluate_perplexity(model: &LanguageModel, ids: &[u32], batch: usize, bptt: usize) -> Result<f64> {
    if ids.len() < 2 {
        return Err(LmError::Empty("evaluation set"));
    }
    let batch = batch.min(ids.len() - 1).max(1);
    let batches = Batches::new(ids, batch)?;
    let mut state = State::zeros(model, batch);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut nll, mut tokens) = (0.0, 0usize);
    for k in 0..batches.windows(bptt) {
        let (x, y) = batches.window(k, bptt);
        let (loss, _) = model.forward(&x, &y, &mut state, &WindowMode::eval(), &mut rng)?;
        nll += loss.nll;
        tokens += loss.tokens;
    }
    Ok((nll / tokens as f64).exp())
}

/// Drives epochs of truncated BPTT over a corpus.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    corpus: &'a Corpus,
    batches: Batches,
    steps_per_epoch: u64,
    schedules: Vec<Option<PruneSchedule>>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, corpus: &'a Corpus, state: &TrainState) -> Result<Self> {
        cfg.validate()?;
        if state.model.vocab_size() != corpus.vocab.len() {
            return Err(LmError::Config(format!(
                "model vocabulary {} does not match corpus vocabulary {}",
                state.model.vocab_size(),
                corpus.vocab.len()
            )));
        }
        if corpus.valid.len() < 2 {
            return Err(LmError::Empty("validation split"));
        }
        let batches = Batches::new(&corpus.train, cfg.batch_size)?;
        let steps_per_epoch = batches.windows(cfg.bptt) as u64;
        let mut schedules = Vec::new();
        for (layer, lc) in state.model.layers.iter().zip(&cfg.layers) {
            // Layers without a doping term, or runs without pruning, keep
            // their mask as is.
            let s = match &cfg.pruning {
                Some(p) if lc.target_cf.is_some() => Some(p.schedule(steps_per_epoch, layer.w.target_sparsity())?),
                _ => None,
            };
            schedules.push(s);
        }
        Ok(Self {
            cfg,
            corpus,
            batches,
            steps_per_epoch,
            schedules,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    /// Per-layer pruning schedule, `None` where the layer is never pruned.
    pub fn schedules(&self) -> &[Option<PruneSchedule>] {
        &self.schedules
    }

    fn cmr_p(&self, state: &TrainState, step: u64) -> Vec<f64> {
        state
            .model
            .layers
            .iter()
            .zip(&self.schedules)
            .map(|(l, s)| match s {
                Some(s) => self.cfg.cmr.p_at(s, step, l.w.mask().density()),
                // Without a pruning window only the constant schedule has a
                // timeline; a purely structured layer is never masked.
                None if l.w.nnz() > 0 && self.cfg.cmr.kind == CmrKind::Constant => self.cfg.cmr.p0,
                None => 0.0,
            })
            .collect()
    }

    fn probe(&self, model: &LanguageModel) -> Result<f64> {
        let n = self.cfg.probe_tokens.min(self.corpus.train.len()).max(2);
        evaluate_perplexity(model, &self.corpus.train[..n], self.cfg.eval_batch_size, self.cfg.bptt)
    }

    fn prune_and_probe(&self, state: &mut TrainState) -> Result<()> {
        let step = state.step;
        let mut onset = false;
        let mut end = false;
        for (k, sched) in self.schedules.iter().enumerate() {
            let Some(s) = sched else { continue };
            onset |= step == s.begin_step;
            end |= step == s.end_step;
            if s.is_prune_step(step) {
                let target = s.sparsity_at(step);
                let w = &mut state.model.layers[k].w;
                if target > w.sparsity() {
                    w.prune_to(target)?;
                }
                state.prune_log.push(PruneEvent {
                    step,
                    layer: k,
                    target,
                    achieved: w.sparsity(),
                });
            }
        }
        if onset && state.probe.onset_ppl.is_none() {
            state.probe.onset_ppl = Some(self.probe(&state.model)?);
        }
        if end && state.probe.end_ppl.is_none() {
            state.probe.end_ppl = Some(self.probe(&state.model)?);
        }
        Ok(())
    }

    /// Trains until `state.epoch == cfg.epochs`, calling `on_epoch` after
    /// each epoch.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut on_epoch: impl FnMut(&EpochRecord, &TrainState) -> Result<()>,
    ) -> Result<()> {
        if state.step == 0 {
            self.prune_and_probe(state)?;
        }
        while state.epoch < self.cfg.epochs {
            let rec = self.run_epoch(state)?;
            on_epoch(&rec, state)?;
        }
        Ok(())
    }

    fn run_epoch(&self, state: &mut TrainState) -> Result<EpochRecord> {
        let cfg = self.cfg;
        let start = Instant::now();
        let epoch = state.epoch;
        let lr = cfg.lr_at(epoch);
        let gate = cfg.bcd.gate(epoch as u64);
        let mut grads = state.model.zero_grads();
        let mut hidden = State::zeros(&state.model, cfg.batch_size);
        let (mut nll, mut tokens) = (0.0, 0usize);
        let mut last_p = 0.0;
        for k in 0..self.batches.windows(cfg.bptt) {
            let (x, y) = self.batches.window(k, cfg.bptt);
            let cmr_p = self.cmr_p(state, state.step);
            last_p = cmr_p.first().copied().unwrap_or(0.0);
            let mode = WindowMode {
                dropout: cfg.dropout,
                cmr_p,
                cmr_share_timesteps: cfg.cmr_share_timesteps,
            };
            let (loss, cache) = state.model.forward(&x, &y, &mut hidden, &mode, &mut state.rng)?;
            grads.clear();
            state.model.backward(&cache, &mut grads)?;
            if !loss.nll.is_finite() || !grads_finite(&mut grads) {
                let (layer, max_grad) = worst_layer(&mut grads);
                return Err(LmError::NonFinite {
                    step: state.step,
                    layer,
                    max_grad,
                });
            }
            nll += loss.nll;
            tokens += loss.tokens;

            self.add_regularizers(state, &mut grads, gate)?;
            clip_global_norm(&mut grads.blocks_mut(), cfg.max_grad_norm);
            sgd_update(&mut state.model, &grads, lr);
            for l in &state.model.layers {
                assert!(l.w.mask().is_respected_by(l.w.ws()), "masked weights must stay zero");
            }
            state.step += 1;
            self.prune_and_probe(state)?;
        }
        let valid_ppl = evaluate_perplexity(&state.model, &self.corpus.valid, cfg.eval_batch_size, cfg.bptt)?;
        let layers = &state.model.layers;
        let sparsity = layers.iter().map(|l| l.w.sparsity()).sum::<f64>() / layers.len() as f64;
        state.epoch += 1;
        let rec = EpochRecord {
            epoch: state.epoch,
            train_ppl: (nll / tokens as f64).exp(),
            valid_ppl,
            sparsity,
            cmr_p: last_p,
            lr,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        state.log.push(rec.clone());
        Ok(rec)
    }

    /// Adds L2 and scale penalties, then zeroes the gradients of blocks that
    /// are not trained this epoch.
    fn add_regularizers(
        &self,
        state: &TrainState,
        grads: &mut ModelGrads,
        gate: GradientGate,
    ) -> Result<()> {
        let cfg = self.cfg;
        let m = &state.model;
        let l2 = cfg.l2;
        if l2 > 0.0 {
            axpy(l2, m.embed.data(), grads.embed.data_mut());
            axpy(l2, m.out_w.data(), grads.out_w.data_mut());
        }
        for (l, g) in m.layers.iter().zip(&mut grads.layers) {
            if l2 > 0.0 {
                for (p, gp) in l.w.structured().factors().into_iter().zip(g.w.structured.factors_mut()) {
                    axpy(l2, p.data(), gp.data_mut());
                }
                axpy(l2, l.w.ws().data(), g.w.ws.data_mut());
            }
            let (da, db) = cfg.penalty.grad(l.w.alpha(), l.w.beta())?;
            g.w.alpha = if cfg.penalty.trains_alpha() { g.w.alpha + da } else { 0.0 };
            g.w.beta = if cfg.penalty.trains_beta() { g.w.beta + db } else { 0.0 };
            if !gate.structured() {
                for f in g.w.structured.factors_mut() {
                    f.fill(0.0);
                }
            }
            if !gate.sparse() {
                g.w.ws.fill(0.0);
            }
        }
        Ok(())
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn grads_finite(g: &mut ModelGrads) -> bool {
    g.blocks_mut().iter().all(|b| b.iter().all(|v| v.is_finite()))
}

/// Layer with the largest (or first non-finite) gradient entry.
fn worst_layer(g: &mut ModelGrads) -> (usize, f64) {
    let mut best = (0, 0.0f64);
    for (k, l) in g.layers.iter_mut().enumerate() {
        let mut m = 0.0f64;
        for f in l.w.structured.factors() {
            for &v in f.data() {
                m = if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY };
            }
        }
        for &v in l.w.ws.data().iter().chain(&l.bias) {
            m = if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY };
        }
        if m > best.1 || k == 0 {
            best = (k, m);
        }
    }
    best
}

fn sgd_update(model: &mut LanguageModel, g: &ModelGrads, lr: f64) {
    axpy(-lr, g.embed.data(), model.embed.data_mut());
    axpy(-lr, g.out_w.data(), model.out_w.data_mut());
    axpy(-lr, &g.out_b, &mut model.out_b);
    for (l, gl) in model.layers.iter_mut().zip(&g.layers) {
        for (p, gp) in l.w.structured_mut().factors_mut().into_iter().zip(gl.w.structured.factors()) {
            axpy(-lr, gp.data(), p.data_mut());
        }
        if !l.w.is_pure_structured() {
            l.w.update_ws(|ws| axpy(-lr, gl.w.ws.data(), ws.data_mut()));
        }
        let (a, b) = (l.w.alpha(), l.w.beta());
        l.w.set_alpha(a - lr * gl.w.alpha);
        l.w.set_beta(b - lr * gl.w.beta);
        axpy(-lr, &gl.bias, &mut l.bias);
    }
}

/// Trains from scratch and returns the final state.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainState> {
    let mut state = TrainState::init(cfg, corpus.vocab.len())?;
    Trainer::new(cfg, corpus, &state)?.run(&mut state, |_, _| Ok(()))?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_examples() {
        let mut a = vec![6.0, 8.0];
        let n = clip_global_norm(&mut [&mut a[..]], 5.0);
        assert_eq!(n, 10.0);
        assert_eq!(a, vec![3.0, 4.0]);
        let mut b = vec![0.0, 3.0];
        clip_global_norm(&mut [&mut b[..]], 5.0);
        assert_eq!(b, vec![0.0, 3.0]);
    }

    #[test]
    fn probe_degradation() {
        let p = PruneProbe {
            onset_ppl: Some(10.0),
            end_ppl: Some(12.0),
        };
        assert!((p.degradation().unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(PruneProbe::default().degradation(), None);
    }
}
