use doping_core::doped::{make_doped, CmrBatchMasks, CmrMasks, DopedCache, DopedGrads, DopedWeight};
use doping_core::linalg::gemm::{gemm, MatMut, MatRef};
use doping_core::linalg::DenseMatrix;
use rand::Rng;

use crate::config::TrainConfig;
use crate::{LmError, Result};

/// One LSTM layer. The fused gate matrix is `4H × (I + H)` with gate rows
/// ordered input, forget, cell, output, and acts on `[x; h]`.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w: DopedWeight,
    pub bias: Vec<f64>,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub embed: DenseMatrix,
    pub layers: Vec<LstmLayer>,
    /// `V × H` output projection.
    pub out_w: DenseMatrix,
    pub out_b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: DopedGrads,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub embed: DenseMatrix,
    pub layers: Vec<LayerGrads>,
    pub out_w: DenseMatrix,
    pub out_b: Vec<f64>,
}

/// Recurrent state, one `batch × H` block per layer for `h` and `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub batch: usize,
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl State {
    pub fn zeros(model: &LanguageModel, batch: usize) -> Self {
        let h: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; batch * l.hidden]).collect();
        Self {
            batch,
            c: h.clone(),
            h,
        }
    }
}

/// Regularization for one window. Inference uses [`WindowMode::eval`].
#[derive(Debug, Clone, Default)]
pub struct WindowMode {
    pub dropout: f64,
    /// CMR drop probability per layer; empty or zero disables CMR.
    pub cmr_p: Vec<f64>,
    pub cmr_share_timesteps: bool,
}

impl WindowMode {
    pub fn eval() -> Self {
        Self::default()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverted-dropout scale factors (`0` or `1/(1-p)`), or `None` when off.
fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..n).map(|_| if rng.gen_bool(p) { 0.0 } else { keep }).collect())
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (x, s) in v.iter_mut().zip(m) {
            *x *= s;
        }
    }
}

struct StepCache {
    z: Vec<f64>,
    doped: DopedCache,
    masks: Option<CmrBatchMasks>,
    /// Activated gates `[i, f, g, o]`, `batch × 4H`.
    acts: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct LayerCache {
    steps: Vec<StepCache>,
}

/// Everything [`LanguageModel::backward`] needs from a forward window.
pub struct WindowCache {
    batch: usize,
    steps: usize,
    inputs: Vec<u32>,
    targets: Vec<u32>,
    emb_mask: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    out_masks: Vec<Option<Vec<f64>>>,
    /// Top-layer output after dropout, `(T·B) × H`.
    top: Vec<f64>,
    probs: Vec<f64>,
}

/// Per-window loss summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLoss {
    /// Summed negative log-likelihood over all predicted tokens.
    pub nll: f64,
    pub tokens: usize,
}

impl LanguageModel {
    /// Random initialization from a validated config.
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        if vocab_size == 0 {
            return Err(LmError::Empty("vocabulary"));
        }
        let (e, h) = (cfg.embed, cfg.hidden);
        let embed = DenseMatrix::random_uniform(vocab_size, e, cfg.init_scale, rng);
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (k, lc) in cfg.layers.iter().enumerate() {
            let input = if k == 0 { e } else { h };
            let w = make_doped(4 * h, input + h, &lc.variant, lc.target_cf, rng)?;
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].iter_mut().for_each(|b| *b = cfg.forget_bias);
            layers.push(LstmLayer { w, bias, input, hidden: h });
        }
        let out_w = DenseMatrix::random_uniform(vocab_size, h, cfg.init_scale, rng);
        Ok(Self {
            embed,
            layers,
            out_w,
            out_b: vec![0.0; vocab_size],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn hidden(&self) -> usize {
        self.out_w.cols()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            embed: DenseMatrix::zeros(self.embed.rows(), self.embed.cols()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: DopedGrads::zeros_like(&l.w),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            out_w: DenseMatrix::zeros(self.out_w.rows(), self.out_w.cols()),
            out_b: vec![0.0; self.out_b.len()],
        }
    }

    /// Replaces every doping term by its CSR inference form.
    pub fn freeze_for_inference(&self) -> Self {
        let mut m = self.clone();
        for l in &mut m.layers {
            l.w = l.w.freeze_for_inference();
        }
        m
    }

    /// Runs one truncated-BPTT window. `inputs` and `targets` are
    /// time-major (`t * batch + b`); `state` is advanced in place.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        inputs: &[u32],
        targets: &[u32],
        state: &mut State,
        mode: &WindowMode,
        rng: &mut R,
    ) -> Result<(WindowLoss, WindowCache)> {
        let batch = state.batch;
        if inputs.len() != targets.len() || inputs.is_empty() || inputs.len() % batch != 0 {
            return Err(LmError::Config(format!(
                "window of {} inputs and {} targets does not split into batch {batch}",
                inputs.len(),
                targets.len()
            )));
        }
        let v = self.vocab_size();
        if let Some(&bad) = inputs.iter().chain(targets).find(|&&t| t as usize >= v) {
            return Err(LmError::Config(format!("token id {bad} outside vocabulary of {v}")));
        }
        let steps = inputs.len() / batch;
        let rows = inputs.len();
        let e = self.embed.cols();

        let mut x = Vec::with_capacity(rows * e);
        for &id in inputs {
            x.extend_from_slice(self.embed.row(id as usize));
        }
        let emb_mask = dropout_mask(x.len(), mode.dropout, rng);
        apply_mask(&mut x, &emb_mask);

        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut out_masks = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let p = mode.cmr_p.get(k).copied().unwrap_or(0.0);
            let (hs, cache) = layer.forward_seq(&x, batch, steps, &mut state.h[k], &mut state.c[k], p, mode.cmr_share_timesteps, rng)?;
            layer_caches.push(cache);
            let mut hs = hs;
            let m = dropout_mask(hs.len(), mode.dropout, rng);
            apply_mask(&mut hs, &m);
            out_masks.push(m);
            x = hs;
        }

        let h = self.hidden();
        let mut logits = vec![0.0; rows * v];
        for r in 0..rows {
            logits[r * v..(r + 1) * v].copy_from_slice(&self.out_b);
        }
        gemm(
            1.0,
            MatRef::new(&x, rows, h),
            MatRef::new(self.out_w.data(), v, h).t(),
            1.0,
            MatMut::new(&mut logits, rows, v),
        );
        let mut nll = 0.0;
        for r in 0..rows {
            let row = &mut logits[r * v..(r + 1) * v];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for z in row.iter_mut() {
                *z = (*z - max).exp();
                sum += *z;
            }
            for z in row.iter_mut() {
                *z /= sum;
            }
            nll -= row[targets[r] as usize].max(f64::MIN_POSITIVE).ln();
        }
        Ok((
            WindowLoss { nll, tokens: rows },
            WindowCache {
                batch,
                steps,
                inputs: inputs.to_vec(),
                targets: targets.to_vec(),
                emb_mask,
                layers: layer_caches,
                out_masks,
                top: x,
                probs: logits,
            },
        ))
    }

    /// Accumulates into `grads` the gradient of `nll / batch`, i.e. the
    /// per-sequence loss summed over time steps and averaged over the batch.
    pub fn backward(&self, cache: &WindowCache, grads: &mut ModelGrads) -> Result<()> {
        let (batch, steps) = (cache.batch, cache.steps);
        let rows = batch * steps;
        let (v, h) = (self.vocab_size(), self.hidden());
        let scale = 1.0 / batch as f64;

        let mut dlogits = cache.probs.clone();
        for r in 0..rows {
            dlogits[r * v + cache.targets[r] as usize] -= 1.0;
        }
        dlogits.iter_mut().for_each(|d| *d *= scale);
        for r in 0..rows {
            for (gb, d) in grads.out_b.iter_mut().zip(&dlogits[r * v..(r + 1) * v]) {
                *gb += d;
            }
        }
        gemm(
            1.0,
            MatRef::new(&dlogits, rows, v).t(),
            MatRef::new(&cache.top, rows, h),
            1.0,
            MatMut::new(grads.out_w.data_mut(), v, h),
        );
        let mut dx = vec![0.0; rows * h];
        gemm(
            1.0,
            MatRef::new(&dlogits, rows, v),
            MatRef::new(self.out_w.data(), v, h),
            0.0,
            MatMut::new(&mut dx, rows, h),
        );

        for k in (0..self.layers.len()).rev() {
            apply_mask(&mut dx, &cache.out_masks[k]);
            dx = self.layers[k].backward_seq(&cache.layers[k], &dx, batch, &mut grads.layers[k])?;
        }
        apply_mask(&mut dx, &cache.emb_mask);
        let e = self.embed.cols();
        for (r, &id) in cache.inputs.iter().enumerate() {
            for (g, d) in grads.embed.row_mut(id as usize).iter_mut().zip(&dx[r * e..(r + 1) * e]) {
                *g += d;
            }
        }
        Ok(())
    }
}

impl LstmLayer {
    /// Single-sample step: `gates = W [x; h] + bias` under optional CMR
    /// masks, then `c' = σ(f) c + σ(i) tanh(g)`, `h' = σ(o) tanh(c')`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64], cmr: Option<&CmrMasks>) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input || h.len() != self.hidden || c.len() != self.hidden {
            return Err(LmError::Config(format!(
                "lstm step expects x {}, h {}, c {}; got {}, {}, {}",
                self.input,
                self.hidden,
                self.hidden,
                x.len(),
                h.len(),
                c.len()
            )));
        }
        let z: Vec<f64> = x.iter().chain(h).copied().collect();
        let a = self.w.forward(&z, cmr)?;
        let hd = self.hidden;
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for j in 0..hd {
            let i = sigmoid(a[j] + self.bias[j]);
            let f = sigmoid(a[hd + j] + self.bias[hd + j]);
            let g = (a[2 * hd + j] + self.bias[2 * hd + j]).tanh();
            let o = sigmoid(a[3 * hd + j] + self.bias[3 * hd + j]);
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        Ok((h2, c2))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_seq<R: Rng + ?Sized>(
        &self,
        xs: &[f64],
        batch: usize,
        steps: usize,
        h: &mut Vec<f64>,
        c: &mut Vec<f64>,
        cmr_p: f64,
        share: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, LayerCache)> {
        let (ni, hd) = (self.input, self.hidden);
        let n = ni + hd;
        let g4 = 4 * hd;
        let mut hs = vec![0.0; steps * batch * hd];
        let mut caches = Vec::with_capacity(steps);
        let mut shared: Option<CmrBatchMasks> = None;
        for t in 0..steps {
            let mut z = vec![0.0; batch * n];
            for b in 0..batch {
                let r = t * batch + b;
                z[b * n..b * n + ni].copy_from_slice(&xs[r * ni..(r + 1) * ni]);
                z[b * n + ni..(b + 1) * n].copy_from_slice(&h[b * hd..(b + 1) * hd]);
            }
            let masks = if cmr_p > 0.0 {
                if share {
                    if shared.is_none() {
                        shared = Some(CmrBatchMasks::draw(batch, g4, cmr_p, rng));
                    }
                    shared.clone()
                } else {
                    Some(CmrBatchMasks::draw(batch, g4, cmr_p, rng))
                }
            } else {
                None
            };
            let (mut acts, doped) = self.w.forward_batch(&z, batch, masks.as_ref())?;
            let c_prev = c.clone();
            let mut tanh_c = vec![0.0; batch * hd];
            for b in 0..batch {
                let a = &mut acts[b * g4..(b + 1) * g4];
                for (v, bias) in a.iter_mut().zip(&self.bias) {
                    *v += bias;
                }
                for j in 0..hd {
                    a[j] = sigmoid(a[j]);
                    a[hd + j] = sigmoid(a[hd + j]);
                    a[2 * hd + j] = a[2 * hd + j].tanh();
                    a[3 * hd + j] = sigmoid(a[3 * hd + j]);
                    let k = b * hd + j;
                    c[k] = a[hd + j] * c_prev[k] + a[j] * a[2 * hd + j];
                    tanh_c[k] = c[k].tanh();
                    h[k] = a[3 * hd + j] * tanh_c[k];
                }
            }
            hs[t * batch * hd..(t + 1) * batch * hd].copy_from_slice(h);
            caches.push(StepCache {
                z,
                doped,
                masks,
                acts,
                c_prev,
                tanh_c,
            });
        }
        Ok((hs, LayerCache { steps: caches }))
    }

    /// Takes the gradient on this layer's outputs (`(T·B) × H`) and returns
    /// the gradient on its inputs (`(T·B) × I`).
    fn backward_seq(&self, cache: &LayerCache, dhs: &[f64], batch: usize, grads: &mut LayerGrads) -> Result<Vec<f64>> {
        let (ni, hd) = (self.input, self.hidden);
        let n = ni + hd;
        let g4 = 4 * hd;
        let steps = cache.steps.len();
        let mut dxs = vec![0.0; steps * batch * ni];
        let mut dh_next = vec![0.0; batch * hd];
        let mut dc_next = vec![0.0; batch * hd];
        let mut da = vec![0.0; batch * g4];
        let mut gz = vec![0.0; batch * n];
        for t in (0..steps).rev() {
            let sc = &cache.steps[t];
            for b in 0..batch {
                let a = &sc.acts[b * g4..(b + 1) * g4];
                let d = &mut da[b * g4..(b + 1) * g4];
                for j in 0..hd {
                    let k = b * hd + j;
                    let (i, f, g, o) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j]);
                    let tc = sc.tanh_c[k];
                    let dh = dhs[(t * batch) * hd + k] + dh_next[k];
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    d[j] = dc * g * i * (1.0 - i);
                    d[hd + j] = dc * sc.c_prev[k] * f * (1.0 - f);
                    d[2 * hd + j] = dc * i * (1.0 - g * g);
                    d[3 * hd + j] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                for (gb, dv) in grads.bias.iter_mut().zip(d.iter()) {
                    *gb += dv;
                }
            }
            gz.iter_mut().for_each(|v| *v = 0.0);
            self.w
                .backward_batch(&sc.z, &sc.doped, &da, sc.masks.as_ref(), &mut grads.w, &mut gz)?;
            for b in 0..batch {
                let r = t * batch + b;
                dxs[r * ni..(r + 1) * ni].copy_from_slice(&gz[b * n..b * n + ni]);
                dh_next[b * hd..(b + 1) * hd].copy_from_slice(&gz[b * n + ni..(b + 1) * n]);
            }
        }
        Ok(dxs)
    }
}

/// Which parameters a flat index addresses; see [`LanguageModel::param`].
fn locate(model: &LanguageModel, mut k: usize) -> Option<(usize, usize)> {
    for (block, len) in model.block_lens().into_iter().enumerate() {
        if k < len {
            return Some((block, k));
        }
        k -= len;
    }
    None
}

impl LanguageModel {
    /// Lengths of the parameter blocks in flat order: embedding; per layer
    /// the structured factors, the doping term, α, β and the bias; then the
    /// output weights and bias.
    pub fn block_lens(&self) -> Vec<usize> {
        let mut out = vec![self.embed.len()];
        for l in &self.layers {
            out.extend(l.w.structured().factors().iter().map(|f| f.len()));
            out.extend([l.w.ws().len(), 1, 1, l.bias.len()]);
        }
        out.extend([self.out_w.len(), self.out_b.len()]);
        out
    }

    pub fn param_len(&self) -> usize {
        self.block_lens().iter().sum()
    }

    /// Flat parameter read, in [`Self::block_lens`] order.
    pub fn param(&self, k: usize) -> f64 {
        let (mut block, i) = locate(self, k).expect("parameter index in range");
        if block == 0 {
            return self.embed.data()[i];
        }
        block -= 1;
        for l in &self.layers {
            let factors = l.w.structured().factors();
            let nf = factors.len();
            if block < nf {
                return factors[block].data()[i];
            }
            match block - nf {
                0 => return l.w.ws().data()[i],
                1 => return l.w.alpha(),
                2 => return l.w.beta(),
                3 => return l.bias[i],
                _ => block -= nf + 4,
            }
        }
        if block == 0 {
            self.out_w.data()[i]
        } else {
            self.out_b[i]
        }
    }

    /// Flat parameter write. Writes to dead doping positions are discarded.
    pub fn set_param(&mut self, k: usize, v: f64) {
        let (mut block, i) = locate(self, k).expect("parameter index in range");
        if block == 0 {
            self.embed.data_mut()[i] = v;
            return;
        }
        block -= 1;
        for l in &mut self.layers {
            let nf = l.w.structured().factors().len();
            if block < nf {
                l.w.structured_mut().factors_mut()[block].data_mut()[i] = v;
                return;
            }
            match block - nf {
                0 => return l.w.update_ws(|ws| ws.data_mut()[i] = v),
                1 => return l.w.set_alpha(v),
                2 => return l.w.set_beta(v),
                3 => {
                    l.bias[i] = v;
                    return;
                }
                _ => block -= nf + 4,
            }
        }
        if block == 0 {
            self.out_w.data_mut()[i] = v;
        } else {
            self.out_b[i] = v;
        }
    }
}

impl ModelGrads {
    /// Mutable gradient blocks in [`LanguageModel::block_lens`] order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.data_mut()];
        for l in &mut self.layers {
            for f in l.w.structured.factors_mut() {
                out.push(f.data_mut());
            }
            out.push(l.w.ws.data_mut());
            out.push(std::slice::from_mut(&mut l.w.alpha));
            out.push(std::slice::from_mut(&mut l.w.beta));
            out.push(&mut l.bias);
        }
        out.push(self.out_w.data_mut());
        out.push(&mut self.out_b);
        out
    }

    pub fn flat(&mut self) -> Vec<f64> {
        self.blocks_mut().into_iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn clear(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
