//! Binary checkpoints.
//!
//! Layout (all integers little-endian): the magic `DKPT`, a `u32` format
//! version, then sections of `[tag: 4 bytes][len: u64][payload]` in the
//! fixed order `CONF`, `VOCB`, `MODL`, `STAT`, `LOG `. `CONF` and `LOG ` hold
//! JSON; the others are raw little-endian values, with every `f64` stored
//! bit-exactly.

use std::path::Path;

use doping_core::doped::{DopedWeight, HybridParts, LowRankPair, StructuredTerm, VariantKind};
use doping_core::linalg::{DenseMatrix, KroneckerPair, PruneMask};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::model::{LanguageModel, LstmLayer};
use crate::train::{EpochRecord, PruneEvent, PruneProbe, TrainState};
use crate::vocab::Vocab;
use crate::{LmError, Result};

pub const MAGIC: &[u8; 4] = b"DKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct LogSection {
    epochs: Vec<EpochRecord>,
    prunes: Vec<PruneEvent>,
    probe: PruneProbe,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn matrix(&mut self, m: &DenseMatrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        m.data().iter().for_each(|&x| self.f64(x));
    }
    fn section(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.0.extend_from_slice(tag);
        self.u64(payload.len() as u64);
        self.0.extend_from_slice(&payload);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> LmError {
    LmError::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(format!("truncated: wanted {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(corrupt("vector length exceeds file size"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn matrix(&mut self) -> Result<DenseMatrix> {
        let (r, c) = (self.u32()?, self.u32()?);
        let n = r.checked_mul(c).ok_or_else(|| corrupt("matrix size overflows"))?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(corrupt("matrix exceeds file size"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::new(r, c, data)?)
    }
    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let got = self.take(4)?;
        if got != tag {
            return Err(corrupt(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(got)
            )));
        }
        let len = usize::try_from(self.u64()?).map_err(|_| corrupt("section too large"))?;
        Ok(Reader {
            buf: self.take(len)?,
            pos: 0,
        })
    }
    fn done(&self, what: &str) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(corrupt(format!("{} trailing bytes in {what}", self.buf.len() - self.pos)))
        }
    }
}

fn kind_tag(k: VariantKind) -> u8 {
    match k {
        VariantKind::Kp => 0,
        VariantKind::Lmf => 1,
        VariantKind::Hmd => 2,
    }
}

fn write_doped(w: &mut Writer, d: &DopedWeight) {
    w.u8(kind_tag(d.kind()));
    let factors = d.structured().factors();
    w.u32(factors.len());
    factors.into_iter().for_each(|f| w.matrix(f));
    w.matrix(d.ws());
    w.0.extend(d.mask().bits().iter().map(|&b| b as u8));
    w.f64(d.alpha());
    w.f64(d.beta());
    w.u64(d.nnz_target() as u64);
    w.u8(d.frozen().is_some() as u8);
}

fn read_doped(r: &mut Reader) -> Result<DopedWeight> {
    let kind = r.u8()?;
    let nf = r.u32()?;
    let factors = (0..nf).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
    let structured = match (kind, factors.len()) {
        (0, 2) => {
            let [b, c]: [DenseMatrix; 2] = factors.try_into().unwrap();
            StructuredTerm::Kp(KroneckerPair::new(b, c))
        }
        (1, 2) => {
            let [b, c]: [DenseMatrix; 2] = factors.try_into().unwrap();
            StructuredTerm::Lmf(LowRankPair::new(b, c)?)
        }
        (2, 3) => {
            let [d, u, v]: [DenseMatrix; 3] = factors.try_into().unwrap();
            StructuredTerm::Hmd(HybridParts::new(d, u, v)?)
        }
        _ => return Err(corrupt(format!("unknown structured term {kind} with {nf} factors"))),
    };
    let ws = r.matrix()?;
    let bits = r
        .take(ws.len())?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt("mask byte is not 0 or 1")),
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = PruneMask::from_bits(ws.rows(), ws.cols(), bits)?;
    if !mask.is_respected_by(&ws) {
        return Err(corrupt("doping term has values at dead positions"));
    }
    let (alpha, beta) = (r.f64()?, r.f64()?);
    let nnz_target = r.u64()? as usize;
    let frozen = r.u8()? == 1;
    let d = DopedWeight::from_parts(structured, ws, mask, alpha, beta, nnz_target)?;
    Ok(if frozen { d.freeze_for_inference() } else { d })
}

fn write_model(w: &mut Writer, m: &LanguageModel) {
    w.matrix(&m.embed);
    w.u32(m.layers.len());
    for l in &m.layers {
        w.u32(l.input);
        w.u32(l.hidden);
        write_doped(w, &l.w);
        w.f64s(&l.bias);
    }
    w.matrix(&m.out_w);
    w.f64s(&m.out_b);
}

fn read_model(r: &mut Reader) -> Result<LanguageModel> {
    let embed = r.matrix()?;
    let n = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let (input, hidden) = (r.u32()?, r.u32()?);
        let w = read_doped(r)?;
        let bias = r.f64s()?;
        if w.shape() != (4 * hidden, input + hidden) || bias.len() != 4 * hidden {
            return Err(corrupt("layer shapes are inconsistent"));
        }
        layers.push(LstmLayer { w, bias, input, hidden });
    }
    let out_w = r.matrix()?;
    let out_b = r.f64s()?;
    if out_w.rows() != embed.rows() || out_b.len() != out_w.rows() {
        return Err(corrupt("output layer shapes are inconsistent"));
    }
    Ok(LanguageModel { embed, layers, out_w, out_b })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer(MAGIC.to_vec());
        out.0.extend_from_slice(&VERSION.to_le_bytes());

        out.section(b"CONF", self.config.to_json().into_bytes());

        let mut v = Writer(Vec::new());
        v.u32(self.vocab.len());
        self.vocab.tokens().iter().for_each(|t| v.bytes(t.as_bytes()));
        out.section(b"VOCB", v.0);

        let mut m = Writer(Vec::new());
        write_model(&mut m, &self.state.model);
        out.section(b"MODL", m.0);

        let s = &self.state;
        let mut st = Writer(Vec::new());
        st.u64(s.step);
        st.u64(s.epoch as u64);
        st.0.extend_from_slice(&s.rng.get_seed());
        st.u64(s.rng.get_stream());
        st.0.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
        out.section(b"STAT", st.0);

        let log = LogSection {
            epochs: s.log.clone(),
            prunes: s.prune_log.clone(),
            probe: s.probe.clone(),
        };
        out.section(b"LOG ", serde_json::to_vec(&log).expect("log serializes"));
        out.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).map_err(|_| corrupt("file too short for a header"))? != MAGIC {
            return Err(corrupt("bad magic, not a checkpoint"));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
        }

        let conf = r.section(b"CONF")?;
        let config = TrainConfig::from_json(std::str::from_utf8(conf.buf).map_err(|_| corrupt("config is not UTF-8"))?)?;

        let mut v = r.section(b"VOCB")?;
        let n = v.u32()?;
        let tokens = (0..n)
            .map(|_| {
                let b = v.bytes()?;
                String::from_utf8(b.to_vec()).map_err(|_| corrupt("token is not UTF-8"))
            })
            .collect::<Result<Vec<_>>>()?;
        v.done("VOCB")?;
        let vocab = Vocab::from_tokens(tokens)?;

        let mut m = r.section(b"MODL")?;
        let model = read_model(&mut m)?;
        m.done("MODL")?;
        if model.vocab_size() != vocab.len() {
            return Err(corrupt("model and vocabulary sizes differ"));
        }

        let mut st = r.section(b"STAT")?;
        let step = st.u64()?;
        let epoch = st.u64()? as usize;
        let seed: [u8; 32] = st.take(32)?.try_into().unwrap();
        let stream = st.u64()?;
        let word_pos = u128::from_le_bytes(st.take(16)?.try_into().unwrap());
        st.done("STAT")?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        let log = r.section(b"LOG ")?;
        let log: LogSection = serde_json::from_slice(log.buf).map_err(|e| corrupt(format!("log: {e}")))?;
        r.done("checkpoint")?;

        Ok(Self {
            config,
            vocab,
            state: TrainState {
                model,
                rng,
                step,
                epoch,
                log: log.epochs,
                prune_log: log.prunes,
                probe: log.probe,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
