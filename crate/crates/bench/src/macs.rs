use doping_core::doped::DopedWeight;
use doping_core::linalg::MacCounter;
use doping_lm::LanguageModel;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacEntry {
    pub name: String,
    pub shape: (usize, usize),
    pub variant: String,
    pub structured_macs: u64,
    pub sparse_macs: u64,
    pub dense_macs: u64,
    /// `dense / (structured + sparse)`.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacTotals {
    pub structured_macs: u64,
    pub sparse_macs: u64,
    pub dense_macs: u64,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub entries: Vec<MacEntry>,
    pub totals: MacTotals,
}

impl MacEntry {
    /// An uncompressed `rows × cols` matvec.
    pub fn dense(name: &str, rows: usize, cols: usize) -> Self {
        let macs = (rows * cols) as u64;
        Self {
            name: name.to_string(),
            shape: (rows, cols),
            variant: "dense".into(),
            structured_macs: macs,
            sparse_macs: 0,
            dense_macs: macs,
            reduction: 1.0,
        }
    }
}

fn reduction(dense: u64, compressed: u64) -> f64 {
    dense as f64 / compressed.max(1) as f64
}

impl MacReport {
    pub fn from_entries(entries: Vec<MacEntry>) -> Self {
        let structured_macs = entries.iter().map(|e| e.structured_macs).sum();
        let sparse_macs = entries.iter().map(|e| e.sparse_macs).sum();
        let dense_macs = entries.iter().map(|e| e.dense_macs).sum();
        Self {
            totals: MacTotals {
                structured_macs,
                sparse_macs,
                dense_macs,
                reduction: reduction(dense_macs, structured_macs + sparse_macs),
            },
            entries,
        }
    }
}

/// Multiply-accumulates literally counted during one inference forward.
pub fn instrumented_macs(w: &DopedWeight) -> Result<u64> {
    let frozen;
    let w = if w.frozen().is_some() {
        w
    } else {
        frozen = w.freeze_for_inference();
        &frozen
    };
    let x = vec![1.0; w.shape().1];
    let mut tally = MacCounter::default();
    w.forward_tallied(&x, None, &mut tally)?;
    Ok(tally.count)
}

/// Formula counts of one doped weight, cross-checked against the
/// instrumented kernels.
pub fn count_weight(name: &str, w: &DopedWeight) -> Result<MacEntry> {
    let c = w.mac_count();
    let counted = instrumented_macs(w)?;
    if counted != c.total() {
        return Err(BenchError::MacMismatch {
            name: name.to_string(),
            formula: c.total(),
            counted,
        });
    }
    Ok(MacEntry {
        name: name.to_string(),
        shape: w.shape(),
        variant: w.kind().to_string(),
        structured_macs: c.structured,
        sparse_macs: c.sparse,
        dense_macs: c.dense,
        reduction: c.reduction(),
    })
}

/// Per-step inference MACs of a language model: every LSTM gate matrix plus
/// the dense output projection. Embedding lookups cost no MACs.
pub fn count_macs(model: &LanguageModel) -> Result<MacReport> {
    let mut entries = Vec::new();
    for (k, l) in model.layers.iter().enumerate() {
        entries.push(count_weight(&format!("lstm{k}"), &l.w)?);
    }
    let (v, h) = model.out_w.shape();
    entries.push(MacEntry::dense("output", v, h));
    Ok(MacReport::from_entries(entries))
}
