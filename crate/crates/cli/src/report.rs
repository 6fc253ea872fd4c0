use std::path::Path;

use doping_bench::{count_macs, MacTotals};
use doping_lm::checkpoint::Checkpoint;
use serde::Serialize;

use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct LayerRow {
    pub name: String,
    pub shape: (usize, usize),
    pub variant: String,
    pub structured_params: usize,
    pub nnz: usize,
    pub compression_factor: f64,
    pub sparsity: f64,
    pub structured_macs: u64,
    pub sparse_macs: u64,
    pub dense_macs: u64,
    pub mac_reduction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub layers: Vec<LayerRow>,
    pub macs: MacTotals,
    /// Parameters of the compressed layers over their dense count.
    pub compressed_layers_cf: f64,
}

pub fn build_report(ck: &Checkpoint) -> Result<ModelReport> {
    let model = ck.state.model.freeze_for_inference();
    let macs = count_macs(&model)?;
    let mut layers = Vec::new();
    let (mut dense_params, mut kept_params) = (0usize, 0usize);
    for (e, l) in macs.entries.iter().zip(&model.layers) {
        let w = &l.w;
        let (m, n) = w.shape();
        dense_params += m * n;
        kept_params += w.structured().param_count() + w.nnz();
        layers.push(LayerRow {
            name: e.name.clone(),
            shape: e.shape,
            variant: e.variant.clone(),
            structured_params: w.structured().param_count(),
            nnz: w.nnz(),
            compression_factor: w.compression_factor(),
            sparsity: w.sparsity(),
            structured_macs: e.structured_macs,
            sparse_macs: e.sparse_macs,
            dense_macs: e.dense_macs,
            mac_reduction: e.reduction,
        });
    }
    for e in &macs.entries[model.layers.len()..] {
        layers.push(LayerRow {
            name: e.name.clone(),
            shape: e.shape,
            variant: e.variant.clone(),
            structured_params: e.shape.0 * e.shape.1,
            nnz: 0,
            compression_factor: 1.0,
            sparsity: 0.0,
            structured_macs: e.structured_macs,
            sparse_macs: e.sparse_macs,
            dense_macs: e.dense_macs,
            mac_reduction: e.reduction,
        });
    }
    Ok(ModelReport {
        layers,
        macs: macs.totals,
        compressed_layers_cf: dense_params as f64 / kept_params.max(1) as f64,
    })
}

pub fn render_table(r: &ModelReport) -> String {
    let mut s = format!(
        "{:<8} {:>11} {:>8} {:>9} {:>8} {:>8} {:>9} {:>11} {:>10} {:>11} {:>9}\n",
        "layer", "shape", "variant", "params", "nnz", "cf", "sparsity", "struct_mac", "sparse_mac", "dense_mac", "mac_red"
    );
    for l in &r.layers {
        s += &format!(
            "{:<8} {:>11} {:>8} {:>9} {:>8} {:>8.2} {:>9.4} {:>11} {:>10} {:>11} {:>9.2}\n",
            l.name,
            format!("{}x{}", l.shape.0, l.shape.1),
            l.variant,
            l.structured_params,
            l.nnz,
            l.compression_factor,
            l.sparsity,
            l.structured_macs,
            l.sparse_macs,
            l.dense_macs,
            l.mac_reduction
        );
    }
    s += &format!(
        "{:<8} {:>11} {:>8} {:>9} {:>8} {:>8.2} {:>9} {:>11} {:>10} {:>11} {:>9.2}\n",
        "total",
        "",
        "",
        "",
        "",
        r.compressed_layers_cf,
        "",
        r.macs.structured_macs,
        r.macs.sparse_macs,
        r.macs.dense_macs,
        r.macs.reduction
    );
    s
}

pub fn run_report(checkpoint: &Path) -> Result<ModelReport> {
    let ck = Checkpoint::load(checkpoint)?;
    build_report(&ck)
}
