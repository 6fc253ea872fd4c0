use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::timing::{KernelKind, TimingResult};
use crate::{BenchError, Result};

/// One report line; also the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: KernelKind,
    pub rows: usize,
    pub cols: usize,
    pub sparsity: f64,
    pub macs: u64,
    pub median_s: f64,
    pub speedup: f64,
}

impl From<&TimingResult> for ReportRow {
    fn from(r: &TimingResult) -> Self {
        Self {
            kind: r.kind,
            rows: r.rows,
            cols: r.cols,
            sparsity: r.sparsity,
            macs: r.macs,
            median_s: r.median_s,
            speedup: r.speedup,
        }
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the same rows as CSV (with header) and as a JSON array.
pub fn emit_report(results: &[TimingResult], csv_path: &Path, json_path: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(BenchError::Empty);
    }
    let rows: Vec<ReportRow> = results.iter().map(ReportRow::from).collect();
    let mut w = csv::Writer::from_writer(create(csv_path)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| BenchError::Io {
        path: csv_path.display().to_string(),
        source,
    })?;
    let mut f = create(json_path)?;
    serde_json::to_writer_pretty(&mut f, &rows)?;
    writeln!(f).map_err(|source| BenchError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}
