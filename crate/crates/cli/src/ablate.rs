use std::path::Path;

use doping_core::doped::{KpShape, VariantConfig};
use doping_lm::{train, Corpus, LayerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Requested split: KP-only compression and doping density in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kp_cf: f64,
    pub doping_pct: f64,
}

impl Cell {
    /// Overall CF implied by the request: `1 / (1/kp_cf + doping fraction)`.
    pub fn nominal_cf(&self) -> f64 {
        1.0 / (1.0 / self.kp_cf + self.doping_pct / 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kp_cf: f64,
    pub doping_pct: f64,
    pub overall_cf: f64,
    pub final_ppl: Option<f64>,
    pub status: String,
}

/// Parses `"20x0,40x2.5"` (`×` also accepted).
pub fn parse_grid(s: &str) -> Result<Vec<Cell>> {
    let cells = s
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let (a, b) = c
                .split_once(['x', '×'])
                .ok_or_else(|| CliError::Input(format!("grid cell {c:?} is not kp_cf x doping%")))?;
            let num = |t: &str| {
                t.trim()
                    .trim_end_matches('%')
                    .parse::<f64>()
                    .map_err(|_| CliError::Input(format!("grid cell {c:?}: {t:?} is not a number")))
            };
            let cell = Cell {
                kp_cf: num(a)?,
                doping_pct: num(b)?,
            };
            if !(cell.kp_cf >= 1.0 && (0.0..100.0).contains(&cell.doping_pct)) {
                return Err(CliError::Input(format!("grid cell {c:?} out of range")));
            }
            Ok(cell)
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(CliError::Input("empty grid".into()));
    }
    Ok(cells)
}

/// KP factor shapes of an `m × n` matrix whose parameter count is closest
/// to `m·n / cf`.
pub fn kp_shape_for_cf(m: usize, n: usize, cf: f64) -> KpShape {
    let want = (m * n) as f64 / cf;
    let divisors = |x: usize| (1..=x).filter(move |d| x % d == 0);
    let mut best = KpShape::new(m, n, 1, 1);
    let mut best_err = f64::INFINITY;
    for m1 in divisors(m) {
        for n1 in divisors(n) {
            let s = KpShape::new(m1, n1, m / m1, n / n1);
            let err = (s.param_count() as f64 / want).ln().abs();
            if err < best_err - 1e-12 {
                best = s;
                best_err = err;
            }
        }
    }
    best
}

enum Plan {
    Run { cfg: TrainConfig, row: AblationRow },
    Infeasible(AblationRow),
}

fn plan(base: &TrainConfig, cell: Cell, overall: f64) -> Plan {
    let mut cfg = base.clone();
    let mut row = AblationRow {
        kp_cf: 0.0,
        doping_pct: 0.0,
        overall_cf: 0.0,
        final_ppl: None,
        status: "ok".into(),
    };
    for k in 0..cfg.layers.len() {
        let m = 4 * cfg.hidden;
        let n = cfg.hidden + if k == 0 { cfg.embed } else { cfg.hidden };
        let total = (m * n) as f64;
        let shape = kp_shape_for_cf(m, n, cell.kp_cf);
        let params = shape.param_count() as f64;
        let nnz = if cell.doping_pct == 0.0 {
            0.0
        } else {
            (total / overall - params).round()
        };
        let achieved = total / (params + nnz.max(0.0));
        if k == 0 {
            row.kp_cf = total / params;
            row.doping_pct = 100.0 * nnz.max(0.0) / total;
            row.overall_cf = achieved;
        }
        if nnz < 0.0 || (cell.doping_pct > 0.0 && nnz == 0.0) {
            row.status = format!("infeasible: {} KP parameters exceed the budget of layer {k}", params);
            return Plan::Infeasible(row);
        }
        if (achieved / overall - 1.0).abs() > 0.02 {
            row.status = format!("infeasible: nearest KP shape gives {achieved:.2}x in layer {k}");
            return Plan::Infeasible(row);
        }
        cfg.layers[k] = LayerConfig {
            variant: VariantConfig::Kp { shape: Some(shape) },
            target_cf: (nnz > 0.0).then_some(achieved),
        };
    }
    if cfg.layers.iter().any(|l| l.target_cf.is_some()) && cfg.pruning.is_none() {
        row.status = "infeasible: doping needs a pruning schedule in the config".into();
        return Plan::Infeasible(row);
    }
    if let Err(e) = cfg.validate() {
        row.status = format!("infeasible: {e}");
        return Plan::Infeasible(row);
    }
    Plan::Run { cfg, row }
}

/// Trains one run per cell at a common overall CF. Cells are independent;
/// `jobs > 1` trains that many at once.
pub fn run_ablation(base: &TrainConfig, corpus: &Corpus, cells: &[Cell], overall: Option<f64>, jobs: usize) -> Result<Vec<AblationRow>> {
    let overall = overall.unwrap_or_else(|| cells[0].nominal_cf());
    for c in cells {
        let nominal = c.nominal_cf();
        if (nominal / overall - 1.0).abs() > 0.02 {
            return Err(CliError::Input(format!(
                "cell {}x{}% implies {nominal:.2}x overall, expected {overall:.2}x",
                c.kp_cf, c.doping_pct
            )));
        }
    }
    let plans: Vec<Plan> = cells.iter().map(|&c| plan(base, c, overall)).collect();
    let run = |p: &Plan| -> Result<AblationRow> {
        match p {
            Plan::Infeasible(row) => Ok(row.clone()),
            Plan::Run { cfg, row } => {
                let state = train(cfg, corpus)?;
                let mut row = row.clone();
                row.final_ppl = state.log.last().map(|r| r.valid_ppl);
                Ok(row)
            }
        }
    };
    let jobs = jobs.max(1);
    let mut rows = Vec::with_capacity(plans.len());
    for chunk in plans.chunks(jobs) {
        let out: Vec<Result<AblationRow>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|p| s.spawn(|| run(p))).collect();
            handles.into_iter().map(|h| h.join().expect("cell thread")).collect()
        });
        for r in out {
            rows.push(r?);
        }
    }
    Ok(rows)
}

pub fn write_rows(rows: &[AblationRow], csv_path: &Path, json_path: &Path) -> Result<()> {
    let to_err = |p: &Path, e: &dyn std::fmt::Display| CliError::Input(format!("{}: {e}", p.display()));
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| to_err(csv_path, &e))?;
    for r in rows {
        w.serialize(r).map_err(|e| to_err(csv_path, &e))?;
    }
    w.flush().map_err(|e| to_err(csv_path, &e))?;
    std::fs::write(json_path, serde_json::to_string_pretty(rows).expect("rows serialize"))
        .map_err(|e| to_err(json_path, &e))
}
