//! The `doping` command-line tool: presets, training, reports, kernel
//! benchmarks and the KP-versus-doping ablation grid.

pub mod ablate;
mod error;
pub mod presets;
pub mod report;
pub mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use doping_bench::{emit_report, time_matvec, KernelKind, TimingSpec};
use doping_core::doped::KpShape;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "doping", version, about = "Doped structured-matrix LSTM compression toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a fully populated training config for a preset.
    InitConfig {
        #[arg(long)]
        preset: String,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a language model and write logs, checkpoint and MAC report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plain-text corpus; the bundled toy corpus when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Print per-layer compression and MAC figures of a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the JSON report to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Time matvec kernels against a dense baseline.
    Bench {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// One value or a comma-separated sweep.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        sparsity: Vec<f64>,
        /// Kronecker factor shapes `m1,n1,m2,n2`.
        #[arg(long, value_delimiter = ',')]
        kp: Option<Vec<usize>>,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run per (KP CF, doping %) cell at a fixed overall CF.
    AblateDoping {
        #[arg(long)]
        config: PathBuf,
        /// Cells such as `20x0,40x2.5,80x3.75`.
        #[arg(long)]
        grid: String,
        /// Overall CF shared by every cell; implied by the first cell when absent.
        #[arg(long)]
        overall_cf: Option<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| error::io_err(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { preset, out } => {
            let json = presets::preset(&preset)?.to_json();
            match out {
                Some(p) => write_text(&p, &(json + "\n"))?,
                None => println!("{json}"),
            }
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            epochs,
            quiet,
        } => {
            let s = train::run_train(&train::TrainArgs {
                config,
                data,
                out,
                resume,
                epochs,
                quiet,
            })?;
            log::info!("final valid perplexity {:.3}, test {:.3}", s.final_valid_ppl, s.test_ppl);
        }
        Command::Report { checkpoint, json } => {
            let r = report::run_report(&checkpoint)?;
            let text = serde_json::to_string_pretty(&r).expect("report serializes");
            print!("{}", report::render_table(&r));
            println!("{text}");
            if let Some(p) = json {
                write_text(&p, &(text + "\n"))?;
            }
        }
        Command::Bench {
            kind,
            rows,
            cols,
            sparsity,
            kp,
            iters,
            warmup,
            seed,
            out,
        } => {
            let kind: KernelKind = kind.parse()?;
            let kp = match kp.as_deref() {
                None => None,
                Some(&[m1, n1, m2, n2]) => Some(KpShape::new(m1, n1, m2, n2)),
                Some(_) => return Err(CliError::Input("--kp takes four values m1,n1,m2,n2".into())),
            };
            let results = sparsity
                .iter()
                .map(|&s| {
                    time_matvec(&TimingSpec {
                        kind,
                        rows,
                        cols,
                        sparsity: s,
                        kp,
                        warmup,
                        iters,
                        seed,
                    })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            std::fs::create_dir_all(&out).map_err(|e| error::io_err(&out, e))?;
            emit_report(&results, &out.join("bench.csv"), &out.join("bench.json"))?;
            println!("{:<6} {:>6} {:>6} {:>9} {:>9} {:>12} {:>8}", "kind", "rows", "cols", "sparsity", "macs", "median_s", "speedup");
            for r in &results {
                println!(
                    "{:<6} {:>6} {:>6} {:>9.4} {:>9} {:>12.3e} {:>8.2}",
                    r.kind, r.rows, r.cols, r.sparsity, r.macs, r.median_s, r.speedup
                );
            }
        }
        Command::AblateDoping {
            config,
            grid,
            overall_cf,
            data,
            out,
            jobs,
        } => {
            let base = train::read_config(&config)?;
            let cells = ablate::parse_grid(&grid)?;
            let corpus = train::load_corpus(data.as_deref(), base.max_vocab)?;
            let rows = ablate::run_ablation(&base, &corpus, &cells, overall_cf, jobs)?;
            std::fs::create_dir_all(&out).map_err(|e| error::io_err(&out, e))?;
            ablate::write_rows(&rows, &out.join("ablation.csv"), &out.join("ablation.json"))?;
            println!("{:>8} {:>10} {:>10} {:>10}  status", "kp_cf", "doping_pct", "overall_cf", "final_ppl");
            for r in &rows {
                let ppl = r.final_ppl.map_or("-".to_string(), |p| format!("{p:.3}"));
                println!("{:>8.2} {:>10.3} {:>10.2} {:>10}  {}", r.kp_cf, r.doping_pct, r.overall_cf, ppl, r.status);
            }
        }
    }
    Ok(())
}
