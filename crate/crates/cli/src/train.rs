use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use doping_lm::checkpoint::Checkpoint;
use doping_lm::{evaluate_perplexity, toy_corpus, Corpus, EpochRecord, TrainConfig, TrainState, Trainer};
use serde::Serialize;

use crate::error::io_err;
use crate::{CliError, Result};

pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.dkpt";
pub const MACS_FILE: &str = "macs.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    /// Overrides `epochs` of the config, e.g. to extend a resumed run.
    pub epochs: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub epochs: usize,
    pub steps: u64,
    pub final_train_ppl: f64,
    pub final_valid_ppl: f64,
    pub test_ppl: f64,
    pub final_sparsity: f64,
    pub probe_onset_ppl: Option<f64>,
    pub probe_end_ppl: Option<f64>,
    pub probe_degradation: Option<f64>,
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    TrainConfig::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_corpus(data: Option<&Path>, max_vocab: usize) -> Result<Corpus> {
    match data {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Ok(Corpus::from_text(&text, max_vocab)?)
        }
        None => Ok(Corpus::from_text(toy_corpus(), max_vocab)?),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn log_line(rec: &EpochRecord) -> String {
    serde_json::to_string(rec).expect("record serializes")
}

/// Trains (or resumes) and writes the per-epoch log, a checkpoint after
/// every epoch, the MAC report and a summary into `out`.
pub fn run_train(args: &TrainArgs) -> Result<Summary> {
    let (mut cfg, resumed) = match &args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if let Some(c) = &args.config {
                let mut given = read_config(c)?;
                given.epochs = ck.config.epochs;
                if given != ck.config {
                    return Err(CliError::Input(format!(
                        "{} differs from the configuration stored in {}",
                        c.display(),
                        p.display()
                    )));
                }
            }
            (ck.config.clone(), Some(ck))
        }
        None => {
            let c = args
                .config
                .as_ref()
                .ok_or_else(|| CliError::Input("--config is required unless --resume is given".into()))?;
            (read_config(c)?, None)
        }
    };
    if let Some(e) = args.epochs {
        cfg.epochs = e;
        cfg.validate()?;
    }
    let corpus = load_corpus(args.data.as_deref(), cfg.max_vocab)?;
    let mut state = match resumed {
        Some(ck) => {
            if ck.vocab != corpus.vocab {
                return Err(CliError::Input("checkpoint vocabulary does not match the corpus".into()));
            }
            ck.state
        }
        None => TrainState::init(&cfg, corpus.vocab.len())?,
    };

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let log_path = args.out.join(LOG_FILE);
    let ck_path = args.out.join(CHECKPOINT_FILE);
    {
        // Start the log from the records carried by a resumed state.
        let mut f = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
        for r in &state.log {
            writeln!(f, "{}", log_line(r)).map_err(|e| io_err(&log_path, e))?;
        }
    }
    fs::write(args.out.join("config.json"), cfg.to_json()).map_err(|e| io_err(&args.out, e))?;

    let trainer = Trainer::new(&cfg, &corpus, &state)?;
    let quiet = args.quiet;
    trainer.run(&mut state, |rec, st| {
        let line = log_line(rec);
        if !quiet {
            println!("{line}");
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(doping_lm::LmError::Io)?;
        writeln!(f, "{line}").map_err(doping_lm::LmError::Io)?;
        let ck = Checkpoint {
            config: cfg.clone(),
            vocab: corpus.vocab.clone(),
            state: st.clone(),
        };
        write_atomic(&ck_path, &ck.to_bytes()).map_err(|e| doping_lm::LmError::Checkpoint(e.to_string()))?;
        Ok(())
    })?;
    if state.log.is_empty() {
        return Err(CliError::Input("no epochs to train".into()));
    }
    // A resumed run that was already complete still leaves a checkpoint.
    if !ck_path.exists() {
        let ck = Checkpoint {
            config: cfg.clone(),
            vocab: corpus.vocab.clone(),
            state: state.clone(),
        };
        write_atomic(&ck_path, &ck.to_bytes())?;
    }

    let report = doping_bench::count_macs(&state.model.freeze_for_inference())?;
    fs::write(args.out.join(MACS_FILE), serde_json::to_string_pretty(&report).expect("report serializes"))
        .map_err(|e| io_err(&args.out, e))?;

    let last = state.log.last().expect("non-empty log");
    let summary = Summary {
        epochs: state.epoch,
        steps: state.step,
        final_train_ppl: last.train_ppl,
        final_valid_ppl: last.valid_ppl,
        test_ppl: evaluate_perplexity(&state.model, &corpus.test, cfg.eval_batch_size, cfg.bptt)?,
        final_sparsity: last.sparsity,
        probe_onset_ppl: state.probe.onset_ppl,
        probe_end_ppl: state.probe.end_ppl,
        probe_degradation: state.probe.degradation(),
    };
    fs::write(
        args.out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| io_err(&args.out, e))?;
    Ok(summary)
}
