mod common;

use common::{small_config, small_corpus};
use doping_lm::checkpoint::{Checkpoint, MAGIC, VERSION};
use doping_lm::{evaluate_perplexity, LmError, TrainState, Trainer};

fn trained_checkpoint(epochs: usize) -> (Checkpoint, doping_lm::Corpus) {
    let mut cfg = small_config();
    cfg.epochs = epochs;
    let corpus = small_corpus(cfg.max_vocab);
    let mut state = TrainState::init(&cfg, corpus.vocab.len()).unwrap();
    Trainer::new(&cfg, &corpus, &state).unwrap().run(&mut state, |_, _| Ok(())).unwrap();
    let ck = Checkpoint {
        config: cfg,
        vocab: corpus.vocab.clone(),
        state,
    };
    (ck, corpus)
}

#[test]
fn save_load_save_is_byte_identical() {
    let (ck, _) = trained_checkpoint(2);
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    assert_eq!(loaded.config, ck.config);
    assert_eq!(loaded.vocab, ck.vocab);
    assert_eq!(loaded.state.log, ck.state.log);
    assert_eq!(loaded.state.prune_log, ck.state.prune_log);
}

#[test]
fn loaded_model_evaluates_identically() {
    let (ck, corpus) = trained_checkpoint(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dkpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let a = evaluate_perplexity(&ck.state.model, &corpus.test, 4, 5).unwrap();
    let b = evaluate_perplexity(&loaded.state.model, &corpus.test, 4, 5).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn frozen_weights_survive_a_round_trip() {
    let (mut ck, corpus) = trained_checkpoint(1);
    ck.state.model = ck.state.model.freeze_for_inference();
    let loaded = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert!(loaded.state.model.layers[0].w.frozen().is_some());
    assert_eq!(loaded.to_bytes(), ck.to_bytes());
    let a = evaluate_perplexity(&ck.state.model, &corpus.valid, 4, 5).unwrap();
    let b = evaluate_perplexity(&loaded.state.model, &corpus.valid, 4, 5).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn resuming_from_a_checkpoint_is_deterministic() {
    let (ck, corpus) = trained_checkpoint(1);
    let mut cfg = ck.config.clone();
    cfg.epochs = 3;
    let mut resumed = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().state;
    Trainer::new(&cfg, &corpus, &resumed).unwrap().run(&mut resumed, |_, _| Ok(())).unwrap();

    let mut direct = TrainState::init(&cfg, corpus.vocab.len()).unwrap();
    Trainer::new(&cfg, &corpus, &direct).unwrap().run(&mut direct, |_, _| Ok(())).unwrap();

    assert_eq!(resumed.step, direct.step);
    assert_eq!(resumed.prune_log, direct.prune_log);
    for k in 0..direct.model.param_len() {
        assert_eq!(resumed.model.param(k).to_bits(), direct.model.param(k).to_bits(), "parameter {k}");
    }
}

fn expect_checkpoint_error(bytes: &[u8], needle: &str) {
    match Checkpoint::from_bytes(bytes) {
        Err(LmError::Checkpoint(msg)) => assert!(msg.contains(needle), "{msg}"),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("corrupt checkpoint loaded"),
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let (ck, _) = trained_checkpoint(1);
    let bytes = ck.to_bytes();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    expect_checkpoint_error(&bad_magic, "magic");

    let mut bad_version = bytes.clone();
    bad_version[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    expect_checkpoint_error(&bad_version, "version");

    expect_checkpoint_error(&bytes[..2], "short");
    for cut in [9, 100, bytes.len() / 2, bytes.len() - 1] {
        expect_checkpoint_error(&bytes[..cut], "truncated");
    }

    let mut trailing = bytes.clone();
    trailing.push(0);
    expect_checkpoint_error(&trailing, "trailing");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(dir.path().join("nope")), Err(LmError::Io(_))));
}
