use doping_lm::{build_vocab, synthetic_corpus, toy_corpus, Batches, Corpus, Vocab, TOY_CHARS, TOY_SEED};
use proptest::prelude::*;

#[test]
fn bundled_corpus_matches_the_generator() {
    assert_eq!(toy_corpus(), synthetic_corpus(TOY_SEED, TOY_CHARS));
    assert!(toy_corpus().len() >= TOY_CHARS);
}

#[test]
fn toy_vocabulary_fits_the_default_cap() {
    let c = Corpus::from_text(toy_corpus(), 2000).unwrap();
    assert!(c.vocab.len() <= 2000);
    assert!(c.train.len() > 8 * c.valid.len());
    assert!(!c.test.is_empty());
}

#[test]
fn unknown_words_map_to_unk() {
    let c = Corpus::from_splits(&["a b a ."], &["a z ."], &["b ."], 10).unwrap();
    let unk = c.vocab.id("<unk>");
    assert_eq!(unk, 0);
    assert!(c.valid.contains(&unk));
    assert!(!c.train.contains(&unk));
}

proptest! {
    #[test]
    fn windows_tile_each_stream(n in 2usize..400, batch in 1usize..7, bptt in 1usize..12) {
        let ids: Vec<u32> = (0..n as u32).collect();
        prop_assume!(n / batch >= 2);
        let b = Batches::new(&ids, batch).unwrap();
        let mut seen = 0;
        for k in 0..b.windows(bptt) {
            let (x, y) = b.window(k, bptt);
            prop_assert_eq!(x.len(), y.len());
            prop_assert_eq!(x.len() % batch, 0);
            // Targets are the next token of each column's contiguous stream.
            for (xi, yi) in x.iter().zip(&y) {
                prop_assert_eq!(*yi, *xi + 1);
            }
            seen += x.len();
        }
        prop_assert_eq!(seen, b.target_count());
    }

    #[test]
    fn vocab_ids_round_trip(words in proptest::collection::vec("[a-e]{1,3}", 1..60), cap in 1usize..30) {
        let v: Vocab = build_vocab(words.iter().map(String::as_str), cap).unwrap();
        prop_assert!(v.len() <= cap.max(1));
        for (id, t) in v.tokens().iter().enumerate() {
            prop_assert_eq!(v.id(t), id as u32);
            prop_assert_eq!(v.token(id as u32), Some(t.as_str()));
        }
    }
}
