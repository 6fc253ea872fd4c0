use doping_bench::{count_macs, count_weight, instrumented_macs, MacEntry, MacReport};
use doping_core::doped::{make_doped, DopedWeight, KpShape, StructuredTerm, VariantConfig};
use doping_core::linalg::{DenseMatrix, KroneckerPair, PruneMask};
use doping_lm::{LanguageModel, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn medium_kp(rng: &mut ChaCha8Rng) -> KroneckerPair {
    KroneckerPair::new(
        DenseMatrix::random_uniform(52, 65, 1.0, rng),
        DenseMatrix::random_uniform(50, 20, 1.0, rng),
    )
}

#[test]
fn dense_entry() {
    let e = MacEntry::dense("fc", 256, 256);
    assert_eq!(e.dense_macs, 65_536);
    assert_eq!(e.structured_macs + e.sparse_macs, 65_536);
    assert_eq!(e.reduction, 1.0);
}

#[test]
fn large_kronecker_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kp = medium_kp(&mut rng);
    let w = DopedWeight::from_parts(
        StructuredTerm::Kp(kp),
        DenseMatrix::zeros(2600, 1300),
        PruneMask::all_dead(2600, 1300),
        1.0,
        1.0,
        0,
    )
    .unwrap();
    let e = count_weight("kp", &w).unwrap();
    assert_eq!(e.structured_macs, 119_600);
    assert_eq!(e.sparse_macs, 0);
    assert_eq!(e.dense_macs, 3_380_000);
    assert_eq!(instrumented_macs(&w).unwrap(), 119_600);
}

#[test]
fn large_doped_kronecker_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kp = medium_kp(&mut rng);
    let (m, n) = (2600, 1300);
    let nnz = 158_860;
    let mut bits = vec![false; m * n];
    for i in rand::seq::index::sample(&mut rng, m * n, nnz) {
        bits[i] = true;
    }
    let mask = PruneMask::from_bits(m, n, bits).unwrap();
    let mut ws = DenseMatrix::random_uniform(m, n, 1.0, &mut rng);
    mask.apply(&mut ws);
    let w = DopedWeight::from_parts(StructuredTerm::Kp(kp), ws, mask, 1.0, 1.0, nnz).unwrap();
    let e = count_weight("doped", &w).unwrap();
    assert_eq!(e.structured_macs + e.sparse_macs, 278_460);
    assert!((e.reduction - 12.1).abs() < 0.05, "{}", e.reduction);
}

fn random_variant(rng: &mut ChaCha8Rng, m: usize, n: usize) -> VariantConfig {
    let divisors = |x: usize| (1..=x).filter(|d| x % d == 0).collect::<Vec<_>>();
    match rng.gen_range(0..3) {
        0 => {
            let dm = divisors(m);
            let dn = divisors(n);
            let m1 = dm[rng.gen_range(0..dm.len())];
            let n1 = dn[rng.gen_range(0..dn.len())];
            VariantConfig::Kp {
                shape: Some(KpShape::new(m1, n1, m / m1, n / n1)),
            }
        }
        1 => VariantConfig::Lmf {
            rank: rng.gen_range(1..m.min(n)),
        },
        _ => VariantConfig::Hmd {
            m1: Some(rng.gen_range(1..m)),
            rank: Some(rng.gen_range(1..(m / 2).min(n).max(2))),
            budget: None,
        },
    }
}

#[test]
fn formula_matches_instrumented_count_on_random_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 50 {
        let (m, n) = (rng.gen_range(2..40), rng.gen_range(2..40));
        let variant = random_variant(&mut rng, m, n);
        let Ok(mut w) = make_doped(m, n, &variant, None, &mut rng) else {
            continue;
        };
        // Give the doping term a random pattern.
        let mut ws = DenseMatrix::random_uniform(m, n, 1.0, &mut rng);
        let bits: Vec<bool> = (0..m * n).map(|_| rng.gen_bool(0.3)).collect();
        let mask = PruneMask::from_bits(m, n, bits).unwrap();
        mask.apply(&mut ws);
        let nnz = mask.alive_count();
        w = DopedWeight::from_parts(w.structured().clone(), ws, mask, 1.0, 1.0, nnz).unwrap();
        let e = count_weight("w", &w).unwrap();
        assert_eq!(e.structured_macs + e.sparse_macs, instrumented_macs(&w).unwrap());
        assert_eq!(e.sparse_macs as usize, nnz);
        done += 1;
    }
}

#[test]
fn language_model_report() {
    let cfg: TrainConfig = serde_json::from_value(serde_json::json!({
        "seed": 1, "max_vocab": 30, "embed": 8, "hidden": 8,
        "layers": [
            {"variant": {"kind": "kp", "shape": {"m1": 8, "n1": 4, "m2": 4, "n2": 4}}, "target_cf": 4.0},
            {"variant": {"kind": "lmf", "rank": 2}}
        ],
        "bptt": 4, "batch_size": 2, "epochs": 1, "lr": 1.0, "lr_decay": 0.5, "lr_decay_start": 1,
        "max_grad_norm": 5.0, "dropout": 0.0, "l2": 0.0
    }))
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = LanguageModel::new(&cfg, 30, &mut rng).unwrap();
    model.layers[0].w.prune_to(0.8).unwrap();
    let r = count_macs(&model).unwrap();
    assert_eq!(r.entries.len(), 3);
    assert_eq!(r.entries[2].dense_macs, 30 * 8);
    assert_eq!(r.totals.dense_macs, 32 * 16 + 32 * 16 + 240);
    assert_eq!(r.entries[1].sparse_macs, 0);
    assert_eq!(r.entries[0].sparse_macs as usize, model.layers[0].w.nnz());
}

proptest! {
    #[test]
    fn totals_are_sums(parts in proptest::collection::vec((1u64..10_000, 0u64..10_000, 1u64..100_000), 1..8)) {
        let entries: Vec<MacEntry> = parts
            .iter()
            .enumerate()
            .map(|(i, &(s, sp, d))| MacEntry {
                name: format!("l{i}"),
                shape: (1, 1),
                variant: "kp".into(),
                structured_macs: s,
                sparse_macs: sp,
                dense_macs: d,
                reduction: d as f64 / (s + sp) as f64,
            })
            .collect();
        let r = MacReport::from_entries(entries.clone());
        prop_assert_eq!(r.totals.structured_macs, parts.iter().map(|p| p.0).sum::<u64>());
        prop_assert_eq!(r.totals.sparse_macs, parts.iter().map(|p| p.1).sum::<u64>());
        prop_assert_eq!(r.totals.dense_macs, parts.iter().map(|p| p.2).sum::<u64>());
        let expect = r.totals.dense_macs as f64 / (r.totals.structured_macs + r.totals.sparse_macs) as f64;
        prop_assert_eq!(r.totals.reduction, expect);
    }
}
