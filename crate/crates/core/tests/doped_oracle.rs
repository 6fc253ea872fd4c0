mod common;

use common::*;
use doping_core::doped::{
    make_doped, CmrBatchMasks, CmrMasks, DopedGrads, DopedWeight, KpShape, StructuredTerm,
    VariantConfig,
};
use doping_core::linalg::{numerical_rank, DenseMatrix, MacCounter, PruneMask};
use rand::Rng;

/// A random variant and logical shape with every dimension ≤ `max`.
fn random_variant(r: &mut impl Rng, max: usize) -> (usize, usize, VariantConfig) {
    match r.gen_range(0..3) {
        0 => {
            let lim = (max as f64).sqrt() as usize;
            let mut d = || r.gen_range(1..=lim);
            let s = KpShape::new(d(), d(), d(), d());
            let (m, n) = s.logical();
            (m, n, VariantConfig::Kp { shape: Some(s) })
        }
        1 => {
            let (m, n) = (r.gen_range(2..=max), r.gen_range(2..=max));
            let rank = r.gen_range(1..m.min(n));
            (m, n, VariantConfig::Lmf { rank })
        }
        _ => {
            let (m, n) = (r.gen_range(2..=max), r.gen_range(1..=max));
            let m1 = r.gen_range(1..m);
            let rank = r.gen_range(1..=4);
            (m, n, VariantConfig::Hmd { m1: Some(m1), rank: Some(rank), budget: None })
        }
    }
}

/// Random factors, random doping term under a random mask, random α and β.
fn random_doped(r: &mut impl Rng, max: usize) -> DopedWeight {
    let (m, n, v) = random_variant(r, max);
    let mut s = v.build_zeros(m, n).unwrap();
    for f in s.factors_mut() {
        *f = random_matrix(r, f.rows(), f.cols());
    }
    let ws = random_matrix(r, m, n);
    let density = r.gen_range(0.0..=1.0);
    let bits = (0..m * n).map(|_| r.gen::<f64>() < density).collect();
    let mask = PruneMask::from_bits(m, n, bits).unwrap();
    let (a, b) = (r.gen_range(0.5..1.5), r.gen_range(0.5..1.5));
    DopedWeight::from_parts(s, ws, mask, a, b, 0).unwrap()
}

fn dense_oracle(w: &DopedWeight) -> DenseMatrix {
    let s = w.structured().expand().unwrap();
    let (m, n) = w.shape();
    DenseMatrix::from_fn(m, n, |i, j| {
        let sp = if w.mask().is_alive(i, j) { w.ws().get(i, j) } else { 0.0 };
        w.alpha() * s.get(i, j) + w.beta() * sp
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn forward_matches_dense_sum_for_all_variants() {
    let mut r = rng(30);
    for _ in 0..300 {
        let w = random_doped(&mut r, 64);
        let x = random_vec(&mut r, w.shape().1);
        let want = dense_oracle(&w).matvec(&x).unwrap();
        let got = w.forward(&x, None).unwrap();
        assert!(max_abs_diff(&got, &want) <= 1e-10, "{:?}", w.kind());
        let all = CmrMasks::keep_all(w.shape().0);
        assert_eq!(w.forward(&x, Some(&all)).unwrap(), got);
        let frozen = w.freeze_for_inference();
        assert!(max_abs_diff(&frozen.forward(&x, None).unwrap(), &got) <= 1e-12);
    }
}

#[test]
fn dropped_terms_vanish() {
    let mut r = rng(31);
    for _ in 0..20 {
        let w = random_doped(&mut r, 24);
        let (m, n) = w.shape();
        let x = random_vec(&mut r, n);
        let none = w.forward(&x, Some(&CmrMasks::drop_all(m))).unwrap();
        assert!(none.iter().all(|&v| v == 0.0));
        let only_structured = CmrMasks { b1: vec![true; m], b2: vec![false; m] };
        let ys = w.forward(&x, Some(&only_structured)).unwrap();
        let yk: Vec<f64> = w.structured().matvec(&x).unwrap().iter().map(|v| v * w.alpha()).collect();
        assert_eq!(ys, yk);
    }
}

#[test]
fn batch_paths_match_vector_paths() {
    let mut r = rng(32);
    for _ in 0..60 {
        let w = random_doped(&mut r, 30);
        let (m, n) = w.shape();
        let batch = r.gen_range(1..=5);
        let z = random_vec(&mut r, batch * n);
        let g = random_vec(&mut r, batch * m);
        let masks = CmrBatchMasks::draw(batch, m, 0.4, &mut r);
        let (y, cache) = w.forward_batch(&z, batch, Some(&masks)).unwrap();
        let mut grads = DopedGrads::zeros_like(&w);
        let mut gz = vec![0.0; batch * n];
        w.backward_batch(&z, &cache, &g, Some(&masks), &mut grads, &mut gz).unwrap();

        let mut acc = DopedGrads::zeros_like(&w);
        for b in 0..batch {
            let row = masks.row(b);
            let xb = &z[b * n..(b + 1) * n];
            let gb = &g[b * m..(b + 1) * m];
            let yb = w.forward(xb, Some(&row)).unwrap();
            assert!(max_abs_diff(&yb, &y[b * m..(b + 1) * m]) <= 1e-12);
            let (gr, gx) = w.backward(xb, gb, Some(&row)).unwrap();
            assert!(max_abs_diff(&gx, &gz[b * n..(b + 1) * n]) <= 1e-12);
            for (a, f) in acc.structured.factors_mut().into_iter().zip(gr.structured.factors()) {
                a.add_assign(f).unwrap();
            }
            acc.ws.add_assign(&gr.ws).unwrap();
            acc.alpha += gr.alpha;
            acc.beta += gr.beta;
        }
        for (a, f) in acc.structured.factors().into_iter().zip(grads.structured.factors()) {
            assert!(max_abs_diff(a.data(), f.data()) <= 1e-12);
        }
        assert!(max_abs_diff(acc.ws.data(), grads.ws.data()) <= 1e-12);
        assert!((acc.alpha - grads.alpha).abs() <= 1e-12);
        assert!((acc.beta - grads.beta).abs() <= 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences_for_all_variants() {
    let mut r = rng(33);
    let mut worst = 0.0f64;
    let mut kinds = [0usize; 3];
    for _ in 0..100 {
        let w = random_doped(&mut r, 9);
        kinds[w.kind() as usize] += 1;
        let (m, n) = w.shape();
        let x = random_vec(&mut r, n);
        let g = random_vec(&mut r, m);
        let (grads, gx) = w.backward(&x, &g, None).unwrap();
        let loss = |w: &DopedWeight, x: &[f64]| dot(&w.forward(x, None).unwrap(), &g);

        let nf = w.structured().factors().len();
        for fi in 0..nf {
            let mut p = w.structured().factors()[fi].data().to_vec();
            for k in 0..p.len() {
                let num = central_diff(&mut p, k, |p| {
                    let mut w2 = w.clone();
                    w2.structured_mut().factors_mut()[fi].data_mut().copy_from_slice(p);
                    loss(&w2, &x)
                });
                worst = worst.max(rel_err(grads.structured.factors()[fi].data()[k], num));
            }
        }
        let mut p = w.ws().data().to_vec();
        for k in 0..p.len() {
            let (i, j) = (k / n, k % n);
            if !w.mask().is_alive(i, j) {
                assert_eq!(grads.ws.get(i, j), 0.0);
                continue;
            }
            let num = central_diff(&mut p, k, |p| {
                let mut w2 = w.clone();
                w2.update_ws(|ws| ws.data_mut().copy_from_slice(p));
                loss(&w2, &x)
            });
            worst = worst.max(rel_err(grads.ws.data()[k], num));
        }
        let mut ab = [w.alpha(), w.beta()];
        let na = central_diff(&mut ab, 0, |p| {
            let mut w2 = w.clone();
            w2.set_alpha(p[0]);
            loss(&w2, &x)
        });
        let nb = central_diff(&mut ab, 1, |p| {
            let mut w2 = w.clone();
            w2.set_beta(p[1]);
            loss(&w2, &x)
        });
        worst = worst.max(rel_err(grads.alpha, na)).max(rel_err(grads.beta, nb));
        let mut xs = x.clone();
        for k in 0..n {
            let num = central_diff(&mut xs, k, |p| loss(&w, p));
            worst = worst.max(rel_err(gx[k], num));
        }
    }
    assert!(kinds.iter().all(|&c| c > 10), "variant coverage {kinds:?}");
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn zero_upstream_and_dropped_rows_give_zero_ws_gradient() {
    let mut r = rng(34);
    let w = random_doped(&mut r, 12);
    let (m, n) = w.shape();
    let x = random_vec(&mut r, n);
    let (grads, gx) = w.backward(&x, &vec![0.0; m], None).unwrap();
    assert!(gx.iter().all(|&v| v == 0.0));
    assert!(grads.ws.data().iter().all(|&v| v == 0.0));
    assert!(grads.structured.factors().iter().all(|f| f.max_abs() == 0.0));

    let masks = CmrMasks::draw(m, 0.5, &mut r);
    let (grads, _) = w.backward(&x, &vec![1.0; m], Some(&masks)).unwrap();
    for i in 0..m {
        if !masks.b2[i] {
            assert!(grads.ws.row(i).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn cmr_mean_is_scaled_forward() {
    let mut r = rng(35);
    let v = VariantConfig::Kp { shape: Some(KpShape::new(4, 4, 4, 4)) };
    let w = make_doped(16, 16, &v, Some(2.0), &mut r).unwrap();
    let x = random_vec(&mut r, 16);
    let full = w.forward(&x, None).unwrap();
    let yk: Vec<f64> = w.structured().matvec(&x).unwrap();
    let ys: Vec<f64> = (0..16).map(|j| full[j] - yk[j]).collect();
    for p in [0.3, 0.5, 0.7] {
        let draws = 10_000;
        let mut sum = vec![0.0; 16];
        for _ in 0..draws {
            let masks = CmrMasks::draw(16, p, &mut r);
            for (s, v) in sum.iter_mut().zip(w.forward(&x, Some(&masks)).unwrap()) {
                *s += v;
            }
        }
        for j in 0..16 {
            let mean = sum[j] / draws as f64;
            // Two independent Bernoulli(1-p) terms.
            let var = p * (1.0 - p) * (yk[j] * yk[j] + ys[j] * ys[j]);
            let se = (var / draws as f64).sqrt();
            assert!((mean - (1.0 - p) * full[j]).abs() <= 4.0 * se + 1e-12, "p={p} j={j}");
        }
    }
}

#[test]
fn rank_ordering_at_matched_budget() {
    let mut r = rng(36);
    let kp = VariantConfig::Kp { shape: Some(KpShape::new(32, 32, 2, 2)) };
    let hmd = VariantConfig::Hmd { m1: None, rank: None, budget: Some(1024) };
    let lmf = VariantConfig::Lmf { rank: 8 };
    for _ in 0..20 {
        let mut terms: Vec<StructuredTerm> =
            [&kp, &hmd, &lmf].iter().map(|v| v.build_zeros(64, 64).unwrap()).collect();
        for t in &mut terms {
            t.randomize(&mut r);
        }
        let bounds: Vec<usize> = terms.iter().map(|t| t.rank_bound()).collect();
        assert_eq!(bounds, vec![64, 10, 8]);
        let params: Vec<usize> = terms.iter().map(|t| t.param_count()).collect();
        assert!(params.iter().all(|&p| (935..=1028).contains(&p)), "{params:?}");
        let ranks: Vec<usize> = terms.iter().map(|t| numerical_rank(&t.expand().unwrap(), 1e-8)).collect();
        assert_eq!(ranks, bounds);
        let gauss: Vec<usize> = terms.iter().map(|t| gaussian_rank(&t.expand().unwrap(), 1e-9)).collect();
        assert_eq!(gauss, bounds);
    }
}

/// Counts by walking every stored number rather than using the formulas.
fn brute_params(w: &DopedWeight) -> usize {
    let mut count = 0;
    for f in w.structured().factors() {
        count += f.data().iter().count();
    }
    count + w.mask().bits().iter().filter(|&&b| b).count()
}

#[test]
fn compression_and_macs_match_brute_force() {
    let mut r = rng(37);
    for _ in 0..50 {
        let w = random_doped(&mut r, 40);
        let (m, n) = w.shape();
        let cf = (m * n) as f64 / brute_params(&w) as f64;
        assert_eq!(w.compression_factor(), cf);

        let x = random_vec(&mut r, n);
        let mut c = MacCounter::default();
        w.forward_tallied(&x, None, &mut c).unwrap();
        let mc = w.mac_count();
        assert_eq!(mc.structured + mc.sparse, c.count, "{:?}", w.kind());
        assert_eq!(mc.dense, (m * n) as u64);
        assert_eq!(mc.sparse as usize, w.nnz());
    }
}

#[test]
fn worked_compression_examples() {
    let mut r = rng(38);
    let v = VariantConfig::Kp { shape: Some(KpShape::new(10, 10, 10, 10)) };
    for (cf, sparsity, lo, hi) in [(14.0, 0.95, 14.2, 14.4), (8.4, 0.90, 8.3, 8.4)] {
        let mut w = make_doped(100, 100, &v, Some(cf), &mut r).unwrap();
        w.prune_to(sparsity).unwrap();
        let got = w.compression_factor();
        assert!((lo..=hi).contains(&got), "{got}");
    }
}
