use doping_bench::{emit_report, read_csv, time_matvec, BenchError, KernelKind, TimingResult, TimingSpec};
use doping_core::doped::KpShape;

fn result(kind: KernelKind, sparsity: f64, median: f64) -> TimingResult {
    TimingResult {
        kind,
        rows: 256,
        cols: 256,
        sparsity,
        iterations: 30,
        warmup: 10,
        macs: ((1.0 - sparsity) * 65536.0).round() as u64,
        median_s: median,
        mean_s: median * 1.01,
        p95_s: median * 1.2,
        speedup: 2.3e-5 / median,
    }
}

#[test]
fn dense_against_itself_is_in_the_noise_band() {
    // Self-comparison; a loaded machine gets two more attempts.
    let ok = (0..3).any(|seed| {
        let mut spec = TimingSpec::new(KernelKind::Dense, 256, 256);
        spec.seed = seed;
        let r = time_matvec(&spec).unwrap();
        assert_eq!(r.macs, 65_536);
        assert!(r.iterations >= 30 && r.warmup >= 10);
        assert!(r.median_s <= r.p95_s);
        (0.9..=1.1).contains(&r.speedup)
    });
    assert!(ok);
}

#[test]
fn kernels_report_their_macs() {
    let mut csr = TimingSpec::new(KernelKind::Csr, 64, 32);
    csr.sparsity = 0.75;
    assert_eq!(time_matvec(&csr).unwrap().macs, 512);

    let mut kp = TimingSpec::new(KernelKind::Kp, 64, 32);
    kp.kp = Some(KpShape::new(8, 4, 8, 8));
    let r = time_matvec(&kp).unwrap();
    let (cx, xb) = doping_core::linalg::kp_order_macs(8, 4, 8, 8);
    assert_eq!(r.macs, cx.min(xb));

    let mut doped = kp.clone();
    doped.kind = KernelKind::Doped;
    doped.sparsity = 0.9;
    let d = time_matvec(&doped).unwrap();
    assert_eq!(d.macs, r.macs + ((1.0 - 0.9) * 2048.0f64).round() as u64);
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = TimingSpec::new(KernelKind::Csr, 16, 16);
    s.sparsity = 1.0;
    assert!(matches!(time_matvec(&s), Err(BenchError::Invalid(_))));
    let mut s = TimingSpec::new(KernelKind::Kp, 16, 16);
    assert!(time_matvec(&s).is_err());
    s.kp = Some(KpShape::new(4, 4, 4, 2));
    assert!(time_matvec(&s).is_err());
    let mut s = TimingSpec::new(KernelKind::Dense, 16, 16);
    s.iters = 29;
    assert!(time_matvec(&s).is_err());
    let mut s = TimingSpec::new(KernelKind::Dense, 16, 16);
    s.sparsity = 0.5;
    assert!(time_matvec(&s).is_err());
    assert!(time_matvec(&TimingSpec::new(KernelKind::Dense, 0, 16)).is_err());
}

#[test]
fn single_result_gives_header_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let (c, j) = (dir.path().join("t.csv"), dir.path().join("t.json"));
    emit_report(&[result(KernelKind::Dense, 0.0, 2.3e-5)], &c, &j).unwrap();
    let text = std::fs::read_to_string(&c).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "kind,rows,cols,sparsity,macs,median_s,speedup");
    assert!(lines[1].starts_with("dense,256,256,"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 1);
    assert_eq!(json[0]["kind"], "dense");
}

#[test]
fn rerun_is_byte_identical_and_parses_back() {
    let results = vec![
        result(KernelKind::Dense, 0.0, 2.3e-5),
        result(KernelKind::Csr, 0.875, 7.123456789012345e-6),
        result(KernelKind::Csr, 0.9, 1.0 / 3.0 * 1e-5),
    ];
    let dir = tempfile::tempdir().unwrap();
    let paths = |k: &str| (dir.path().join(format!("{k}.csv")), dir.path().join(format!("{k}.json")));
    let (c1, j1) = paths("a");
    let (c2, j2) = paths("b");
    emit_report(&results, &c1, &j1).unwrap();
    emit_report(&results, &c2, &j2).unwrap();
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_eq!(std::fs::read(&j1).unwrap(), std::fs::read(&j2).unwrap());

    let rows = read_csv(&c1).unwrap();
    assert_eq!(rows.len(), results.len());
    for (row, r) in rows.iter().zip(&results) {
        assert_eq!(row.kind, r.kind);
        assert_eq!((row.rows, row.cols, row.macs), (r.rows, r.cols, r.macs));
        for (a, b) in [(row.sparsity, r.sparsity), (row.median_s, r.median_s), (row.speedup, r.speedup)] {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE), "{a} vs {b}");
        }
    }
}

#[test]
fn report_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (c, j) = (dir.path().join("t.csv"), dir.path().join("t.json"));
    assert!(matches!(emit_report(&[], &c, &j), Err(BenchError::Empty)));
    let bad = dir.path().join("missing").join("t.csv");
    assert!(matches!(
        emit_report(&[result(KernelKind::Dense, 0.0, 1e-5)], &bad, &j),
        Err(BenchError::Io { .. })
    ));
}
