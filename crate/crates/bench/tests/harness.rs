use srnn_bench::{
    approx_error_sweep, bench_runtime, is_non_increasing, parse_grid, write_approx_csv,
    write_bench_csv, BenchKind, SweepSpec, BENCH_HEADER,
};
use srnn_core::{Error, FeatureMapKind};

#[test]
fn recurrent_state_is_closed_form_and_constant_in_n() {
    let grid = parse_grid("N=64,128,256;d=2;e=4;order=3").unwrap();
    let rows = bench_runtime(BenchKind::Recurrent, &grid, 3, 1).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.state_elements == 75));
    assert!(rows
        .iter()
        .all(|r| r.checksum.is_finite() && r.repeats == 3));
    assert_eq!(
        rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        vec![64, 128, 256]
    );
}

#[test]
fn too_few_repeats_is_rejected() {
    let grid = parse_grid("N=8").unwrap();
    assert!(matches!(
        bench_runtime(BenchKind::Recurrent, &grid, 2, 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn oversized_state_is_a_resource_error_before_any_cell_runs() {
    let grid = parse_grid("N=8;d=8;e=4;order=12").unwrap();
    let err = bench_runtime(BenchKind::Recurrent, &grid, 3, 0).unwrap_err();
    assert!(err.is_resource_or_io());
}

#[test]
fn softmax_and_order_12_recurrent_checksums_agree() {
    let grid = parse_grid("N=256;d=2;e=4;order=12").unwrap();
    let soft = bench_runtime(BenchKind::SoftmaxDirect, &grid, 3, 9).unwrap();
    let rec = bench_runtime(BenchKind::Recurrent, &grid, 3, 9).unwrap();
    let (a, b) = (soft[0].checksum, rec[0].checksum);
    assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()), "{a} vs {b}");
}

#[test]
fn bench_csv_schema() {
    let grid = parse_grid("N=16,32").unwrap();
    let rows = bench_runtime(BenchKind::TaylorDirect, &grid, 3, 0).unwrap();
    let mut buf = Vec::new();
    write_bench_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.split('\n').collect();
    assert_eq!(lines[0], BENCH_HEADER.join(","));
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("taylor_direct,16,2,4,3,3,"));
    assert!(!text.contains('\r'));
}

#[test]
fn empty_csv_still_has_a_header() {
    let mut buf = Vec::new();
    write_bench_csv(&mut buf, &[]).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        format!("{}\n", BENCH_HEADER.join(","))
    );
}

#[test]
fn sweep_at_bound_one_reaches_order_ten_target() {
    let orders: Vec<usize> = (0..=10).collect();
    let rows = approx_error_sweep(&orders, &SweepSpec::new(1.0)).unwrap();
    assert!(rows[0].max_rel_err > 0.0);
    assert!(rows[10].max_rel_err <= 1e-6, "{:?}", rows[10]);
    assert!(is_non_increasing(&rows, 1e-14));
}

#[test]
fn sweep_at_clamp_bound_five() {
    let rows = approx_error_sweep(&[25], &SweepSpec::new(5.0)).unwrap();
    assert!(rows[0].max_rel_err <= 1e-3, "{:?}", rows[0]);
}

#[test]
fn cosine_maps_flatten_earlier_than_identity() {
    let orders: Vec<usize> = (0..=12).collect();
    let identity = approx_error_sweep(&orders, &SweepSpec::new(5.0)).unwrap();
    let cosine = approx_error_sweep(
        &orders,
        &SweepSpec {
            query_map: FeatureMapKind::Cosine,
            key_map: FeatureMapKind::Cosine,
            ..SweepSpec::new(5.0)
        },
    )
    .unwrap();
    for (c, i) in cosine.iter().zip(&identity).skip(1) {
        assert!(
            c.max_rel_err <= i.max_rel_err,
            "order {}: {} vs {}",
            c.order,
            c.max_rel_err,
            i.max_rel_err
        );
    }
    assert!(cosine[10].max_rel_err <= 1e-6);
}

#[test]
fn single_order_sweep_and_csv() {
    let rows = approx_error_sweep(&[0], &SweepSpec::new(1.0)).unwrap();
    assert_eq!(rows.len(), 1);
    let mut buf = Vec::new();
    write_approx_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("order,max_rel_err,mean_rel_err\n0,"));
}

#[test]
fn sweep_rejects_bad_bound() {
    assert!(approx_error_sweep(&[1], &SweepSpec::new(0.0)).is_err());
    assert!(approx_error_sweep(&[1], &SweepSpec::new(f64::NAN)).is_err());
}
