use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srnn_core::{tensor_read, Tensor};

fn srnn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str], dir: &Path) -> i32 {
    srnn(args, dir).status.code().expect("exit code")
}

fn gen(dir: &Path, prefix: &str, seed: u64, scale: f64) {
    let seed = seed.to_string();
    let scale = scale.to_string();
    let args = [
        "gen",
        "--seed",
        &seed,
        "--n",
        "8",
        "--m",
        "8",
        "--d",
        "2",
        "--e",
        "2",
        "--scale",
        &scale,
        "--out-prefix",
        prefix,
        "--with-gates",
    ];
    assert_eq!(code(&args, dir), 0);
}

fn read(dir: &Path, name: &str) -> Tensor {
    tensor_read(dir.join(name)).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn gen_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a", 1, 1.0);
    gen(dir.path(), "b", 1, 1.0);
    gen(dir.path(), "c", 2, 1.0);
    let bytes = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    for suffix in ["q", "k", "v"] {
        assert_eq!(
            bytes(&format!("a.{suffix}.tnsr")),
            bytes(&format!("b.{suffix}.tnsr"))
        );
    }
    assert_ne!(bytes("a.q.tnsr"), bytes("c.q.tnsr"));
    assert_eq!(read(dir.path(), "a.q.tnsr").shape(), &[8, 2]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(
            &[
                "gen",
                "--seed",
                "1",
                "--n",
                "0",
                "--d",
                "2",
                "--e",
                "2",
                "--out-prefix",
                "t"
            ],
            d
        ),
        2
    );
    assert_eq!(
        code(
            &[
                "gen",
                "--seed",
                "1",
                "--n",
                "4",
                "--d",
                "2",
                "--e",
                "2",
                "--out-prefix",
                "t",
                "--bogus"
            ],
            d
        ),
        2
    );
    assert_eq!(code(&["frobnicate"], d), 2);
    gen(d, "t", 1, 1.0);
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "linear",
                "--order",
                "3",
                "--in-prefix",
                "t",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        2
    );
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "gated",
                "--in-prefix",
                "t",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        2
    );
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "softmax",
                "--order",
                "2",
                "--in-prefix",
                "t",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        2
    );
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "recurrent",
                "--in-prefix",
                "t",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        2
    );
    assert_eq!(code(&["approx", "--orders", "5..1"], d), 2);
    assert_eq!(code(&["bench", "--grid", "N=8", "--repeats", "1"], d), 2);
}

#[test]
fn io_and_resource_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "softmax",
                "--in-prefix",
                "missing",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        3
    );
    assert_eq!(
        code(
            &[
                "gen",
                "--seed",
                "1",
                "--n",
                "4",
                "--d",
                "2",
                "--e",
                "2",
                "--out-prefix",
                "no/such/dir/t"
            ],
            d
        ),
        3
    );
    assert_eq!(
        code(
            &["approx", "--orders", "0..1", "--csv", "no/such/dir/a.csv"],
            d
        ),
        3
    );
    assert_eq!(
        code(
            &[
                "bench",
                "--grid",
                "N=8;d=8;order=12",
                "--kinds",
                "recurrent"
            ],
            d
        ),
        3
    );
    std::fs::write(d.join("bad.q.tnsr"), b"TNSR").unwrap();
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "softmax",
                "--in-prefix",
                "bad",
                "--out",
                "o.tnsr"
            ],
            d
        ),
        3
    );
}

#[test]
fn order_30_taylor_matches_softmax_on_small_logits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "t", 3, 0.5);
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "softmax",
                "--in-prefix",
                "t",
                "--out",
                "soft.tnsr"
            ],
            d
        ),
        0
    );
    let args = [
        "run",
        "--impl",
        "taylor-direct",
        "--order",
        "30",
        "--clamp",
        "1",
        "--denominator",
        "exact",
        "--in-prefix",
        "t",
        "--out",
        "taylor.tnsr",
    ];
    assert_eq!(code(&args, d), 0);
    assert!(max_diff(&read(d, "soft.tnsr"), &read(d, "taylor.tnsr")) <= 1e-6);
}

#[test]
fn first_order_recurrent_matches_linear() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "t", 4, 1.0);
    let rec = [
        "run",
        "--impl",
        "recurrent",
        "--order",
        "1",
        "--denominator",
        "none",
        "--in-prefix",
        "t",
        "--out",
        "rec.tnsr",
    ];
    assert_eq!(code(&rec, d), 0);
    assert_eq!(
        code(
            &[
                "run",
                "--impl",
                "linear",
                "--in-prefix",
                "t",
                "--out",
                "lin.tnsr"
            ],
            d
        ),
        0
    );
    let (rec, lin, v) = (
        read(d, "rec.tnsr"),
        read(d, "lin.tnsr"),
        read(d, "t.v.tnsr"),
    );
    // The order-1 series keeps its constant term, Σ_{s≤t} V_s; the rest is
    // exactly linear attention.
    let mut prefix = vec![0.0; v.cols()];
    for t in 0..v.rows() {
        for (p, &x) in prefix.iter_mut().zip(v.row(t)) {
            *p += x;
        }
        for ((&r, &l), &p) in rec.row(t).iter().zip(lin.row(t)).zip(&prefix) {
            assert!((r - p - l).abs() <= 1e-12, "row {t}: {r} - {p} vs {l}");
        }
    }
}

#[test]
fn every_impl_runs_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen(d, "t", 5, 0.5);
    let runs: Vec<Vec<&str>> = vec![
        vec!["--impl", "softmax", "--mode", "bidir"],
        vec![
            "--impl",
            "taylor-direct",
            "--order",
            "4",
            "--denominator",
            "l2-norm",
            "--qmap",
            "cosine",
            "--kmap",
            "cosine",
        ],
        vec![
            "--impl",
            "recurrent",
            "--order",
            "3",
            "--denominator",
            "gate-seq",
            "--gates",
            "t.gates.json",
        ],
        vec![
            "--impl",
            "linear",
            "--qmap",
            "elu-plus-one",
            "--kmap",
            "elu-plus-one",
        ],
        vec!["--impl", "quadratic"],
        vec!["--impl", "gated", "--gates", "t.gates.json"],
    ];
    for (i, flags) in runs.iter().enumerate() {
        let out = format!("o{i}.tnsr");
        let mut args = vec!["run", "--in-prefix", "t", "--out", &out];
        args.extend(flags);
        let result = srnn(&args, d);
        assert_eq!(
            result.status.code(),
            Some(0),
            "{flags:?}: {}",
            String::from_utf8_lossy(&result.stderr)
        );
        let first = std::fs::read(d.join(&out)).unwrap();
        let sidecar_path = PathBuf::from(format!("{out}.json"));
        let sidecar = std::fs::read(d.join(&sidecar_path)).unwrap();
        std::fs::remove_file(d.join(&out)).unwrap();
        assert_eq!(
            code(&["run", "--replay", sidecar_path.to_str().unwrap()], d),
            0
        );
        assert_eq!(std::fs::read(d.join(&out)).unwrap(), first, "{flags:?}");
        assert_eq!(std::fs::read(d.join(&sidecar_path)).unwrap(), sidecar);
    }
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("o1.tnsr.json")).unwrap()).unwrap();
    assert_eq!(sidecar["impl"], "taylor-direct");
    assert_eq!(sidecar["mode"], "causal");
}

#[test]
fn approx_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(
            &["approx", "--orders", "0..10", "--bound", "1", "--csv", "a.csv"],
            d
        ),
        0
    );
    let text = std::fs::read_to_string(d.join("a.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "order,max_rel_err,mean_rel_err");
    assert_eq!(lines.len(), 12);
    let last: f64 = lines[11].split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 1e-6);

    assert_eq!(
        code(&["approx", "--orders", "0..0", "--csv", "z.csv"], d),
        0
    );
    let text = std::fs::read_to_string(d.join("z.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn cosine_sweep_ignores_large_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |bound: &str, name: &str| {
        let args = [
            "approx", "--orders", "0..8", "--bound", bound, "--qmap", "cosine", "--kmap", "cosine",
            "--csv", name,
        ];
        assert_eq!(code(&args, d), 0);
        std::fs::read_to_string(d.join(name)).unwrap()
    };
    let values = |text: String| -> Vec<f64> {
        text.lines()
            .skip(1)
            .flat_map(|l| {
                l.split(',')
                    .skip(1)
                    .map(|x| x.parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let (a, b) = (values(run("5", "c5.csv")), values(run("50", "c50.csv")));
    assert_eq!(a.len(), 18);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * x.abs(), "{x} vs {y}");
    }
}

#[test]
fn bench_csv_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "bench",
        "--grid",
        "N=32,64;d=2;e=4;order=3",
        "--repeats",
        "3",
        "--csv",
        "b.csv",
    ];
    assert_eq!(code(&args, d), 0);
    let text = std::fs::read_to_string(d.join("b.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "impl,N,d,e,order,repeats,median_ns,state_elements,checksum"
    );
    assert_eq!(lines.len(), 1 + 3 * 2);
    let recurrent: Vec<&str> = lines
        .iter()
        .copied()
        .filter(|l| l.starts_with("recurrent,"))
        .collect();
    assert_eq!(recurrent.len(), 2);
    assert!(recurrent.iter().all(|l| l.split(',').nth(7) == Some("75")));
    assert!(lines[1..].iter().all(|l| l
        .split(',')
        .nth(8)
        .unwrap()
        .parse::<f64>()
        .unwrap()
        .is_finite()));
}

#[test]
fn verify_exit_code_follows_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for suite in ["kron", "equivalence", "denominator", "gates"] {
        let json = format!("{suite}.json");
        assert_eq!(
            code(&["verify", "--suite", suite, "--json", &json], d),
            0,
            "{suite}"
        );
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.join(&json)).unwrap()).unwrap();
        assert_eq!(report["suite"], suite);
        assert_eq!(report["all_pass"], true);
        assert!(report["checks"]
            .as_array()
            .unwrap()
            .iter()
            .all(|c| c["pass"] == true));
    }
    let grad = srnn(&["verify", "--suite", "grad", "--json", "grad.json"], d);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("grad.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let fd: Vec<_> = checks
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("fd/"))
        .collect();
    assert_eq!(fd.len(), 105);
    assert!(fd.iter().all(|c| c["tolerance"] == 1e-5));
    let expected = if report["all_pass"] == true { 0 } else { 1 };
    assert_eq!(grad.status.code(), Some(expected));
}

#[test]
fn verify_catches_a_broken_coefficient_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut table = vec![1.0f64];
    for m in 1..=30 {
        table.push(table[m - 1] / m as f64);
    }
    table[2] = 0.45;
    std::fs::write(d.join("table.json"), serde_json::to_string(&table).unwrap()).unwrap();
    let args = [
        "verify",
        "--suite",
        "equivalence",
        "--coefficient-table",
        "table.json",
        "--json",
        "r.json",
    ];
    assert_eq!(code(&args, d), 1);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], false);
}
