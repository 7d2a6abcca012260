//! Sequence-length scaling harness and the error-vs-order sweep.
//!
//! Cells run one after another on the calling thread. Each cell draws its
//! inputs from the cell seed with entries in `±1/sqrt(d)`, so every logit
//! lies in `[-1, 1]`, runs once untimed, then `repeats` timed runs whose
//! median is reported together with the output checksum.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use srnn_core::feature_map;
use srnn_core::metrics::row_relative_errors;
use srnn_core::recurrent::recurrent_attention;
use srnn_core::reference::{
    max_abs_logit, scale_to_logit_bound, softmax_attention, taylor_attention_direct,
};
use srnn_core::{
    generate_inputs, state_elements, AttentionConfig, Error, FeatureMapKind, Mode, Result, Tensor,
};

pub const MIN_REPEATS: usize = 3;
pub const DEFAULT_REPEATS: usize = 5;
/// Upper bound on `N²` for the quadratic kinds.
pub const MAX_DIRECT_PAIRS: u128 = 1 << 34;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchKind {
    SoftmaxDirect,
    TaylorDirect,
    Recurrent,
}

impl BenchKind {
    pub const ALL: [BenchKind; 3] = [
        BenchKind::SoftmaxDirect,
        BenchKind::TaylorDirect,
        BenchKind::Recurrent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchKind::SoftmaxDirect => "softmax_direct",
            BenchKind::TaylorDirect => "taylor_direct",
            BenchKind::Recurrent => "recurrent",
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bench kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridCell {
    pub n: usize,
    pub d: usize,
    pub e: usize,
    pub order: usize,
}

/// Default grid: `N=1024,2048,4096;d=2;e=4;order=3`.
pub fn default_grid() -> Vec<GridCell> {
    parse_grid("N=1024,2048,4096;d=2;e=4;order=3").expect("default grid parses")
}

/// Parses `key=v1,v2;key=...` with keys `N`, `d`, `e`, `order` into their
/// cartesian product, `N` varying slowest. Missing keys default to
/// `d=2`, `e=4`, `order=3`; `N` is required.
pub fn parse_grid(spec: &str) -> Result<Vec<GridCell>> {
    let (mut ns, mut ds, mut es, mut orders) = (None, vec![2], vec![4], vec![3]);
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("grid entry '{part}' is not key=values"))
        })?;
        let values = values
            .split(',')
            .map(|v| {
                v.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "grid value '{v}' for '{key}' is not an integer"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match key.trim() {
            "N" | "n" => ns = Some(values),
            "d" => ds = values,
            "e" => es = values,
            "order" => orders = values,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown grid key '{other}'"
                )))
            }
        }
    }
    let ns = ns.ok_or_else(|| Error::InvalidArgument("grid needs N=...".into()))?;
    let mut cells = Vec::new();
    for &n in &ns {
        for &d in &ds {
            for &e in &es {
                for &order in &orders {
                    if n == 0 || d == 0 || e == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "grid dimensions must be positive, got N={n} d={d} e={e}"
                        )));
                    }
                    cells.push(GridCell { n, d, e, order });
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "impl")]
    pub kind: &'static str,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub e: usize,
    pub order: usize,
    pub repeats: usize,
    pub median_ns: u128,
    pub state_elements: usize,
    pub checksum: f64,
}

fn kind_config(order: usize) -> AttentionConfig {
    AttentionConfig::new(order).with_mode(Mode::Causal)
}

/// Elements held across the sequence: the recurrent state for the
/// recurrent kind, the key and value rows for the direct kinds.
pub fn peak_state_elements(kind: BenchKind, cell: GridCell) -> Result<usize> {
    match kind {
        BenchKind::Recurrent => state_elements(cell.d, cell.e, cell.order),
        BenchKind::SoftmaxDirect | BenchKind::TaylorDirect => Ok(cell.n * (cell.d + cell.e)),
    }
}

fn check_guard(kind: BenchKind, cell: GridCell) -> Result<()> {
    if kind != BenchKind::Recurrent {
        let pairs = (cell.n as u128) * (cell.n as u128);
        if pairs > MAX_DIRECT_PAIRS {
            return Err(Error::Resource {
                what: format!("{kind} pairs at N={}", cell.n),
                requested: pairs,
                limit: MAX_DIRECT_PAIRS,
            });
        }
    }
    peak_state_elements(kind, cell).map(|_| ())
}

fn run_once(kind: BenchKind, q: &Tensor, k: &Tensor, v: &Tensor, order: usize) -> Result<Tensor> {
    match kind {
        BenchKind::SoftmaxDirect => softmax_attention(q, k, v, Mode::Causal),
        BenchKind::TaylorDirect => taylor_attention_direct(q, k, v, &kind_config(order), None),
        BenchKind::Recurrent => recurrent_attention(q, k, v, &kind_config(order), None),
    }
}

/// Inputs for one cell; every `|Q_t·K_s| ≤ 1`.
pub fn cell_inputs(cell: GridCell, seed: u64) -> Result<(Tensor, Tensor, Tensor)> {
    generate_inputs(
        seed,
        cell.n,
        cell.n,
        cell.d,
        cell.e,
        1.0 / (cell.d as f64).sqrt(),
    )
}

fn median(samples: &mut [u128]) -> u128 {
    samples.sort_unstable();
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2
    }
}

/// Times `kind` over every cell in grid order. All guards are checked
/// before any cell runs.
pub fn bench_runtime(
    kind: BenchKind,
    grid: &[GridCell],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repeats < MIN_REPEATS {
        return Err(Error::InvalidArgument(format!(
            "repeats must be at least {MIN_REPEATS}, got {repeats}"
        )));
    }
    for &cell in grid {
        check_guard(kind, cell)?;
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &cell in grid {
        let (q, k, v) = cell_inputs(cell, seed)?;
        let checksum = std::hint::black_box(run_once(kind, &q, &k, &v, cell.order)?).sum();
        let mut samples = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            let out = run_once(kind, &q, &k, &v, cell.order)?;
            samples.push(start.elapsed().as_nanos());
            std::hint::black_box(out);
        }
        if !checksum.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        rows.push(BenchRow {
            kind: kind.name(),
            n: cell.n,
            d: cell.d,
            e: cell.e,
            order: if kind == BenchKind::SoftmaxDirect {
                0
            } else {
                cell.order
            },
            repeats,
            median_ns: median(&mut samples),
            state_elements: peak_state_elements(kind, cell)?,
            checksum,
        });
    }
    Ok(rows)
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T], header: &[&str]) -> Result<()> {
    let mut writer = csv_writer(out);
    if rows.is_empty() {
        writer.write_record(header).map_err(csv_error)?;
    }
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub const BENCH_HEADER: [&str; 9] = [
    "impl",
    "N",
    "d",
    "e",
    "order",
    "repeats",
    "median_ns",
    "state_elements",
    "checksum",
];

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    write_rows(out, rows, &BENCH_HEADER)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxRow {
    pub order: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

pub const APPROX_HEADER: [&str; 3] = ["order", "max_rel_err", "mean_rel_err"];

pub fn write_approx_csv<W: Write>(out: W, rows: &[ApproxRow]) -> Result<()> {
    write_rows(out, rows, &APPROX_HEADER)
}

#[derive(Clone, Copy, Debug)]
pub struct SweepSpec {
    pub logit_bound: f64,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub e: usize,
    pub query_map: FeatureMapKind,
    pub key_map: FeatureMapKind,
}

impl SweepSpec {
    pub fn new(logit_bound: f64) -> Self {
        SweepSpec {
            logit_bound,
            seed: 0,
            n: 64,
            d: 4,
            e: 4,
            query_map: FeatureMapKind::Identity,
            key_map: FeatureMapKind::Identity,
        }
    }
}

/// Mapped queries and keys with every causal logit inside
/// `±spec.logit_bound`.
///
/// Raw inputs are rescaled so the identity logits reach the bound, then
/// mapped; if the mapped logits still exceed it they are rescaled again.
/// Bounded maps such as cosine therefore stay at `|x| ≤ 1` when the bound
/// is larger.
pub fn sweep_inputs(spec: &SweepSpec) -> Result<(Tensor, Tensor, Tensor)> {
    if !(spec.logit_bound > 0.0 && spec.logit_bound.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "logit bound must be positive and finite, got {}",
            spec.logit_bound
        )));
    }
    let (q, k, v) = generate_inputs(spec.seed, spec.n, spec.n, spec.d, spec.e, 1.0)?;
    let (q, k) = scale_to_logit_bound(&q, &k, Mode::Causal, spec.logit_bound);
    let qf = feature_map::apply(spec.query_map, &q);
    let kf = feature_map::apply(spec.key_map, &k);
    if max_abs_logit(&qf, &kf, Mode::Causal) > spec.logit_bound {
        let (qf, kf) = scale_to_logit_bound(&qf, &kf, Mode::Causal, spec.logit_bound);
        return Ok((qf, kf, v));
    }
    Ok((qf, kf, v))
}

/// Error of exact-denominator truncated attention against softmax, per
/// order. Both sides see the same mapped inputs.
pub fn approx_error_sweep(orders: &[usize], spec: &SweepSpec) -> Result<Vec<ApproxRow>> {
    let (q, k, v) = sweep_inputs(spec)?;
    let reference = softmax_attention(&q, &k, &v, Mode::Causal)?;
    orders
        .iter()
        .map(|&order| {
            let taylor = taylor_attention_direct(&q, &k, &v, &kind_config(order), None)?;
            let errors = row_relative_errors(&taylor, &reference);
            Ok(ApproxRow {
                order,
                max_rel_err: errors.iter().copied().fold(0.0, f64::max),
                mean_rel_err: errors.iter().sum::<f64>() / errors.len() as f64,
            })
        })
        .collect()
}

/// `max_rel_err[i+1] ≤ max_rel_err[i] + slack` for consecutive rows.
pub fn is_non_increasing(rows: &[ApproxRow], slack: f64) -> bool {
    rows.windows(2)
        .all(|w| w[1].max_rel_err <= w[0].max_rel_err + slack)
}

/// Time ratios `T(2N)/T(N)` between consecutive rows whose `N` doubles.
pub fn doubling_ratios(rows: &[BenchRow]) -> Vec<(usize, f64)> {
    rows.windows(2)
        .filter(|w| w[1].n == 2 * w[0].n && w[0].kind == w[1].kind)
        .map(|w| (w[1].n, w[1].median_ns as f64 / w[0].median_ns.max(1) as f64))
        .collect()
}
