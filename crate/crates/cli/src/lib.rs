//! `srnn` command line: `gen`, `run`, `verify`, `approx`, `bench`.
//!
//! Exit codes: 0 success, 1 failed verification, 2 usage error,
//! 3 resource or IO error.

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use srnn_bench::{
    approx_error_sweep, bench_runtime, default_grid, parse_grid, write_approx_csv, write_bench_csv,
    BenchKind, SweepSpec, DEFAULT_REPEATS,
};
use srnn_core::recurrent::{
    linear_attention_recurrent, quadratic_attention_recurrent, recurrent_attention,
};
use srnn_core::reference::{
    gated_attention_matrix, linear_attention_matrix, softmax_attention, taylor_attention_direct,
};
use srnn_core::verify::{run_suite, Suite, VerifyOptions};
use srnn_core::{
    generate_gates, generate_inputs, tensor_read, tensor_write, AttentionConfig, DenominatorMode,
    FeatureMapKind, GatePair, Mode, Tensor,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "srnn",
    version,
    about = "Softmax attention as a truncated sum of recurrent networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write deterministic Q, K, V tensors as <prefix>.{q,k,v}.tnsr
    Gen(GenArgs),
    /// Run one attention variant on tensor files
    Run(RunArgs),
    /// Run compiled-in verification suites
    Verify(VerifyArgs),
    /// Error of truncated attention against softmax for each order
    Approx(ApproxArgs),
    /// Time the attention kinds over a grid of sizes
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    /// Key/value length; defaults to N
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub e: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub out_prefix: PathBuf,
    /// Also write <prefix>.gates.json with uniform gates from the same seed
    #[arg(long)]
    pub with_gates: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Impl {
    Softmax,
    TaylorDirect,
    Recurrent,
    Linear,
    Quadratic,
    Gated,
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Impl::Softmax => "softmax",
            Impl::TaylorDirect => "taylor-direct",
            Impl::Recurrent => "recurrent",
            Impl::Linear => "linear",
            Impl::Quadratic => "quadratic",
            Impl::Gated => "gated",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Re-run the invocation recorded in a sidecar file
    #[arg(long, conflicts_with_all = ["impl_", "order", "mode", "denominator", "qmap", "kmap", "clamp", "gates", "in_prefix", "out"])]
    pub replay: Option<PathBuf>,
    #[arg(
        long = "impl",
        id = "impl_",
        value_name = "IMPL",
        required_unless_present = "replay"
    )]
    pub impl_: Option<Impl>,
    /// Truncation order (taylor-direct, recurrent)
    #[arg(long)]
    pub order: Option<usize>,
    /// causal (default) or bidir
    #[arg(long)]
    pub mode: Option<Mode>,
    /// none, exact (default), seq-norm, gate, gate-seq, l2-norm, rms-norm, layer-norm, l2-seq
    #[arg(long)]
    pub denominator: Option<DenominatorMode>,
    /// identity (default), elu-plus-one, relu, cosine
    #[arg(long)]
    pub qmap: Option<FeatureMapKind>,
    #[arg(long)]
    pub kmap: Option<FeatureMapKind>,
    /// Bound on |logit|
    #[arg(long)]
    pub clamp: Option<f64>,
    /// JSON file with {"g_in": [...], "g_out": [...]}
    #[arg(long)]
    pub gates: Option<PathBuf>,
    /// Reads <prefix>.q.tnsr, <prefix>.k.tnsr, <prefix>.v.tnsr
    #[arg(long, required_unless_present = "replay")]
    pub in_prefix: Option<PathBuf>,
    /// Output tensor; the resolved invocation goes to <out>.json
    #[arg(long, required_unless_present = "replay")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// kron, equivalence, denominator, gates, grad or all
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    /// Write the JSON report here
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// JSON array replacing the 1/m! weights (sensitivity fixture)
    #[arg(long, hide = true)]
    pub coefficient_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    /// Inclusive range `a..b` or a comma list
    #[arg(long, default_value = "0..25")]
    pub orders: String,
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    #[arg(long, default_value = "identity")]
    pub qmap: FeatureMapKind,
    #[arg(long, default_value = "identity")]
    pub kmap: FeatureMapKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub e: usize,
    /// Output CSV; stdout when absent
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `N=1024,2048;d=2;e=4;order=3`
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    /// Comma list of softmax_direct, taylor_direct, recurrent
    #[arg(long, default_value = "softmax_direct,taylor_direct,recurrent")]
    pub kinds: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when absent
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Bad flags or flag combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to an exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(core) = cause.downcast_ref::<srnn_core::Error>() {
            use srnn_core::Error as E;
            return match core {
                E::Resource { .. }
                | E::Io(_)
                | E::Format(_)
                | E::Truncated { .. }
                | E::NonFinite { .. } => EXIT_RESOURCE,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_RESOURCE;
        }
    }
    EXIT_RESOURCE
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Gen(args) => cmd_gen(&args).map(|_| EXIT_OK),
        Command::Run(args) => cmd_run(&args).map(|_| EXIT_OK),
        Command::Verify(args) => cmd_verify(&args),
        Command::Approx(args) => cmd_approx(&args).map(|_| EXIT_OK),
        Command::Bench(args) => cmd_bench(&args).map(|_| EXIT_OK),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_tensor(path: &Path, t: &Tensor) -> anyhow::Result<()> {
    tensor_write(path, t).with_context(|| format!("writing {}", path.display()))
}

fn read_tensor(path: &Path) -> anyhow::Result<Tensor> {
    tensor_read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_gen(args: &GenArgs) -> anyhow::Result<()> {
    let m = args.m.unwrap_or(args.n);
    let (q, k, v) = generate_inputs(args.seed, args.n, m, args.d, args.e, args.scale)
        .map_err(|e| usage(e.to_string()))?;
    for (suffix, t) in [(".q.tnsr", &q), (".k.tnsr", &k), (".v.tnsr", &v)] {
        write_tensor(&with_suffix(&args.out_prefix, suffix), t)?;
    }
    if args.with_gates {
        let path = with_suffix(&args.out_prefix, ".gates.json");
        let gates = generate_gates(args.seed, args.n, m);
        std::fs::write(&path, serde_json::to_string_pretty(&gates)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Fully resolved `run` invocation, stored next to the output as
/// `<out>.json` and accepted back by `run --replay`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    #[serde(rename = "impl")]
    pub impl_: Impl,
    pub order: Option<usize>,
    pub mode: Mode,
    pub denominator: Option<DenominatorMode>,
    pub qmap: Option<FeatureMapKind>,
    pub kmap: Option<FeatureMapKind>,
    pub clamp: Option<f64>,
    pub gates: Option<PathBuf>,
    pub in_prefix: PathBuf,
    pub out: PathBuf,
}

fn reject(impl_: Impl, flag: &str, present: bool) -> anyhow::Result<()> {
    if present {
        return Err(usage(format!("--{flag} does not apply to --impl {impl_}")));
    }
    Ok(())
}

/// Applies defaults and rejects flags that the implementation ignores.
pub fn resolve_run(args: &RunArgs) -> anyhow::Result<RunSpec> {
    let impl_ = args.impl_.ok_or_else(|| usage("--impl is required"))?;
    let in_prefix = args
        .in_prefix
        .clone()
        .ok_or_else(|| usage("--in-prefix is required"))?;
    let out = args.out.clone().ok_or_else(|| usage("--out is required"))?;
    let mode = args.mode.unwrap_or(Mode::Causal);
    let mut spec = RunSpec {
        impl_,
        order: None,
        mode,
        denominator: None,
        qmap: None,
        kmap: None,
        clamp: None,
        gates: None,
        in_prefix,
        out,
    };
    let taylor_only = [
        ("denominator", args.denominator.is_some()),
        ("clamp", args.clamp.is_some()),
    ];
    match impl_ {
        Impl::TaylorDirect | Impl::Recurrent => {
            spec.order = Some(
                args.order
                    .ok_or_else(|| usage(format!("--impl {impl_} needs --order")))?,
            );
            spec.denominator = Some(args.denominator.unwrap_or(DenominatorMode::Exact));
            spec.qmap = Some(args.qmap.unwrap_or(FeatureMapKind::Identity));
            spec.kmap = Some(args.kmap.unwrap_or(FeatureMapKind::Identity));
            spec.clamp = args.clamp;
            spec.gates = args.gates.clone();
            if spec.denominator.is_some_and(DenominatorMode::is_gate) && spec.gates.is_none() {
                return Err(usage("gate denominators need --gates"));
            }
        }
        Impl::Softmax => {
            for (flag, present) in taylor_only {
                reject(impl_, flag, present)?;
            }
            reject(impl_, "order", args.order.is_some())?;
            reject(impl_, "qmap", args.qmap.is_some())?;
            reject(impl_, "kmap", args.kmap.is_some())?;
            reject(impl_, "gates", args.gates.is_some())?;
        }
        Impl::Linear => {
            for (flag, present) in taylor_only {
                reject(impl_, flag, present)?;
            }
            reject(impl_, "order", args.order.is_some_and(|o| o != 1))?;
            reject(impl_, "gates", args.gates.is_some())?;
            spec.order = Some(1);
            spec.qmap = Some(args.qmap.unwrap_or(FeatureMapKind::Identity));
            spec.kmap = Some(args.kmap.unwrap_or(FeatureMapKind::Identity));
        }
        Impl::Quadratic => {
            for (flag, present) in taylor_only {
                reject(impl_, flag, present)?;
            }
            reject(impl_, "order", args.order.is_some_and(|o| o != 2))?;
            reject(impl_, "qmap", args.qmap.is_some())?;
            reject(impl_, "kmap", args.kmap.is_some())?;
            reject(impl_, "gates", args.gates.is_some())?;
            if mode != Mode::Causal {
                return Err(usage("--impl quadratic is causal only"));
            }
            spec.order = Some(2);
        }
        Impl::Gated => {
            for (flag, present) in taylor_only {
                reject(impl_, flag, present)?;
            }
            reject(impl_, "order", args.order.is_some())?;
            reject(impl_, "qmap", args.qmap.is_some())?;
            reject(impl_, "kmap", args.kmap.is_some())?;
            spec.gates = Some(
                args.gates
                    .clone()
                    .ok_or_else(|| usage("--impl gated needs --gates"))?,
            );
        }
    }
    Ok(spec)
}

fn read_gates(path: &Path) -> anyhow::Result<GatePair> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let gates: GatePair =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    gates
        .validate()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(gates)
}

/// Computes the output tensor for a resolved invocation.
pub fn execute_run(spec: &RunSpec) -> anyhow::Result<Tensor> {
    let q = read_tensor(&with_suffix(&spec.in_prefix, ".q.tnsr"))?;
    let k = read_tensor(&with_suffix(&spec.in_prefix, ".k.tnsr"))?;
    let v = read_tensor(&with_suffix(&spec.in_prefix, ".v.tnsr"))?;
    let gates = spec.gates.as_deref().map(read_gates).transpose()?;
    let qmap = spec.qmap.unwrap_or(FeatureMapKind::Identity);
    let kmap = spec.kmap.unwrap_or(FeatureMapKind::Identity);
    let out = match spec.impl_ {
        Impl::Softmax => softmax_attention(&q, &k, &v, spec.mode)?,
        Impl::TaylorDirect | Impl::Recurrent => {
            let config = AttentionConfig::new(spec.order.unwrap_or(0))
                .with_mode(spec.mode)
                .with_denominator(spec.denominator.unwrap_or(DenominatorMode::Exact))
                .with_maps(qmap, kmap)
                .with_clamp(spec.clamp);
            if spec.impl_ == Impl::Recurrent {
                recurrent_attention(&q, &k, &v, &config, gates.as_ref())?
            } else {
                taylor_attention_direct(&q, &k, &v, &config, gates.as_ref())?
            }
        }
        Impl::Linear => match spec.mode {
            Mode::Causal => linear_attention_recurrent(&q, &k, &v, qmap, kmap)?,
            Mode::Bidirectional => linear_attention_matrix(&q, &k, &v, qmap, kmap, spec.mode)?,
        },
        Impl::Quadratic => quadratic_attention_recurrent(&q, &k, &v)?,
        Impl::Gated => {
            let gates = gates.ok_or_else(|| usage("--impl gated needs --gates"))?;
            gated_attention_matrix(&q, &k, &v, &gates, spec.mode)?.0
        }
    };
    Ok(out)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    with_suffix(out, ".json")
}

pub fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let spec = match &args.replay {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => resolve_run(args)?,
    };
    let out = execute_run(&spec)?;
    write_tensor(&spec.out, &out)?;
    let sidecar = sidecar_path(&spec.out);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&spec)? + "\n")
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<i32> {
    let mut options = VerifyOptions::default();
    if let Some(path) = &args.coefficient_table {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        options.coefficient_table = Some(
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        );
    }
    let report = run_suite(args.suite, &options)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for check in &report.checks {
        writeln!(
            out,
            "{} {}  measured={:.3e} tolerance={:.1e}",
            if check.pass { "pass" } else { "FAIL" },
            check.name,
            check.measured,
            check.tolerance
        )?;
    }
    let failed = report.failures().count();
    writeln!(
        out,
        "suite {}: {} checks, {} failed",
        report.suite,
        report.checks.len(),
        failed
    )?;
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY
    })
}

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_orders(spec: &str) -> anyhow::Result<Vec<usize>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("order '{s}' is not a non-negative integer")))
    };
    let orders = match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a > b {
                return Err(usage(format!("empty order range {spec}")));
            }
            (a..=b).collect()
        }
        None => spec
            .split(',')
            .map(parse)
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    if let Some(&max) = orders.iter().max() {
        if max > srnn_core::MAX_ORDER {
            return Err(usage(format!(
                "order {max} exceeds {}",
                srnn_core::MAX_ORDER
            )));
        }
    }
    Ok(orders)
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn cmd_approx(args: &ApproxArgs) -> anyhow::Result<()> {
    let orders = parse_orders(&args.orders)?;
    if !(args.bound > 0.0 && args.bound.is_finite()) {
        return Err(usage(format!(
            "--bound must be positive and finite, got {}",
            args.bound
        )));
    }
    if args.n == 0 || args.d == 0 || args.e == 0 {
        return Err(usage("--n, --d and --e must be positive"));
    }
    let spec = SweepSpec {
        logit_bound: args.bound,
        seed: args.seed,
        n: args.n,
        d: args.d,
        e: args.e,
        query_map: args.qmap,
        key_map: args.kmap,
    };
    let rows = approx_error_sweep(&orders, &spec)?;
    write_approx_csv(open_output(args.csv.as_deref())?, &rows)?;
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let grid = match &args.grid {
        Some(spec) => parse_grid(spec).map_err(|e| usage(e.to_string()))?,
        None => default_grid(),
    };
    let kinds = args
        .kinds
        .split(',')
        .map(|k| {
            k.trim()
                .parse::<BenchKind>()
                .map_err(|e| usage(e.to_string()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if args.repeats < srnn_bench::MIN_REPEATS {
        return Err(usage(format!(
            "--repeats must be at least {}",
            srnn_bench::MIN_REPEATS
        )));
    }
    let mut rows = Vec::new();
    for kind in kinds {
        rows.extend(bench_runtime(kind, &grid, args.repeats, args.seed)?);
    }
    write_bench_csv(open_output(args.csv.as_deref())?, &rows)?;
    Ok(())
}
