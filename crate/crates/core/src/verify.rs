//! Compiled-in verification grids.
//!
//! Each suite runs a fixed grid and reports one [`Check`] per measured
//! quantity. `Suite::All` concatenates every suite in a fixed order.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::config::{
    AttentionConfig, DenominatorMode, FeatureMapKind, GatePair, Mode, TaylorCoefficients, MAX_ORDER,
};
use crate::error::{Error, Result};
use crate::grad::{
    finite_diff_check, recurrent_attention_backward, recurrent_scan_backward,
    softmax_attention_backward, DEFAULT_STEP,
};
use crate::kron::{decomposed_inner_power, kron_power};
use crate::metrics::{
    gradient_relative_error, max_abs_error, max_row_relative_error, normwise_relative_error,
};
use crate::recurrent::{
    linear_attention_recurrent, quadratic_attention_recurrent, recurrent_attention, state_elements,
    state_init, state_update,
};
use crate::reference::{
    gated_attention_matrix, linear_attention_matrix, scale_to_logit_bound, softmax_attention,
    taylor_attention_direct, taylor_term_direct,
};
use crate::rng::{generate_gates, generate_inputs, SplitMix64};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Kron,
    Equivalence,
    Denominator,
    Gates,
    Grad,
    All,
}

impl Suite {
    pub const INDIVIDUAL: [Suite; 5] = [
        Suite::Kron,
        Suite::Equivalence,
        Suite::Denominator,
        Suite::Gates,
        Suite::Grad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kron => "kron",
            Suite::Equivalence => "equivalence",
            Suite::Denominator => "denominator",
            Suite::Gates => "gates",
            Suite::Grad => "grad",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::INDIVIDUAL
            .into_iter()
            .chain([Suite::All])
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite '{s}'")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub config: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        config: impl Into<String>,
        measured: f64,
        tolerance: f64,
    ) -> Self {
        Check {
            name: name.into(),
            config: config.into(),
            measured,
            tolerance,
            // NaN fails.
            pass: measured <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>) -> Self {
        let all_pass = checks.iter().all(|c| c.pass);
        SuiteReport {
            suite: suite.name().to_string(),
            checks,
            all_pass,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Knobs for the suites. The coefficient table replaces `1/m!` wherever a
/// suite builds a Taylor configuration, which is how a broken table is
/// shown to be caught.
#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub coefficient_table: Option<Vec<f64>>,
}

impl VerifyOptions {
    fn config(&self, order: usize) -> Result<AttentionConfig> {
        let config = AttentionConfig::new(order);
        match &self.coefficient_table {
            None => Ok(config),
            Some(table) => {
                if table.len() <= order {
                    return Err(Error::InvalidConfig(format!(
                        "coefficient table has {} entries, order {order} needs {}",
                        table.len(),
                        order + 1
                    )));
                }
                Ok(config.with_coefficients(TaylorCoefficients::custom(table[..=order].to_vec())?))
            }
        }
    }
}

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Kron => kron_checks()?,
        Suite::Equivalence => equivalence_checks(options)?,
        Suite::Denominator => denominator_checks(options)?,
        Suite::Gates => gate_checks(options)?,
        Suite::Grad => grad_checks()?,
        Suite::All => {
            let mut all = Vec::new();
            for part in Suite::INDIVIDUAL {
                for mut check in run_suite(part, options)?.checks {
                    check.name = format!("{part}/{}", check.name);
                    all.push(check);
                }
            }
            all
        }
    };
    Ok(SuiteReport::new(suite, checks))
}

fn max_bitwise_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.to_bits() == y.to_bits() {
                0.0
            } else {
                (x - y).abs().max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

fn gates_for(denominator: DenominatorMode, seed: u64, n: usize, m: usize) -> Option<GatePair> {
    denominator.is_gate().then(|| generate_gates(seed, n, m))
}

// ---------------------------------------------------------------- kron

pub const KRON_DRAWS: usize = 1000;

/// Worst `|decomposed − (a·b)^n| / (1 + |(a·b)^n|)` over random draws with
/// `d ≤ 6`, `n ≤ 4`.
pub fn decomposed_identity_error(seed: u64, draws: usize) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let d = 1 + (rng.next_u64() % 6) as usize;
        let n = (rng.next_u64() % 5) as usize;
        let a: Vec<f64> = (0..d).map(|_| rng.next_symmetric(2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.next_symmetric(2.0)).collect();
        let expected = dot(&a, &b).powi(n as i32);
        let got = decomposed_inner_power(&a, &b, n)?;
        worst = worst.max((got - expected).abs() / (1.0 + expected.abs()));
    }
    Ok(worst)
}

fn kron_checks() -> Result<Vec<Check>> {
    let mut checks = vec![Check::new(
        "decomposed-inner-product",
        format!("draws={KRON_DRAWS} d=1..6 n=0..4 seed=1"),
        decomposed_identity_error(1, KRON_DRAWS)?,
        1e-9,
    )];

    let mut rng = SplitMix64::new(2);
    let (mut sum_err, mut homog_err, mut len_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let d = 1 + (rng.next_u64() % 5) as usize;
        let n = (rng.next_u64() % 5) as usize;
        let v: Vec<f64> = (0..d).map(|_| rng.next_symmetric(1.5)).collect();
        let p = kron_power(&v, n)?;
        len_err = len_err.max((p.data().len() as f64 - (d as f64).powi(n as i32)).abs());
        let total: f64 = p.data().iter().sum();
        let expected = v.iter().sum::<f64>().powi(n as i32);
        sum_err = sum_err.max((total - expected).abs() / (1.0 + expected.abs()));
        let scaled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let ps = kron_power(&scaled, n)?;
        let factor = 2f64.powi(n as i32);
        let diff: Vec<f64> = p.data().iter().map(|x| x * factor).collect();
        homog_err = homog_err.max(max_bitwise_diff(&diff, ps.data()));
    }
    checks.push(Check::new(
        "power-length",
        "draws=200 d=1..5 n=0..4",
        len_err,
        0.0,
    ));
    checks.push(Check::new(
        "entry-sum",
        "sum(v^{⊗n}) = (Σv)^n, draws=200",
        sum_err,
        1e-12,
    ));
    checks.push(Check::new(
        "homogeneity",
        "(2v)^{⊗n} = 2^n v^{⊗n} bitwise, draws=200",
        homog_err,
        0.0,
    ));

    let mut state_err = 0.0f64;
    for d in 1..=4usize {
        for e in 1..=4usize {
            for order in 0..=4usize {
                let expected: usize = (0..=order).map(|m| d.pow(m as u32) * (e + 1)).sum();
                let state = state_init(d, e, order)?;
                state_err = state_err.max((state.element_count() as f64 - expected as f64).abs());
                state_err =
                    state_err.max((state_elements(d, e, order)? as f64 - expected as f64).abs());
            }
        }
    }
    checks.push(Check::new(
        "state-elements",
        "Σ d^m (e+1), d,e=1..4 order=0..4",
        state_err,
        0.0,
    ));
    Ok(checks)
}

// ---------------------------------------------------------- equivalence

pub const GRID_N: usize = 32;
pub const GRID_SCALE: f64 = 0.5;

/// Worst row-relative error between the recurrent and direct paths over the
/// `d × e × order` grid for one (mode, denominator, map) cell.
pub fn grid_cell_error(
    options: &VerifyOptions,
    mode: Mode,
    denominator: DenominatorMode,
    map: FeatureMapKind,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for d in 1..=3usize {
        for e in [1usize, 4] {
            for order in 0..=5usize {
                let seed = 1000 + (d * 100 + e * 10 + order) as u64;
                let (q, k, v) = generate_inputs(seed, GRID_N, GRID_N, d, e, GRID_SCALE)?;
                let gates = gates_for(denominator, seed, GRID_N, GRID_N);
                let config = options
                    .config(order)?
                    .with_mode(mode)
                    .with_denominator(denominator)
                    .with_maps(map, map);
                let direct = taylor_attention_direct(&q, &k, &v, &config, gates.as_ref());
                let recurrent = recurrent_attention(&q, &k, &v, &config, gates.as_ref());
                worst = worst.max(match (direct, recurrent) {
                    (Ok(a), Ok(b)) => max_row_relative_error(&b, &a),
                    // Cosine maps at d = 1 give x = ±1, and 1 + x vanishes at
                    // order 1; both paths must refuse the same row.
                    (
                        Err(Error::DegenerateDenominator { row: a, .. }),
                        Err(Error::DegenerateDenominator { row: b, .. }),
                    ) if a == b => 0.0,
                    (Err(err), _) | (_, Err(err))
                        if !matches!(err, Error::DegenerateDenominator { .. }) =>
                    {
                        return Err(err)
                    }
                    _ => f64::INFINITY,
                });
            }
        }
    }
    Ok(worst)
}

/// Worst row-relative error of the exact-denominator Taylor output against
/// softmax over `seeds`, with logits rescaled to `bound`.
pub fn convergence_error(
    options: &VerifyOptions,
    recurrent: bool,
    order: usize,
    bound: f64,
    d: usize,
    seeds: std::ops::Range<u64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in seeds {
        for mode in [Mode::Causal, Mode::Bidirectional] {
            let (q, k, v) = generate_inputs(seed, 24, 24, d, 4, 1.0)?;
            let (q, k) = scale_to_logit_bound(&q, &k, mode, bound);
            let config = options.config(order)?.with_mode(mode);
            let reference = softmax_attention(&q, &k, &v, mode)?;
            let taylor = if recurrent {
                recurrent_attention(&q, &k, &v, &config, None)?
            } else {
                taylor_attention_direct(&q, &k, &v, &config, None)?
            };
            worst = worst.max(max_row_relative_error(&taylor, &reference));
        }
    }
    Ok(worst)
}

fn last_row(t: &Tensor) -> &[f64] {
    t.row(t.rows() - 1)
}

/// Largest bitwise difference between the last causal row and the last
/// bidirectional row, across paths and denominators, for one seed.
pub fn horizon_difference(options: &VerifyOptions, seed: u64) -> Result<f64> {
    let n = 12;
    let (q, k, v) = generate_inputs(seed, n, n, 3, 2, GRID_SCALE)?;
    let mut worst = max_bitwise_diff(
        last_row(&softmax_attention(&q, &k, &v, Mode::Causal)?),
        last_row(&softmax_attention(&q, &k, &v, Mode::Bidirectional)?),
    );
    for denominator in DenominatorMode::ALL {
        let gates = gates_for(denominator, seed, n, n);
        let causal = options.config(4)?.with_denominator(denominator);
        let bidir = causal.clone().with_mode(Mode::Bidirectional);
        for recurrent in [false, true] {
            let run = |config: &AttentionConfig| {
                if recurrent {
                    recurrent_attention(&q, &k, &v, config, gates.as_ref())
                } else {
                    taylor_attention_direct(&q, &k, &v, config, gates.as_ref())
                }
            };
            worst = worst.max(max_bitwise_diff(
                last_row(&run(&causal)?),
                last_row(&run(&bidir)?),
            ));
        }
    }
    Ok(worst)
}

fn equivalence_checks(options: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for mode in [Mode::Causal, Mode::Bidirectional] {
        for denominator in DenominatorMode::ALL {
            for map in FeatureMapKind::ALL {
                checks.push(Check::new(
                    format!("recurrent-vs-direct/{mode}/{denominator}/{map}"),
                    format!("N={GRID_N} d=1..3 e=1,4 order=0..5 scale={GRID_SCALE}"),
                    grid_cell_error(options, mode, denominator, map)?,
                    1e-10,
                ));
            }
        }
    }

    let linear_coeffs = TaylorCoefficients::custom(vec![0.0, 1.0])?;
    for qmap in FeatureMapKind::ALL {
        for kmap in FeatureMapKind::ALL {
            let (mut scan_err, mut series_err) = (0.0f64, 0.0f64);
            for seed in 0..10u64 {
                let (q, k, v) = generate_inputs(seed, 16, 16, 3, 2, 1.0)?;
                let reference = linear_attention_matrix(&q, &k, &v, qmap, kmap, Mode::Causal)?;
                let scan = linear_attention_recurrent(&q, &k, &v, qmap, kmap)?;
                let config = AttentionConfig::new(1)
                    .with_denominator(DenominatorMode::None)
                    .with_maps(qmap, kmap)
                    .with_coefficients(linear_coeffs.clone());
                let series = recurrent_attention(&q, &k, &v, &config, None)?;
                scan_err = scan_err.max(max_row_relative_error(&scan, &reference));
                series_err = series_err.max(max_row_relative_error(&series, &reference));
            }
            let cfg = format!("N=16 d=3 e=2 seeds=0..9 maps={qmap}/{kmap}");
            checks.push(Check::new(
                format!("first-order/linear-scan/{qmap}/{kmap}"),
                cfg.clone(),
                scan_err,
                1e-12,
            ));
            checks.push(Check::new(
                format!("first-order/series/{qmap}/{kmap}"),
                cfg,
                series_err,
                1e-12,
            ));
        }
    }

    let (mut quad_err, mut quad_series_err) = (0.0f64, 0.0f64);
    let quad_coeffs = TaylorCoefficients::custom(vec![0.0, 0.0, 1.0])?;
    for seed in 0..10u64 {
        let (q, k, v) = generate_inputs(seed, 16, 16, 3, 2, 1.0)?;
        let reference = taylor_term_direct(&q, &k, &v, 2, Mode::Causal)?;
        quad_err = quad_err.max(max_row_relative_error(
            &quadratic_attention_recurrent(&q, &k, &v)?,
            &reference,
        ));
        let config = AttentionConfig::new(2)
            .with_denominator(DenominatorMode::None)
            .with_coefficients(quad_coeffs.clone());
        let series = recurrent_attention(&q, &k, &v, &config, None)?;
        quad_series_err = quad_series_err.max(max_row_relative_error(&series, &reference));
    }
    checks.push(Check::new(
        "quadratic/scan",
        "N=16 d=3 e=2 seeds=0..9",
        quad_err,
        1e-12,
    ));
    checks.push(Check::new(
        "quadratic/series",
        "N=16 d=3 e=2 seeds=0..9",
        quad_series_err,
        1e-12,
    ));

    checks.push(Check::new(
        "softmax-convergence/direct/order=10/bound=1",
        "N=24 d=4 e=4 seeds=0..4 exact, causal+bidir",
        convergence_error(options, false, 10, 1.0, 4, 0..5)?,
        1e-6,
    ));
    checks.push(Check::new(
        "softmax-convergence/direct/order=25/bound=5",
        "N=24 d=4 e=4 seeds=0..4 exact, causal+bidir",
        convergence_error(options, false, 25, 5.0, 4, 0..5)?,
        1e-3,
    ));
    checks.push(Check::new(
        "softmax-convergence/recurrent/order=12/bound=1",
        "N=24 d=2 e=4 seeds=0..4 exact, causal+bidir",
        convergence_error(options, true, 12, 1.0, 2, 0..5)?,
        1e-8,
    ));
    checks.push(Check::new(
        "softmax-convergence/direct/order=30/bound=1",
        "N=24 d=4 e=4 seeds=0..4 exact, causal+bidir",
        convergence_error(options, false, 30, 1.0, 4, 0..5)?,
        1e-6,
    ));

    let mut horizon = 0.0f64;
    for seed in 0..10u64 {
        horizon = horizon.max(horizon_difference(options, seed)?);
    }
    checks.push(Check::new(
        "horizon/last-row-bitwise",
        "N=M=12 d=3 e=2 order=4 seeds=0..9, softmax + direct + recurrent, every denominator",
        horizon,
        0.0,
    ));

    checks.push(streaming_check(options)?);
    checks.push(scale_covariance_check()?);
    Ok(checks)
}

/// Driving the state one update at a time must reproduce the whole-sequence
/// scan bit for bit.
fn streaming_check(options: &VerifyOptions) -> Result<Check> {
    let mut worst = 0.0f64;
    for denominator in DenominatorMode::ALL {
        let (q, k, v) = generate_inputs(77, 10, 10, 2, 3, GRID_SCALE)?;
        let gates = gates_for(denominator, 77, 10, 10);
        let config = options.config(3)?.with_denominator(denominator);
        let whole = recurrent_attention(&q, &k, &v, &config, gates.as_ref())?;
        let mut state = state_init(2, 3, 3)?;
        for t in 0..10 {
            state_update(
                &mut state,
                k.row(t),
                v.row(t),
                gates.as_ref().map(|g| g.g_out[t]),
            )?;
            let row = crate::recurrent::readout(
                &state,
                q.row(t),
                &config,
                gates.as_ref().map(|g| g.g_in[t]),
            )?;
            worst = worst.max(max_bitwise_diff(&row, whole.row(t)));
        }
    }
    Ok(Check::new(
        "streaming-readout-bitwise",
        "N=10 d=2 e=3 order=3, every denominator",
        worst,
        0.0,
    ))
}

/// `K → 2K` multiplies the order-m hidden block by `2^m` exactly.
fn scale_covariance_check() -> Result<Check> {
    let (_, k, v) = generate_inputs(5, 6, 6, 3, 2, 1.0)?;
    let k2 = k.scale(2.0);
    let (mut base, mut scaled) = (state_init(3, 2, 4)?, state_init(3, 2, 4)?);
    for s in 0..6 {
        state_update(&mut base, k.row(s), v.row(s), None)?;
        state_update(&mut scaled, k2.row(s), v.row(s), None)?;
    }
    let mut worst = 0.0f64;
    for m in 0..=4 {
        let factor = 2f64.powi(m as i32);
        let expected: Vec<f64> = base.hidden(m).data().iter().map(|x| x * factor).collect();
        worst = worst.max(max_bitwise_diff(&expected, scaled.hidden(m).data()));
    }
    Ok(Check::new(
        "scale-covariance-bitwise",
        "alpha=2 N=6 d=3 e=2 order=4",
        worst,
        0.0,
    ))
}

// ---------------------------------------------------------- denominator

fn row_norm_error(out: &Tensor, f: impl Fn(&[f64]) -> f64) -> f64 {
    out.iter_rows()
        .map(|r| (f(r) - 1.0).abs())
        .fold(0.0, f64::max)
}

fn l2(r: &[f64]) -> f64 {
    dot(r, r).sqrt()
}

fn rms(r: &[f64]) -> f64 {
    (dot(r, r) / r.len() as f64).sqrt()
}

fn denominator_checks(options: &VerifyOptions) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    // Recurrent state for d = 1 is tiny at every order; d = 3 is capped by
    // the state guard well before MAX_ORDER.
    let mut ones_err = 0.0f64;
    for mode in [Mode::Causal, Mode::Bidirectional] {
        for order in 0..=MAX_ORDER {
            for (d, recurrent) in [(3, false), (1, true), (3, order <= 8)] {
                let (q, k, _) = generate_inputs(order as u64, 16, 16, d, 3, GRID_SCALE)?;
                let ones = Tensor::filled(16, 3, 1.0);
                let config = options.config(order)?.with_mode(mode);
                let out = if recurrent {
                    recurrent_attention(&q, &k, &ones, &config, None)?
                } else {
                    taylor_attention_direct(&q, &k, &ones, &config, None)?
                };
                ones_err = ones_err.max(max_abs_error(&out, &ones));
            }
        }
    }
    checks.push(Check::new(
        "exact/ones-in-ones-out",
        format!("N=16 e=3 order=0..{MAX_ORDER}, direct d=3, recurrent d=1 (all orders) and d=3 (order<=8)"),
        ones_err,
        1e-10,
    ));

    for (denominator, f, name) in [
        (
            DenominatorMode::L2Norm,
            l2 as fn(&[f64]) -> f64,
            "l2-norm/unit-rows",
        ),
        (
            DenominatorMode::RmsNorm,
            rms as fn(&[f64]) -> f64,
            "rms-norm/unit-rows",
        ),
    ] {
        let mut worst = 0.0f64;
        for mode in [Mode::Causal, Mode::Bidirectional] {
            for map in FeatureMapKind::ALL {
                for order in 0..=5 {
                    for seed in 0..3u64 {
                        let (q, k, v) = generate_inputs(seed, 16, 16, 3, 4, 1.0)?;
                        let config = options
                            .config(order)?
                            .with_mode(mode)
                            .with_denominator(denominator)
                            .with_maps(map, map);
                        worst = worst.max(row_norm_error(
                            &taylor_attention_direct(&q, &k, &v, &config, None)?,
                            f,
                        ));
                        worst = worst.max(row_norm_error(
                            &recurrent_attention(&q, &k, &v, &config, None)?,
                            f,
                        ));
                    }
                }
            }
        }
        checks.push(Check::new(
            name,
            "N=16 d=3 e=4 order=0..5 seeds=0..2, every map and mode, both paths",
            worst,
            1e-12,
        ));
    }

    let mut layer_err = 0.0f64;
    for order in 0..=5 {
        let (q, k, v) = generate_inputs(order as u64, 16, 16, 3, 4, 1.0)?;
        let config = options
            .config(order)?
            .with_denominator(DenominatorMode::LayerNorm);
        for out in [
            taylor_attention_direct(&q, &k, &v, &config, None)?,
            recurrent_attention(&q, &k, &v, &config, None)?,
        ] {
            for r in out.iter_rows() {
                let mean = r.iter().sum::<f64>() / r.len() as f64;
                let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / r.len() as f64;
                layer_err = layer_err.max(mean.abs()).max((var - 1.0).abs());
            }
        }
    }
    checks.push(Check::new(
        "layer-norm/zero-mean-unit-variance",
        "N=16 d=3 e=4 order=0..5",
        layer_err,
        1e-12,
    ));

    let mut mean_err = 0.0f64;
    for mode in [Mode::Causal, Mode::Bidirectional] {
        let (_, k, v) = generate_inputs(3, 9, 9, 2, 3, 1.0)?;
        let q = Tensor::zeros(9, 2);
        let config = AttentionConfig::new(0)
            .with_mode(mode)
            .with_denominator(DenominatorMode::SeqNorm);
        let expected = running_mean(&v, mode);
        for out in [
            taylor_attention_direct(&q, &k, &v, &config, None)?,
            recurrent_attention(&q, &k, &v, &config, None)?,
        ] {
            mean_err = mean_err.max(max_bitwise_diff(out.data(), expected.data()));
        }
    }
    checks.push(Check::new(
        "seq-norm/order-0-mean-bitwise",
        "Q=0 N=9 e=3, both modes and paths",
        mean_err,
        0.0,
    ));

    let mut gate_err = 0.0f64;
    for (gated, plain) in [
        (
            DenominatorMode::Gate {
                seq_normalized: false,
            },
            DenominatorMode::None,
        ),
        (
            DenominatorMode::Gate {
                seq_normalized: true,
            },
            DenominatorMode::SeqNorm,
        ),
    ] {
        let (q, k, v) = generate_inputs(4, 10, 10, 3, 2, GRID_SCALE)?;
        let ones = GatePair::ones(10, 10);
        let base = options.config(3)?;
        let a = taylor_attention_direct(
            &q,
            &k,
            &v,
            &base.clone().with_denominator(gated),
            Some(&ones),
        )?;
        let b = taylor_attention_direct(&q, &k, &v, &base.with_denominator(plain), None)?;
        gate_err = gate_err.max(max_bitwise_diff(a.data(), b.data()));
    }
    checks.push(Check::new(
        "gate/unit-gates-reduce-bitwise",
        "N=10 d=3 e=2 order=3",
        gate_err,
        0.0,
    ));
    Ok(checks)
}

/// Row `t` holds the mean of the first `t+1` value rows (causal) or of all
/// rows (bidirectional), summed in ascending order.
fn running_mean(v: &Tensor, mode: Mode) -> Tensor {
    let (m, e) = (v.rows(), v.cols());
    let mut out = Tensor::zeros(m, e);
    for t in 0..m {
        let len = if mode == Mode::Causal { t + 1 } else { m };
        let mut acc = vec![0.0; e];
        for s in 0..len {
            for (a, &x) in acc.iter_mut().zip(v.row(s)) {
                *a += x;
            }
        }
        for (o, a) in out.row_mut(t).iter_mut().zip(acc) {
            *o = a / len as f64;
        }
    }
    out
}

// ---------------------------------------------------------------- gates

pub const GATE_DRAWS: u64 = 100;

fn gate_draw(draw: u64) -> Result<(Tensor, Tensor, Tensor, GatePair, Mode)> {
    let mut rng = SplitMix64::new(9000 + draw);
    let n = 1 + (rng.next_u64() % 8) as usize;
    let d = 1 + (rng.next_u64() % 4) as usize;
    let e = 1 + (rng.next_u64() % 4) as usize;
    let mode = if draw % 2 == 0 {
        Mode::Causal
    } else {
        Mode::Bidirectional
    };
    let (q, k, v) = generate_inputs(rng.next_u64(), n, n, d, e, 1.0)?;
    let gates = match draw {
        0 => GatePair::new(vec![0.0; n], vec![0.0; n])?,
        1 => GatePair::ones(n, n),
        2 => GatePair::new(vec![0.0; n], vec![1.0; n])?,
        3 => GatePair::new(vec![1.0; n], vec![0.0; n])?,
        _ => generate_gates(rng.next_u64(), n, n),
    };
    Ok((q, k, v, gates, mode))
}

fn gate_checks(options: &VerifyOptions) -> Result<Vec<Check>> {
    let (mut fused_err, mut path_err) = (0.0f64, 0.0f64);
    for draw in 0..GATE_DRAWS {
        let (q, k, v, gates, mode) = gate_draw(draw)?;
        let (factored, fused) = gated_attention_matrix(&q, &k, &v, &gates, mode)?;
        fused_err = fused_err.max(max_row_relative_error(&factored, &fused));
        let config = options
            .config(4)?
            .with_mode(mode)
            .with_denominator(DenominatorMode::Gate {
                seq_normalized: draw % 3 == 0,
            });
        let direct = taylor_attention_direct(&q, &k, &v, &config, Some(&gates))?;
        let recurrent = recurrent_attention(&q, &k, &v, &config, Some(&gates))?;
        path_err = path_err.max(max_row_relative_error(&recurrent, &direct));
    }
    Ok(vec![
        Check::new(
            "fused-vs-factored",
            format!("draws={GATE_DRAWS} N=1..8 d,e=1..4, zero/one/mixed/random gates, both modes"),
            fused_err,
            1e-12,
        ),
        Check::new(
            "gated-recurrent-vs-direct",
            format!("draws={GATE_DRAWS} order=4, gate and gate-seq"),
            path_err,
            1e-10,
        ),
    ])
}

// ----------------------------------------------------------------- grad

pub const GRAD_DENOMINATORS: [DenominatorMode; 4] = [
    DenominatorMode::None,
    DenominatorMode::SeqNorm,
    DenominatorMode::Exact,
    DenominatorMode::L2Norm,
];
pub const GRAD_TOLERANCE: f64 = 1e-5;

fn grad_instance(seed: u64) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (q, k, v) = generate_inputs(seed, 8, 8, 3, 2, 1.0)?;
    let mut rng = SplitMix64::new(seed + 1000);
    let d_out = rng.fill_symmetric(8, 2, 1.0);
    Ok((q, k, v, d_out))
}

fn fd_check_row(name: String, report: &crate::grad::GradReport) -> Check {
    let per: Vec<String> = report
        .per_input
        .iter()
        .map(|p| {
            format!(
                "{}:rel={:.3e},abs={:.3e},worst[{}]=(a={:.3e},fd={:.3e})",
                p.input,
                p.max_rel_err,
                p.max_abs_err,
                p.worst_index,
                p.worst_analytic,
                p.worst_numeric
            )
        })
        .collect();
    Check::new(
        name,
        format!(
            "{} h={:e} max_abs_err={:.3e} {}",
            report.config,
            report.h,
            report.max_abs_err,
            per.join(" ")
        ),
        report.max_rel_err,
        report.tolerance,
    )
}

/// Finite-difference reports for softmax and every supported truncated
/// configuration (causal, identity maps, orders 0..4, seeds 1..5).
pub fn fd_reports() -> Result<Vec<crate::grad::GradReport>> {
    let mut reports = Vec::new();
    for seed in 1..=5u64 {
        let (q, k, v, d_out) = grad_instance(seed)?;
        let analytic = softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal)?;
        reports.push(finite_diff_check(
            "softmax",
            &format!("N=8 d=3 e=2 causal seed={seed}"),
            |q, k, v| softmax_attention(q, k, v, Mode::Causal),
            &q,
            &k,
            &v,
            &d_out,
            &analytic,
            DEFAULT_STEP,
            GRAD_TOLERANCE,
        )?);
    }
    for denominator in GRAD_DENOMINATORS {
        for order in 0..=4 {
            for seed in 1..=5u64 {
                let (q, k, v, d_out) = grad_instance(seed)?;
                let config = AttentionConfig::new(order).with_denominator(denominator);
                let analytic = recurrent_attention_backward(&q, &k, &v, &d_out, &config)?;
                reports.push(finite_diff_check(
                    "recurrent",
                    &format!(
                        "N=8 d=3 e=2 causal denominator={denominator} order={order} seed={seed}"
                    ),
                    |q, k, v| recurrent_attention(q, k, v, &config, None),
                    &q,
                    &k,
                    &v,
                    &d_out,
                    &analytic,
                    DEFAULT_STEP,
                    GRAD_TOLERANCE,
                )?);
            }
        }
    }
    Ok(reports)
}

fn grad_checks() -> Result<Vec<Check>> {
    let mut checks: Vec<Check> = fd_reports()?
        .iter()
        .map(|r| fd_check_row(format!("fd/{}/{}", r.path, r.config.replace(' ', "/")), r))
        .collect();

    let mut consistency = 0.0f64;
    for mode in [Mode::Causal, Mode::Bidirectional] {
        for denominator in GRAD_DENOMINATORS {
            for map in FeatureMapKind::ALL {
                for order in 0..=4 {
                    let (q, k, v, d_out) = grad_instance(40 + order as u64)?;
                    let config = AttentionConfig::new(order)
                        .with_mode(mode)
                        .with_denominator(denominator)
                        .with_maps(map, map);
                    let pairwise = recurrent_attention_backward(&q, &k, &v, &d_out, &config)?;
                    let scan = recurrent_scan_backward(&q, &k, &v, &d_out, &config)?;
                    for ((_, a), (_, b)) in scan.parts().into_iter().zip(pairwise.parts()) {
                        consistency = consistency.max(normwise_relative_error(a, b));
                    }
                }
            }
        }
    }
    checks.push(Check::new(
        "scan-vs-pairwise",
        "N=8 d=3 e=2 order=0..4, every supported denominator, map and mode (normwise)",
        consistency,
        1e-10,
    ));

    let mut softmax_limit = 0.0f64;
    for seed in 1..=5u64 {
        let (q, k, v, d_out) = grad_instance(seed)?;
        // Strictly inside the clamp so no pair saturates after rounding.
        let (q, k) = scale_to_logit_bound(&q, &k, Mode::Causal, 0.99);
        let config = AttentionConfig::new(30).with_clamp(Some(1.0));
        let taylor = recurrent_attention_backward(&q, &k, &v, &d_out, &config)?;
        let exact = softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal)?;
        for ((_, a), (_, b)) in taylor.parts().into_iter().zip(exact.parts()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                softmax_limit = softmax_limit.max(gradient_relative_error(x, y));
            }
        }
    }
    checks.push(Check::new(
        "order-30-vs-softmax",
        "N=8 d=3 e=2 exact clamp=1, logits within 0.99, seeds=1..5",
        softmax_limit,
        1e-5,
    ));

    let mut linearity = 0.0f64;
    for seed in 1..=3u64 {
        let (q, k, v, d_out) = grad_instance(seed)?;
        for alpha in [2.0, 0.5, -4.0] {
            let scaled = d_out.scale(alpha);
            let pairs = [
                (
                    softmax_attention_backward(&q, &k, &v, &scaled, Mode::Causal)?,
                    softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal)?.scale(alpha),
                ),
                (
                    recurrent_attention_backward(&q, &k, &v, &scaled, &AttentionConfig::new(3))?,
                    recurrent_attention_backward(&q, &k, &v, &d_out, &AttentionConfig::new(3))?
                        .scale(alpha),
                ),
            ];
            for (a, b) in pairs {
                for ((_, x), (_, y)) in a.parts().into_iter().zip(b.parts()) {
                    linearity = linearity.max(max_abs_error(x, y));
                }
            }
        }
    }
    checks.push(Check::new(
        "cotangent-linearity-exact",
        "alpha in {2, 0.5, -4}, softmax and order-3 exact",
        linearity,
        0.0,
    ));
    Ok(checks)
}
