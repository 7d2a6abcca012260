//! Quadratic-time attention. Every routine here materializes query–key
//! pairs directly and serves as the ground truth for the recurrent module.

use crate::config::{
    clamp_logit, AttentionConfig, DenominatorMode, FeatureMapKind, GatePair, Mode,
};
use crate::error::{Error, Result};
use crate::feature_map;
use crate::tensor::{check_qkv, dot, Tensor};

/// Rows with a norm below this are treated as zero in the norm modes.
pub const NORM_FLOOR: f64 = 1e-300;

/// Number of key positions visible to query row `t` (0-based).
pub(crate) fn visible(mode: Mode, t: usize, m: usize) -> usize {
    match mode {
        Mode::Causal => t + 1,
        Mode::Bidirectional => m,
    }
}

pub(crate) fn check_mode(mode: Mode, n: usize, m: usize) -> Result<()> {
    if mode == Mode::Causal && n != m {
        return Err(Error::Shape(format!(
            "causal attention needs as many queries as keys, got N={n}, M={m}"
        )));
    }
    Ok(())
}

/// Pre-normalization score matrix with masked entries set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    pub scores: Tensor,
}

impl AttentionMatrix {
    /// `e^{Q_t·K_s}` on visible entries.
    pub fn exponential(q: &Tensor, k: &Tensor, mode: Mode) -> Result<Self> {
        Self::from_kernel(q, k, mode, |x| x.exp())
    }

    /// `φ(Q)_t·ψ(K)_s` on visible entries, with the maps already applied.
    pub fn linear(q: &Tensor, k: &Tensor, mode: Mode) -> Result<Self> {
        Self::from_kernel(q, k, mode, |x| x)
    }

    fn from_kernel(
        q: &Tensor,
        k: &Tensor,
        mode: Mode,
        kernel: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let (n, m) = (q.rows(), k.rows());
        check_mode(mode, n, m)?;
        let mut scores = Tensor::zeros(n, m);
        for t in 0..n {
            for s in 0..visible(mode, t, m) {
                scores.set(t, s, kernel(dot(q.row(t), k.row(s))));
            }
        }
        Ok(AttentionMatrix { scores })
    }
}

/// Softmax attention with per-row max subtraction.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, mode: Mode) -> Result<Tensor> {
    let (n, m, _, e) = check_qkv(q, k, v)?;
    check_mode(mode, n, m)?;
    let mut out = Tensor::zeros(n, e);
    let mut logits = vec![0.0; m];
    for t in 0..n {
        let len = visible(mode, t, m);
        let qt = q.row(t);
        let mut max = f64::NEG_INFINITY;
        for s in 0..len {
            logits[s] = dot(qt, k.row(s));
            max = max.max(logits[s]);
        }
        let mut total = 0.0;
        let row = out.row_mut(t);
        for s in 0..len {
            let w = (logits[s] - max).exp();
            total += w;
            for (o, &x) in row.iter_mut().zip(v.row(s)) {
                *o += w * x;
            }
        }
        row.iter_mut().for_each(|o| *o /= total);
    }
    Ok(out)
}

/// Largest `|φ(Q)_t·ψ(K)_s|` over visible pairs. Inputs are already mapped.
pub fn max_abs_logit(q: &Tensor, k: &Tensor, mode: Mode) -> f64 {
    let m = k.rows();
    let mut max = 0.0f64;
    for t in 0..q.rows() {
        let len = match mode {
            Mode::Causal => (t + 1).min(m),
            Mode::Bidirectional => m,
        };
        for s in 0..len {
            max = max.max(dot(q.row(t), k.row(s)).abs());
        }
    }
    max
}

/// Rescales `q` and `k` by a common factor so the largest visible
/// `|Q_t·K_s|` equals `bound` exactly (up to rounding).
pub fn scale_to_logit_bound(q: &Tensor, k: &Tensor, mode: Mode, bound: f64) -> (Tensor, Tensor) {
    let max = max_abs_logit(q, k, mode);
    if max == 0.0 {
        return (q.clone(), k.clone());
    }
    let factor = (bound / max).sqrt();
    (q.scale(factor), k.scale(factor))
}

/// Truncated-Taylor attention evaluated pair by pair:
/// numerator `Σ_s p(x_ts) V_s` with `p(x) = Σ_{m≤n} w_m x^m`, then the
/// configured denominator treatment.
///
/// When `gates` is supplied, `g_out[s]` scales each pair weight and `g_in[t]`
/// scales the finished row. Gate denominators require gates.
pub fn taylor_attention_direct(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    config: &AttentionConfig,
    gates: Option<&GatePair>,
) -> Result<Tensor> {
    config.validate()?;
    let (n, m, _, e) = check_qkv(q, k, v)?;
    check_mode(config.mode, n, m)?;
    if let Some(g) = gates {
        g.check_lengths(n, m)?;
    } else if config.denominator.is_gate() {
        return Err(Error::InvalidConfig(
            "gate denominator requires a gate pair".into(),
        ));
    }
    let coeffs = config.coefficients();
    let qf = feature_map::apply(config.query_map, q);
    let kf = feature_map::apply(config.key_map, k);

    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        let len = visible(config.mode, t, m);
        let mut den = 0.0;
        let row = out.row_mut(t);
        for s in 0..len {
            let x = clamp_logit(dot(qf.row(t), kf.row(s)), config.clamp);
            let mut w = coeffs.eval(x);
            if let Some(g) = gates {
                w *= g.g_out[s];
            }
            den += w;
            for (o, &val) in row.iter_mut().zip(v.row(s)) {
                *o += w * val;
            }
        }
        finish_row(row, den, len, config.denominator, t)?;
        if let Some(g) = gates {
            row.iter_mut().for_each(|o| *o *= g.g_in[t]);
        }
    }
    Ok(out)
}

/// A single series term: `Σ_s (Q_t·K_s)^power V_s` on raw inputs.
pub fn taylor_term_direct(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    power: u32,
    mode: Mode,
) -> Result<Tensor> {
    let (n, m, _, e) = check_qkv(q, k, v)?;
    check_mode(mode, n, m)?;
    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        let row = out.row_mut(t);
        for s in 0..visible(mode, t, m) {
            let w = dot(q.row(t), k.row(s)).powi(power as i32);
            for (o, &val) in row.iter_mut().zip(v.row(s)) {
                *o += w * val;
            }
        }
    }
    Ok(out)
}

fn finish_row(
    row: &mut [f64],
    den: f64,
    count: usize,
    mode: DenominatorMode,
    t: usize,
) -> Result<()> {
    let count = count as f64;
    match mode {
        DenominatorMode::None => {}
        DenominatorMode::Exact => {
            if den.abs() < NORM_FLOOR {
                return Err(Error::DegenerateDenominator { row: t, value: den });
            }
            row.iter_mut().for_each(|x| *x /= den);
        }
        DenominatorMode::SeqNorm
        | DenominatorMode::Gate {
            seq_normalized: true,
        } => {
            row.iter_mut().for_each(|x| *x /= count);
        }
        DenominatorMode::Gate {
            seq_normalized: false,
        } => {}
        DenominatorMode::L2Norm | DenominatorMode::L2PlusSeq => {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < NORM_FLOOR {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            if mode == DenominatorMode::L2PlusSeq {
                row.iter_mut().for_each(|x| *x /= count);
            }
        }
        DenominatorMode::RmsNorm => {
            let rms = (row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64).sqrt();
            if rms < NORM_FLOOR {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= rms);
            }
        }
        DenominatorMode::LayerNorm => {
            let len = row.len() as f64;
            let mean = row.iter().sum::<f64>() / len;
            let sd = (row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len).sqrt();
            if sd < NORM_FLOOR {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x = (*x - mean) / sd);
            }
        }
    }
    Ok(())
}

/// `O = (φ(Q) ψ(K)^T ⊙ M) V` through an explicit score matrix.
pub fn linear_attention_matrix(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    query_map: FeatureMapKind,
    key_map: FeatureMapKind,
    mode: Mode,
) -> Result<Tensor> {
    check_qkv(q, k, v)?;
    let qf = feature_map::apply(query_map, q);
    let kf = feature_map::apply(key_map, k);
    AttentionMatrix::linear(&qf, &kf, mode)?.scores.matmul(v)
}

/// Gated unnormalized softmax numerator in two algebraically equal forms.
///
/// Returns `(factored, fused)`: the factored form folds `g_out` into the
/// value rows and applies `g_in` after the matrix product; the fused form
/// scales the score matrix entrywise by `g_in[t] · g_out[s]` first.
pub fn gated_attention_matrix(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    gates: &GatePair,
    mode: Mode,
) -> Result<(Tensor, Tensor)> {
    let (n, m, _, _) = check_qkv(q, k, v)?;
    gates.check_lengths(n, m)?;
    let scores = AttentionMatrix::exponential(q, k, mode)?.scores;

    let mut fused_scores = scores.clone();
    for t in 0..n {
        for (s, x) in fused_scores.row_mut(t).iter_mut().enumerate() {
            *x = gates.g_in[t] * *x * gates.g_out[s];
        }
    }
    let fused = fused_scores.matmul(v)?;

    let mut gated_v = v.clone();
    for s in 0..m {
        let g = gates.g_out[s];
        gated_v.row_mut(s).iter_mut().for_each(|x| *x *= g);
    }
    let mut factored = scores.matmul(&gated_v)?;
    for t in 0..n {
        let g = gates.g_in[t];
        factored.row_mut(t).iter_mut().for_each(|x| *x *= g);
    }
    Ok((factored, fused))
}
