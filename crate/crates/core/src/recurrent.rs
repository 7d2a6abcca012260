//! Softmax attention as a finite stack of recurrent networks.
//!
//! Order `m` of the truncated exponential keeps a hidden matrix
//! `H^m = Σ_s (K_s^{⊗m})^T V_s` of shape `d^m × e` and a denominator vector
//! `D^m = Σ_s K_s^{⊗m}`. A query reads out
//! `Σ_m w_m (Q_t^{⊗m}) · H^m`, normalized according to the configured
//! [`DenominatorMode`]. State size depends on `d`, `e` and the order only,
//! never on sequence length.
//!
//! Summation order is fixed: ascending position, ascending order, ascending
//! flat index. A single-threaded scan is therefore bit-reproducible.

use crate::config::{
    AttentionConfig, DenominatorMode, GatePair, Mode, TaylorCoefficients, MAX_ORDER,
};
use crate::error::{Error, Result};
use crate::feature_map;
use crate::kron::{kron_extend, kron_len, MAX_STATE_ELEMENTS};
use crate::reference::{check_mode, max_abs_logit, NORM_FLOOR};
use crate::tensor::{check_qkv, Tensor};

/// All Kronecker powers `v^{⊗0} … v^{⊗n}` of one vector, packed back to back.
#[derive(Clone, Debug)]
pub struct KronPowers {
    offsets: Vec<usize>,
    buf: Vec<f64>,
}

impl KronPowers {
    pub fn new(d: usize, order: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(order + 2);
        let mut total = 0usize;
        offsets.push(0);
        for m in 0..=order {
            total += kron_len(d, m)?;
            offsets.push(total);
        }
        Ok(KronPowers {
            offsets,
            buf: vec![0.0; total],
        })
    }

    /// Fills every order from the previous one: `v^{⊗m} = v^{⊗(m-1)} ⊗ v`.
    pub fn compute(&mut self, v: &[f64]) {
        self.buf[0] = 1.0;
        for m in 1..self.offsets.len() - 1 {
            let (lo, hi) = self.buf.split_at_mut(self.offsets[m]);
            let prev = &lo[self.offsets[m - 1]..];
            let len = self.offsets[m + 1] - self.offsets[m];
            kron_extend(prev, v, &mut hi[..len]);
        }
    }

    pub fn order(&self, m: usize) -> &[f64] {
        &self.buf[self.offsets[m]..self.offsets[m + 1]]
    }
}

/// Exact number of stored state values, `Σ_{m≤order} d^m (e + 1)`.
pub fn state_elements(d: usize, e: usize, order: usize) -> Result<usize> {
    let mut total: u128 = 0;
    for m in 0..=order {
        total += kron_len(d, m)? as u128 * (e as u128 + 1);
        if total > MAX_STATE_ELEMENTS {
            return Err(Error::Resource {
                what: format!("recurrent state for d={d}, e={e}, order={order}"),
                requested: total,
                limit: MAX_STATE_ELEMENTS,
            });
        }
    }
    Ok(total as usize)
}

#[derive(Clone, Debug)]
pub struct RecurrentState {
    d: usize,
    e: usize,
    order: usize,
    hidden: Vec<Tensor>,
    denom: Vec<Vec<f64>>,
    t: usize,
    key_powers: KronPowers,
}

impl RecurrentState {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn e(&self) -> usize {
        self.e
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of absorbed key/value pairs.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn hidden(&self, m: usize) -> &Tensor {
        &self.hidden[m]
    }

    pub fn denom(&self, m: usize) -> &[f64] {
        &self.denom[m]
    }

    /// Stored hidden and denominator values, counted from the live buffers.
    pub fn element_count(&self) -> usize {
        self.hidden.iter().map(Tensor::len).sum::<usize>()
            + self.denom.iter().map(Vec::len).sum::<usize>()
    }
}

pub fn state_init(d: usize, e: usize, order: usize) -> Result<RecurrentState> {
    if d == 0 || e == 0 {
        return Err(Error::InvalidArgument(format!(
            "state dimensions must be positive, got d={d}, e={e}"
        )));
    }
    if order > MAX_ORDER {
        return Err(Error::InvalidConfig(format!(
            "order {order} exceeds the maximum of {MAX_ORDER}"
        )));
    }
    state_elements(d, e, order)?;
    let mut hidden = Vec::with_capacity(order + 1);
    let mut denom = Vec::with_capacity(order + 1);
    for m in 0..=order {
        let rows = kron_len(d, m)?;
        hidden.push(Tensor::zeros(rows, e));
        denom.push(vec![0.0; rows]);
    }
    Ok(RecurrentState {
        d,
        e,
        order,
        hidden,
        denom,
        t: 0,
        key_powers: KronPowers::new(d, order)?,
    })
}

/// Absorbs one key/value pair: `H^m += g (k^{⊗m})^T v`, `D^m += g k^{⊗m}`.
pub fn state_update(
    state: &mut RecurrentState,
    k: &[f64],
    v: &[f64],
    gate_in: Option<f64>,
) -> Result<()> {
    if k.len() != state.d || v.len() != state.e {
        return Err(Error::Shape(format!(
            "update with |k|={}, |v|={} on a state with d={}, e={}",
            k.len(),
            v.len(),
            state.d,
            state.e
        )));
    }
    if let Some(g) = gate_in {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::InvalidArgument(format!(
                "input gate {g} outside [0, 1]"
            )));
        }
    }
    state.key_powers.compute(k);
    for m in 0..=state.order {
        let kp = state.key_powers.order(m);
        let hidden = &mut state.hidden[m];
        let denom = &mut state.denom[m];
        for (idx, &p) in kp.iter().enumerate() {
            let c = match gate_in {
                Some(g) => g * p,
                None => p,
            };
            denom[idx] += c;
            for (h, &x) in hidden.row_mut(idx).iter_mut().zip(v) {
                *h += c * x;
            }
        }
    }
    state.t += 1;
    Ok(())
}

/// Reads the output for query `q` against the current state.
///
/// `gate_out`, when given, scales the finished row; gate denominators
/// require it.
pub fn readout(
    state: &RecurrentState,
    q: &[f64],
    config: &AttentionConfig,
    gate_out: Option<f64>,
) -> Result<Vec<f64>> {
    config.validate()?;
    if config.order != state.order {
        return Err(Error::InvalidConfig(format!(
            "config order {} does not match state order {}",
            config.order, state.order
        )));
    }
    if q.len() != state.d {
        return Err(Error::Shape(format!(
            "query of length {} on a state with d={}",
            q.len(),
            state.d
        )));
    }
    let mut powers = KronPowers::new(state.d, state.order)?;
    let mut out = vec![0.0; state.e];
    let coeffs = config.coefficients();
    let row = state.t.saturating_sub(1);
    readout_into(
        state,
        q,
        &coeffs,
        config.denominator,
        gate_out,
        &mut powers,
        row,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn readout_into(
    state: &RecurrentState,
    q: &[f64],
    coeffs: &TaylorCoefficients,
    denominator: DenominatorMode,
    gate_out: Option<f64>,
    powers: &mut KronPowers,
    row: usize,
    out: &mut [f64],
) -> Result<()> {
    if state.t == 0 {
        return Err(Error::InvalidArgument("readout from an empty state".into()));
    }
    if denominator.is_gate() && gate_out.is_none() {
        return Err(Error::InvalidConfig(
            "gate denominator requires an output gate".into(),
        ));
    }
    powers.compute(q);
    out.fill(0.0);
    let mut den = 0.0;
    for (m, &w) in coeffs.as_slice().iter().enumerate() {
        let qp = powers.order(m);
        let hidden = &state.hidden[m];
        let mut partial_den = 0.0;
        for (idx, &p) in qp.iter().enumerate() {
            let c = w * p;
            partial_den += p * state.denom[m][idx];
            for (o, &h) in out.iter_mut().zip(hidden.row(idx)) {
                *o += c * h;
            }
        }
        den += w * partial_den;
    }
    apply_denominator(out, den, state.t, denominator, row)?;
    if let Some(g) = gate_out {
        out.iter_mut().for_each(|x| *x *= g);
    }
    Ok(())
}

fn apply_denominator(
    out: &mut [f64],
    den: f64,
    count: usize,
    mode: DenominatorMode,
    row: usize,
) -> Result<()> {
    let inv_count = 1.0 / count as f64;
    let scale = match mode {
        DenominatorMode::None
        | DenominatorMode::Gate {
            seq_normalized: false,
        } => return Ok(()),
        DenominatorMode::Exact => {
            if den.abs() < NORM_FLOOR {
                return Err(Error::DegenerateDenominator { row, value: den });
            }
            out.iter_mut().for_each(|x| *x /= den);
            return Ok(());
        }
        DenominatorMode::SeqNorm
        | DenominatorMode::Gate {
            seq_normalized: true,
        } => {
            out.iter_mut().for_each(|x| *x /= count as f64);
            return Ok(());
        }
        DenominatorMode::L2Norm | DenominatorMode::L2PlusSeq => {
            out.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
        DenominatorMode::RmsNorm => {
            (out.iter().map(|x| x * x).sum::<f64>() / out.len() as f64).sqrt()
        }
        DenominatorMode::LayerNorm => {
            let len = out.len() as f64;
            let mean = out.iter().sum::<f64>() / len;
            out.iter_mut().for_each(|x| *x -= mean);
            (out.iter().map(|x| x * x).sum::<f64>() / len).sqrt()
        }
    };
    if scale < NORM_FLOOR {
        out.fill(0.0);
        return Ok(());
    }
    out.iter_mut().for_each(|x| *x /= scale);
    if mode == DenominatorMode::L2PlusSeq {
        out.iter_mut().for_each(|x| *x *= inv_count);
    }
    Ok(())
}

/// Rescales mapped queries and keys so every visible logit lies within the
/// clamp bound. Both sides are multiplied by `sqrt(bound / max|logit|)`.
///
/// A Cauchy–Schwarz bound is tried first so unclamped inputs stay linear
/// time; only when it is inconclusive is the exact maximum computed.
pub fn prescale_for_clamp(
    q: Tensor,
    k: Tensor,
    clamp: Option<f64>,
    mode: Mode,
) -> (Tensor, Tensor) {
    let Some(bound) = clamp else {
        return (q, k);
    };
    let row_norm = |t: &Tensor| {
        t.iter_rows()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max)
    };
    if row_norm(&q) * row_norm(&k) <= bound {
        return (q, k);
    }
    let max = max_abs_logit(&q, &k, mode);
    if max <= bound {
        return (q, k);
    }
    let factor = (bound / max).sqrt();
    (q.scale(factor), k.scale(factor))
}

fn prepare(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    config: &AttentionConfig,
    gates: Option<&GatePair>,
) -> Result<(Tensor, Tensor)> {
    config.validate()?;
    let (n, m, _, _) = check_qkv(q, k, v)?;
    check_mode(config.mode, n, m)?;
    match gates {
        Some(g) => g.check_lengths(n, m)?,
        None if config.denominator.is_gate() => {
            return Err(Error::InvalidConfig(
                "gate denominator requires a gate pair".into(),
            ))
        }
        None => {}
    }
    let qf = feature_map::apply(config.query_map, q);
    let kf = feature_map::apply(config.key_map, k);
    Ok(prescale_for_clamp(qf, kf, config.clamp, config.mode))
}

/// Truncated recurrent softmax attention. Causal mode runs one streaming
/// scan (update with position `t`, then read out query `t`); bidirectional
/// mode defers to [`bidirectional_recurrent_attention`].
///
/// With `gates`, `g_out[s]` gates the update of position `s` and `g_in[t]`
/// scales output row `t`.
pub fn recurrent_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    config: &AttentionConfig,
    gates: Option<&GatePair>,
) -> Result<Tensor> {
    if config.mode == Mode::Bidirectional {
        return bidirectional_recurrent_attention(q, k, v, config, gates);
    }
    let (qf, kf) = prepare(q, k, v, config, gates)?;
    let (n, d, e) = (q.rows(), q.cols(), v.cols());
    let mut state = state_init(d, e, config.order)?;
    let mut powers = KronPowers::new(d, config.order)?;
    let coeffs = config.coefficients();
    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        state_update(&mut state, kf.row(t), v.row(t), gates.map(|g| g.g_out[t]))?;
        readout_into(
            &state,
            qf.row(t),
            &coeffs,
            config.denominator,
            gates.map(|g| g.g_in[t]),
            &mut powers,
            t,
            out.row_mut(t),
        )?;
    }
    Ok(out)
}

/// Absorbs all `M` key/value pairs, then reads out every query against the
/// final state. `N` may differ from `M`. Runs bidirectionally regardless of
/// `config.mode`.
pub fn bidirectional_recurrent_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    config: &AttentionConfig,
    gates: Option<&GatePair>,
) -> Result<Tensor> {
    let config = AttentionConfig {
        mode: Mode::Bidirectional,
        ..config.clone()
    };
    let (qf, kf) = prepare(q, k, v, &config, gates)?;
    let (n, m, d, e) = (q.rows(), k.rows(), q.cols(), v.cols());
    let mut state = state_init(d, e, config.order)?;
    for s in 0..m {
        state_update(&mut state, kf.row(s), v.row(s), gates.map(|g| g.g_out[s]))?;
    }
    let mut powers = KronPowers::new(d, config.order)?;
    let coeffs = config.coefficients();
    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        readout_into(
            &state,
            qf.row(t),
            &coeffs,
            config.denominator,
            gates.map(|g| g.g_in[t]),
            &mut powers,
            t,
            out.row_mut(t),
        )?;
    }
    Ok(out)
}

fn check_square_causal(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, m, d, e) = check_qkv(q, k, v)?;
    check_mode(Mode::Causal, n, m)?;
    Ok((n, d, e))
}

/// Classic linear attention: `H_t = H_{t-1} + ψ(K_t)^T V_t`,
/// `O_t = φ(Q_t) · H_t`. Only the first-order term, no constant term.
pub fn linear_attention_recurrent(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    query_map: crate::config::FeatureMapKind,
    key_map: crate::config::FeatureMapKind,
) -> Result<Tensor> {
    let (n, d, e) = check_square_causal(q, k, v)?;
    let qf = feature_map::apply(query_map, q);
    let kf = feature_map::apply(key_map, k);
    let mut hidden = Tensor::zeros(d, e);
    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        for (i, &ki) in kf.row(t).iter().enumerate() {
            for (h, &x) in hidden.row_mut(i).iter_mut().zip(v.row(t)) {
                *h += ki * x;
            }
        }
        let dst = out.row_mut(t);
        for (i, &qi) in qf.row(t).iter().enumerate() {
            for (o, &h) in dst.iter_mut().zip(hidden.row(i)) {
                *o += qi * h;
            }
        }
    }
    Ok(out)
}

/// Second-order term alone: `H_t = Σ_s (K_s ⊗ K_s)^T V_s` (`d² × e`),
/// `O_t = (Q_t ⊗ Q_t) · H_t`.
pub fn quadratic_attention_recurrent(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (n, d, e) = check_square_causal(q, k, v)?;
    let mut hidden = Tensor::zeros(d * d, e);
    let mut kk = vec![0.0; d * d];
    let mut qq = vec![0.0; d * d];
    let mut out = Tensor::zeros(n, e);
    for t in 0..n {
        kron_extend(k.row(t), k.row(t), &mut kk);
        for (idx, &c) in kk.iter().enumerate() {
            for (h, &x) in hidden.row_mut(idx).iter_mut().zip(v.row(t)) {
                *h += c * x;
            }
        }
        kron_extend(q.row(t), q.row(t), &mut qq);
        let dst = out.row_mut(t);
        for (idx, &c) in qq.iter().enumerate() {
            for (o, &h) in dst.iter_mut().zip(hidden.row(idx)) {
                *o += c * h;
            }
        }
    }
    Ok(out)
}
