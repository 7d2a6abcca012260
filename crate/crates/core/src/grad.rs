//! Hand-derived reverse-mode gradients and a central-difference checker.
//!
//! [`recurrent_attention_backward`] differentiates the truncated series
//! pair by pair (`d/dx Σ w_m x^m = Σ m w_m x^{m-1}`), which is the same
//! function the recurrent scan computes. [`recurrent_scan_backward`]
//! reaches the same gradients through the Kronecker hidden states and exists
//! so the two programs can be compared.

use serde::Serialize;

use crate::config::{clamp_logit, AttentionConfig, DenominatorMode, Mode};
use crate::error::{Error, Result};
use crate::feature_map;
use crate::metrics::gradient_relative_error;
use crate::recurrent::{prescale_for_clamp, state_init, state_update, KronPowers};
use crate::reference::{check_mode, visible, NORM_FLOOR};
use crate::tensor::{check_qkv, dot, Tensor};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Cotangents with respect to Q, K and V.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTriple {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
}

impl GradTriple {
    fn zeros_like(q: &Tensor, k: &Tensor, v: &Tensor) -> Self {
        GradTriple {
            dq: Tensor::zeros(q.rows(), q.cols()),
            dk: Tensor::zeros(k.rows(), k.cols()),
            dv: Tensor::zeros(v.rows(), v.cols()),
        }
    }

    pub fn scale(&self, alpha: f64) -> GradTriple {
        GradTriple {
            dq: self.dq.scale(alpha),
            dk: self.dk.scale(alpha),
            dv: self.dv.scale(alpha),
        }
    }

    pub fn parts(&self) -> [(&'static str, &Tensor); 3] {
        [("Q", &self.dq), ("K", &self.dk), ("V", &self.dv)]
    }

    pub fn is_finite(&self) -> bool {
        self.dq.is_finite() && self.dk.is_finite() && self.dv.is_finite()
    }
}

fn check_cotangent(d_out: &Tensor, n: usize, e: usize) -> Result<()> {
    if d_out.ndim() != 2 || d_out.rows() != n || d_out.cols() != e {
        return Err(Error::Shape(format!(
            "output cotangent has shape {:?}, expected [{n}, {e}]",
            d_out.shape()
        )));
    }
    Ok(())
}

/// Gradients of [`crate::reference::softmax_attention`].
pub fn softmax_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
    mode: Mode,
) -> Result<GradTriple> {
    let (n, m, _, e) = check_qkv(q, k, v)?;
    check_mode(mode, n, m)?;
    check_cotangent(d_out, n, e)?;
    let mut grads = GradTriple::zeros_like(q, k, v);
    let mut probs = vec![0.0; m];
    let mut out = vec![0.0; e];
    for t in 0..n {
        let len = visible(mode, t, m);
        let qt = q.row(t);
        let g = d_out.row(t);
        let mut max = f64::NEG_INFINITY;
        for s in 0..len {
            probs[s] = dot(qt, k.row(s));
            max = max.max(probs[s]);
        }
        let mut total = 0.0;
        for p in &mut probs[..len] {
            *p = (*p - max).exp();
            total += *p;
        }
        out.fill(0.0);
        for s in 0..len {
            probs[s] /= total;
            for (o, &x) in out.iter_mut().zip(v.row(s)) {
                *o += probs[s] * x;
            }
        }
        let g_dot_o = dot(g, &out);
        for s in 0..len {
            let p = probs[s];
            for (dv, &gj) in grads.dv.row_mut(s).iter_mut().zip(g) {
                *dv += p * gj;
            }
            let ds = p * (dot(g, v.row(s)) - g_dot_o);
            for (dq, &x) in grads.dq.row_mut(t).iter_mut().zip(k.row(s)) {
                *dq += ds * x;
            }
            for (dk, &x) in grads.dk.row_mut(s).iter_mut().zip(qt) {
                *dk += ds * x;
            }
        }
    }
    Ok(grads)
}

fn check_grad_config(config: &AttentionConfig) -> Result<()> {
    config.validate()?;
    match config.denominator {
        DenominatorMode::None
        | DenominatorMode::SeqNorm
        | DenominatorMode::Exact
        | DenominatorMode::L2Norm => Ok(()),
        other => Err(Error::Unsupported(format!(
            "gradients for the {other} denominator"
        ))),
    }
}

/// Cotangents of the pre-denominator numerator and scalar denominator of one
/// row, given the output cotangent `g`.
fn row_cotangents(
    mode: DenominatorMode,
    num: &[f64],
    den: f64,
    count: usize,
    g: &[f64],
    row: usize,
    dnum: &mut [f64],
) -> Result<f64> {
    match mode {
        DenominatorMode::None => {
            dnum.copy_from_slice(g);
            Ok(0.0)
        }
        DenominatorMode::SeqNorm => {
            for (d, &x) in dnum.iter_mut().zip(g) {
                *d = x / count as f64;
            }
            Ok(0.0)
        }
        DenominatorMode::Exact => {
            if den.abs() < NORM_FLOOR {
                return Err(Error::DegenerateDenominator { row, value: den });
            }
            let mut g_dot_o = 0.0;
            for ((d, &x), &nu) in dnum.iter_mut().zip(g).zip(num) {
                *d = x / den;
                g_dot_o += x * (nu / den);
            }
            Ok(-g_dot_o / den)
        }
        DenominatorMode::L2Norm => {
            let norm = num.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < NORM_FLOOR {
                dnum.fill(0.0);
                return Ok(0.0);
            }
            let o_dot_g: f64 = num.iter().zip(g).map(|(x, y)| x / norm * y).sum();
            for ((d, &x), &nu) in dnum.iter_mut().zip(g).zip(num) {
                *d = (x - nu / norm * o_dot_g) / norm;
            }
            Ok(0.0)
        }
        _ => unreachable!("checked by check_grad_config"),
    }
}

/// Gradients of the truncated recurrent attention, computed on the per-pair
/// form `Σ_s p(x_ts) V_s` with `p` the truncated series.
///
/// Supports the `none`, `seq-norm`, `exact` and `l2-norm` denominators, every
/// feature map, and both modes. A clamp is differentiated per pair (zero
/// slope where saturated).
pub fn recurrent_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
    config: &AttentionConfig,
) -> Result<GradTriple> {
    check_grad_config(config)?;
    let (n, m, d, e) = check_qkv(q, k, v)?;
    check_mode(config.mode, n, m)?;
    check_cotangent(d_out, n, e)?;
    let coeffs = config.coefficients();
    let qf = feature_map::apply(config.query_map, q);
    let kf = feature_map::apply(config.key_map, k);

    let mut dqf = Tensor::zeros(n, d);
    let mut dkf = Tensor::zeros(m, d);
    let mut dv = Tensor::zeros(m, e);
    let mut weights = vec![0.0; m];
    let mut slopes = vec![0.0; m];
    let mut num = vec![0.0; e];
    let mut dnum = vec![0.0; e];
    for t in 0..n {
        let len = visible(config.mode, t, m);
        num.fill(0.0);
        let mut den = 0.0;
        for s in 0..len {
            let raw = dot(qf.row(t), kf.row(s));
            let x = clamp_logit(raw, config.clamp);
            weights[s] = coeffs.eval(x);
            slopes[s] = if x == raw {
                coeffs.eval_derivative(x)
            } else {
                0.0
            };
            den += weights[s];
            for (o, &val) in num.iter_mut().zip(v.row(s)) {
                *o += weights[s] * val;
            }
        }
        let dden = row_cotangents(
            config.denominator,
            &num,
            den,
            len,
            d_out.row(t),
            t,
            &mut dnum,
        )?;
        for s in 0..len {
            for (g, &dn) in dv.row_mut(s).iter_mut().zip(&dnum) {
                *g += weights[s] * dn;
            }
            let dx = (dot(&dnum, v.row(s)) + dden) * slopes[s];
            if dx == 0.0 {
                continue;
            }
            for (g, &x) in dqf.row_mut(t).iter_mut().zip(kf.row(s)) {
                *g += dx * x;
            }
            for (g, &x) in dkf.row_mut(s).iter_mut().zip(qf.row(t)) {
                *g += dx * x;
            }
        }
    }
    Ok(GradTriple {
        dq: feature_map::backward(config.query_map, q, &dqf),
        dk: feature_map::backward(config.key_map, k, &dkf),
        dv,
    })
}

/// `∇_v ⟨v^{⊗m}, c⟩`, using the precomputed powers of `v`.
///
/// Slot `j` of the multi-index contributes `Σ prefix[P] · suffix[S] ·
/// c[P, a, S]` for coordinate `a`, where prefix and suffix are the lower
/// powers on either side of the slot.
fn kron_power_gradient(powers: &KronPowers, d: usize, m: usize, c: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for j in 1..=m {
        let prefix = powers.order(j - 1);
        let suffix = powers.order(m - j);
        let block = d * suffix.len();
        for (p_idx, &p) in prefix.iter().enumerate() {
            let base = p_idx * block;
            for (a, o) in out.iter_mut().enumerate() {
                let start = base + a * suffix.len();
                *o += p * dot(suffix, &c[start..start + suffix.len()]);
            }
        }
    }
}

/// Same gradients as [`recurrent_attention_backward`], obtained by
/// differentiating the recurrent scan through its hidden states in
/// `O(N · Σ_m m·d^m·e)` time.
///
/// The clamp pre-scaling of the recurrent path depends on the inputs and is
/// not differentiated; configurations where it would rescale are rejected.
pub fn recurrent_scan_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
    config: &AttentionConfig,
) -> Result<GradTriple> {
    check_grad_config(config)?;
    let (n, m, d, e) = check_qkv(q, k, v)?;
    check_mode(config.mode, n, m)?;
    check_cotangent(d_out, n, e)?;
    let qf = feature_map::apply(config.query_map, q);
    let kf = feature_map::apply(config.key_map, k);
    let (qs, ks) = prescale_for_clamp(qf.clone(), kf.clone(), config.clamp, config.mode);
    if qs != qf || ks != kf {
        return Err(Error::Unsupported(
            "scan gradients with an active clamp rescaling".into(),
        ));
    }
    let order = config.order;
    let weights = config.coefficients().as_slice().to_vec();
    let causal = config.mode == Mode::Causal;
    let mut qpow = KronPowers::new(d, order)?;
    let mut kpow = KronPowers::new(d, order)?;

    // Pass 1: absorb keys and read numerators and denominators row by row.
    // Causal rows read the state right after absorbing their own position;
    // bidirectional rows read the final state.
    let mut state = state_init(d, e, order)?;
    let mut nums = Tensor::zeros(n, e);
    let mut dens = vec![0.0; n];
    let contract =
        |state: &crate::recurrent::RecurrentState, qpow: &KronPowers, num: &mut [f64]| {
            let mut den = 0.0;
            for (mm, &w) in weights.iter().enumerate() {
                let mut partial = 0.0;
                for (idx, &p) in qpow.order(mm).iter().enumerate() {
                    partial += p * state.denom(mm)[idx];
                    for (o, &h) in num.iter_mut().zip(state.hidden(mm).row(idx)) {
                        *o += w * p * h;
                    }
                }
                den += w * partial;
            }
            den
        };
    if causal {
        for t in 0..n {
            state_update(&mut state, kf.row(t), v.row(t), None)?;
            qpow.compute(qf.row(t));
            dens[t] = contract(&state, &qpow, nums.row_mut(t));
        }
    } else {
        for s in 0..m {
            state_update(&mut state, kf.row(s), v.row(s), None)?;
        }
        for t in 0..n {
            qpow.compute(qf.row(t));
            dens[t] = contract(&state, &qpow, nums.row_mut(t));
        }
    }

    let mut dnums = Tensor::zeros(n, e);
    let mut ddens = vec![0.0; n];
    for t in 0..n {
        let count = visible(config.mode, t, m);
        ddens[t] = row_cotangents(
            config.denominator,
            nums.row(t),
            dens[t],
            count,
            d_out.row(t),
            t,
            dnums.row_mut(t),
        )?;
    }

    // Pass 2: dφ(Q)_t = Σ_m w_m ∇_q ⟨q^{⊗m}, H^m dnum_t + D^m dden_t⟩.
    let mut dqf = Tensor::zeros(n, d);
    let mut state = state_init(d, e, order)?;
    if !causal {
        for s in 0..m {
            state_update(&mut state, kf.row(s), v.row(s), None)?;
        }
    }
    let mut contracted = Vec::new();
    let mut grad_buf = vec![0.0; d];
    for t in 0..n {
        if causal {
            state_update(&mut state, kf.row(t), v.row(t), None)?;
        }
        qpow.compute(qf.row(t));
        for (mm, &w) in weights.iter().enumerate().skip(1) {
            let hidden = state.hidden(mm);
            contracted.clear();
            contracted.extend(
                (0..hidden.rows()).map(|idx| {
                    dot(hidden.row(idx), dnums.row(t)) + state.denom(mm)[idx] * ddens[t]
                }),
            );
            kron_power_gradient(&qpow, d, mm, &contracted, &mut grad_buf);
            for (g, &x) in dqf.row_mut(t).iter_mut().zip(&grad_buf) {
                *g += w * x;
            }
        }
    }

    // Pass 3: reverse accumulation of the hidden-state cotangents
    // G^m = Σ_{t≥s} w_m q_t^{⊗m} dnum_t^T and g^m = Σ_{t≥s} w_m q_t^{⊗m} dden_t.
    let mut g_hidden: Vec<Tensor> = (0..=order)
        .map(|mm| Tensor::zeros(d.pow(mm as u32), e))
        .collect();
    let mut g_denom: Vec<Vec<f64>> = (0..=order).map(|mm| vec![0.0; d.pow(mm as u32)]).collect();
    let absorb = |t: usize,
                  qpow: &mut KronPowers,
                  g_hidden: &mut Vec<Tensor>,
                  g_denom: &mut Vec<Vec<f64>>| {
        qpow.compute(qf.row(t));
        for (mm, &w) in weights.iter().enumerate() {
            for (idx, &p) in qpow.order(mm).iter().enumerate() {
                let c = w * p;
                g_denom[mm][idx] += c * ddens[t];
                for (h, &x) in g_hidden[mm].row_mut(idx).iter_mut().zip(dnums.row(t)) {
                    *h += c * x;
                }
            }
        }
    };
    if !causal {
        for t in 0..n {
            absorb(t, &mut qpow, &mut g_hidden, &mut g_denom);
        }
    }
    let mut dkf = Tensor::zeros(m, d);
    let mut dv = Tensor::zeros(m, e);
    for s in (0..m).rev() {
        if causal {
            absorb(s, &mut qpow, &mut g_hidden, &mut g_denom);
        }
        kpow.compute(kf.row(s));
        for mm in 0..=order {
            let gh = &g_hidden[mm];
            for (idx, &p) in kpow.order(mm).iter().enumerate() {
                for (o, &x) in dv.row_mut(s).iter_mut().zip(gh.row(idx)) {
                    *o += p * x;
                }
            }
            if mm == 0 {
                continue;
            }
            contracted.clear();
            contracted
                .extend((0..gh.rows()).map(|idx| dot(gh.row(idx), v.row(s)) + g_denom[mm][idx]));
            kron_power_gradient(&kpow, d, mm, &contracted, &mut grad_buf);
            for (g, &x) in dkf.row_mut(s).iter_mut().zip(&grad_buf) {
                *g += x;
            }
        }
    }

    Ok(GradTriple {
        dq: feature_map::backward(config.query_map, q, &dqf),
        dk: feature_map::backward(config.key_map, k, &dkf),
        dv,
    })
}

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    let plus = f(x + h);
    let minus = f(x - h);
    (plus - minus) / (2.0 * h)
}

#[derive(Clone, Debug, Serialize)]
pub struct InputError {
    pub input: &'static str,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error, with
    /// its analytic and numeric derivatives.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub path: String,
    pub config: String,
    pub h: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub per_input: Vec<InputError>,
}

/// Checks `analytic` against central differences of `⟨forward(Q, K, V), dO⟩`
/// taken coordinate by coordinate over Q, then K, then V.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check<F>(
    path: &str,
    config: &str,
    forward: F,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
    analytic: &GradTriple,
    h: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: Fn(&Tensor, &Tensor, &Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let mut inputs = [q.clone(), k.clone(), v.clone()];
    let mut per_input = Vec::with_capacity(3);
    for (slot, (name, grad)) in analytic.parts().into_iter().enumerate() {
        if grad.shape() != inputs[slot].shape() {
            return Err(Error::Shape(format!(
                "analytic d{name} has shape {:?}, input has {:?}",
                grad.shape(),
                inputs[slot].shape()
            )));
        }
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut worst = (0, 0.0, 0.0);
        for idx in 0..inputs[slot].len() {
            let original = inputs[slot].data()[idx];
            let mut failure = None;
            let numeric = central_difference(
                |x| {
                    inputs[slot].data_mut()[idx] = x;
                    let value = forward(&inputs[0], &inputs[1], &inputs[2])
                        .map(|o| dot(o.data(), d_out.data()))
                        .unwrap_or(f64::NAN);
                    if !value.is_finite() {
                        failure = Some(Error::NonFiniteForward {
                            input: name,
                            index: idx,
                        });
                    }
                    value
                },
                original,
                h,
            );
            inputs[slot].data_mut()[idx] = original;
            if let Some(err) = failure {
                return Err(err);
            }
            let a = grad.data()[idx];
            let rel = gradient_relative_error(a, numeric);
            if rel > max_rel || rel.is_nan() {
                max_rel = rel;
                worst = (idx, a, numeric);
            }
            max_abs = max_abs.max((a - numeric).abs());
        }
        per_input.push(InputError {
            input: name,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            worst_index: worst.0,
            worst_analytic: worst.1,
            worst_numeric: worst.2,
        });
    }
    let max_rel_err = per_input.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    let max_abs_err = per_input.iter().map(|p| p.max_abs_err).fold(0.0, f64::max);
    Ok(GradReport {
        path: path.to_string(),
        config: config.to_string(),
        h,
        max_rel_err,
        max_abs_err,
        tolerance,
        pass: max_rel_err <= tolerance,
        per_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FeatureMapKind;
    use crate::recurrent::recurrent_attention;
    use crate::reference::softmax_attention;
    use crate::rng::generate_inputs;

    #[test]
    fn calibration_square() {
        let d = central_difference(|x| x * x, 3.0, 1e-4);
        assert!((d - 6.0).abs() <= 1e-7);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let (q, k, v) = generate_inputs(1, 5, 5, 3, 2, 1.0).unwrap();
        let zero = Tensor::zeros(5, 2);
        let g = softmax_attention_backward(&q, &k, &v, &zero, Mode::Causal).unwrap();
        assert!(g
            .parts()
            .iter()
            .all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn single_token_softmax() {
        let (q, k, v) = generate_inputs(2, 1, 1, 3, 2, 1.0).unwrap();
        let d_out = Tensor::from_rows(&[[0.3, -1.2]]).unwrap();
        let g = softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal).unwrap();
        assert_eq!(g.dv.data(), d_out.data());
        assert!(g.dq.data().iter().chain(g.dk.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_matches_finite_differences() {
        let (q, k, v) = generate_inputs(19, 6, 6, 3, 2, 1.0).unwrap();
        let (d_out, _, _) = generate_inputs(1019, 6, 1, 2, 1, 1.0).unwrap();
        let g = softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal).unwrap();
        let report = finite_diff_check(
            "softmax",
            "causal",
            |q, k, v| softmax_attention(q, k, v, Mode::Causal),
            &q,
            &k,
            &v,
            &d_out,
            &g,
            DEFAULT_STEP,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn scaled_gradient_fails_check() {
        let (q, k, v) = generate_inputs(19, 6, 6, 3, 2, 1.0).unwrap();
        let (d_out, _, _) = generate_inputs(1019, 6, 1, 2, 1, 1.0).unwrap();
        let g = softmax_attention_backward(&q, &k, &v, &d_out, Mode::Causal)
            .unwrap()
            .scale(1.01);
        let report = finite_diff_check(
            "softmax",
            "causal",
            |q, k, v| softmax_attention(q, k, v, Mode::Causal),
            &q,
            &k,
            &v,
            &d_out,
            &g,
            DEFAULT_STEP,
            1e-5,
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn bilinear_closed_form() {
        // O_t = Σ_{s≤t} q_t k_s v_s with scalar inputs, N = 2.
        let q = Tensor::from_rows(&[[0.5], [-1.5]]).unwrap();
        let k = Tensor::from_rows(&[[2.0], [0.25]]).unwrap();
        let v = Tensor::from_rows(&[[3.0], [-4.0]]).unwrap();
        let g = Tensor::from_rows(&[[1.0], [2.0]]).unwrap();
        let cfg = AttentionConfig::new(1)
            .with_denominator(DenominatorMode::None)
            .with_coefficients(crate::TaylorCoefficients::custom(vec![0.0, 1.0]).unwrap());
        let grads = recurrent_attention_backward(&q, &k, &v, &g, &cfg).unwrap();
        let (q0, q1, k0, k1, v0, v1, g0, g1) = (0.5, -1.5, 2.0, 0.25, 3.0, -4.0, 1.0, 2.0);
        assert_eq!(grads.dq.data(), &[g0 * k0 * v0, g1 * (k0 * v0 + k1 * v1)]);
        assert_eq!(
            grads.dk.data(),
            &[g0 * q0 * v0 + g1 * q1 * v0, g1 * q1 * v1]
        );
        assert_eq!(
            grads.dv.data(),
            &[g0 * q0 * k0 + g1 * q1 * k0, g1 * q1 * k1]
        );
    }

    #[test]
    fn unsupported_modes() {
        let (q, k, v) = generate_inputs(3, 4, 4, 2, 2, 1.0).unwrap();
        let g = Tensor::zeros(4, 2);
        for mode in [
            DenominatorMode::RmsNorm,
            DenominatorMode::LayerNorm,
            DenominatorMode::Gate {
                seq_normalized: true,
            },
        ] {
            let cfg = AttentionConfig::new(2).with_denominator(mode);
            assert!(matches!(
                recurrent_attention_backward(&q, &k, &v, &g, &cfg),
                Err(Error::Unsupported(_))
            ));
        }
    }

    #[test]
    fn l2_recurrent_seed_23() {
        // Causal row 0 of the output is V_0/|V_0| whatever Q_0 is, so dQ row 0
        // is exactly zero and central differences there only see round-off
        // (~1e-12). Every other coordinate is held to the 1e-5 relative bound.
        let (q, k, v) = generate_inputs(23, 8, 8, 3, 2, 1.0).unwrap();
        let (d_out, _, _) = generate_inputs(1023, 8, 1, 2, 1, 1.0).unwrap();
        let cfg = AttentionConfig::new(4).with_denominator(DenominatorMode::L2Norm);
        let g = recurrent_attention_backward(&q, &k, &v, &d_out, &cfg).unwrap();
        let mut inputs = [q, k, v];
        for (slot, (name, grad)) in g.parts().into_iter().enumerate() {
            for idx in 0..grad.len() {
                let original = inputs[slot].data()[idx];
                let fd = central_difference(
                    |x| {
                        inputs[slot].data_mut()[idx] = x;
                        let out =
                            recurrent_attention(&inputs[0], &inputs[1], &inputs[2], &cfg, None)
                                .unwrap();
                        dot(out.data(), d_out.data())
                    },
                    original,
                    DEFAULT_STEP,
                );
                inputs[slot].data_mut()[idx] = original;
                let a = grad.data()[idx];
                if slot == 0 && idx < 3 {
                    assert!(
                        a.abs() <= 1e-15 && fd.abs() <= 1e-11,
                        "d{name}[{idx}]: {a} vs {fd}"
                    );
                } else {
                    let rel = gradient_relative_error(a, fd);
                    assert!(rel <= 1e-5, "d{name}[{idx}]: {a} vs {fd} (rel {rel})");
                }
            }
        }
    }

    #[test]
    fn scan_and_pairwise_gradients_agree() {
        let (q, k, v) = generate_inputs(29, 7, 7, 3, 2, 0.8).unwrap();
        let (d_out, _, _) = generate_inputs(1029, 7, 1, 2, 1, 1.0).unwrap();
        for mode in [Mode::Causal, Mode::Bidirectional] {
            for den in [
                DenominatorMode::None,
                DenominatorMode::SeqNorm,
                DenominatorMode::Exact,
                DenominatorMode::L2Norm,
            ] {
                for map in FeatureMapKind::ALL {
                    let cfg = AttentionConfig::new(3)
                        .with_mode(mode)
                        .with_denominator(den)
                        .with_maps(map, map);
                    let a = recurrent_attention_backward(&q, &k, &v, &d_out, &cfg).unwrap();
                    let b = recurrent_scan_backward(&q, &k, &v, &d_out, &cfg).unwrap();
                    for ((name, x), (_, y)) in a.parts().iter().zip(b.parts()) {
                        let err = crate::metrics::normwise_relative_error(y, x);
                        assert!(err <= 1e-10, "{mode} {den} {map} d{name}: {err}");
                    }
                }
            }
        }
    }
}
