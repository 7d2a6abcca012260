//! Kronecker powers of vectors and the decomposed inner-product identity
//! `(a·b)^n = a^{⊗n} · b^{⊗n}`.
//!
//! Flat layout is row-major over the multi-index `(i_1, …, i_n)` with the
//! leftmost factor varying slowest, so `v^{⊗n} = v^{⊗(n-1)} ⊗ v`.

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Upper bound on elements held by any single Kronecker-sized allocation or
/// recurrent state (2^26 f64 values, 512 MiB).
pub const MAX_STATE_ELEMENTS: u128 = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct KronVector {
    base_dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl KronVector {
    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// `d^n`, or a resource error when it exceeds [`MAX_STATE_ELEMENTS`].
pub fn kron_len(d: usize, n: usize) -> Result<usize> {
    let mut len: u128 = 1;
    for _ in 0..n {
        len = len.saturating_mul(d as u128);
        if len > MAX_STATE_ELEMENTS {
            return Err(Error::Resource {
                what: format!("Kronecker power of order {n} over dimension {d}"),
                requested: (d as u128).checked_pow(n as u32).unwrap_or(u128::MAX),
                limit: MAX_STATE_ELEMENTS,
            });
        }
    }
    Ok(len as usize)
}

/// `out = prev ⊗ v`; `out` must have length `prev.len() * v.len()`.
pub(crate) fn kron_extend(prev: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, &p) in prev.iter().enumerate() {
        let dst = &mut out[i * d..(i + 1) * d];
        for (o, &x) in dst.iter_mut().zip(v) {
            *o = p * x;
        }
    }
}

pub fn kron_power(v: &[f64], n: usize) -> Result<KronVector> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(
            "kron_power of an empty vector".into(),
        ));
    }
    kron_len(v.len(), n)?;
    let mut data = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; data.len() * v.len()];
        kron_extend(&data, v, &mut next);
        data = next;
    }
    Ok(KronVector {
        base_dim: v.len(),
        order: n,
        data,
    })
}

/// Inner product of the materialized Kronecker powers of `a` and `b`.
pub fn decomposed_inner_power(a: &[f64], b: &[f64], n: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let ka = kron_power(a, n)?;
    let kb = kron_power(b, n)?;
    Ok(dot(ka.data(), kb.data()))
}

/// `state += (k^{⊗n})^T v` where `state` is `d^n × e`.
pub fn kron_outer_accumulate(state: &mut Tensor, k: &[f64], v: &[f64], n: usize) -> Result<()> {
    let rows = kron_len(k.len(), n)?;
    if state.ndim() != 2 || state.rows() != rows || state.cols() != v.len() {
        return Err(Error::Shape(format!(
            "state {:?} does not match {rows}×{}",
            state.shape(),
            v.len()
        )));
    }
    let kp = kron_power(k, n)?;
    for (i, &c) in kp.data().iter().enumerate() {
        for (dst, &x) in state.row_mut(i).iter_mut().zip(v) {
            *dst += c * x;
        }
    }
    Ok(())
}
