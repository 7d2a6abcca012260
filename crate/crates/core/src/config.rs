//! Configuration shared by the reference and recurrent attention paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported Taylor order. `1/30!` is still a normal f64.
pub const MAX_ORDER: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Causal,
    Bidirectional,
}

/// What replaces (or realizes) the softmax normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Raw numerator.
    None,
    /// Divide by the truncated sum of kernel weights (true softmax at order ∞).
    Exact,
    /// Divide by the number of visible positions.
    SeqNorm,
    /// Replace the normalizer by the per-row gate, optionally also dividing by
    /// the number of visible positions.
    Gate {
        seq_normalized: bool,
    },
    L2Norm,
    RmsNorm,
    /// Zero mean, unit variance across the row; no affine parameters.
    LayerNorm,
    /// L2-normalize, then divide by the number of visible positions.
    L2PlusSeq,
}

impl DenominatorMode {
    pub const ALL: [DenominatorMode; 9] = [
        DenominatorMode::None,
        DenominatorMode::Exact,
        DenominatorMode::SeqNorm,
        DenominatorMode::Gate {
            seq_normalized: false,
        },
        DenominatorMode::Gate {
            seq_normalized: true,
        },
        DenominatorMode::L2Norm,
        DenominatorMode::RmsNorm,
        DenominatorMode::LayerNorm,
        DenominatorMode::L2PlusSeq,
    ];

    pub fn is_gate(self) -> bool {
        matches!(self, DenominatorMode::Gate { .. })
    }
}

impl fmt::Display for DenominatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DenominatorMode::None => "none",
            DenominatorMode::Exact => "exact",
            DenominatorMode::SeqNorm => "seq-norm",
            DenominatorMode::Gate {
                seq_normalized: false,
            } => "gate",
            DenominatorMode::Gate {
                seq_normalized: true,
            } => "gate-seq",
            DenominatorMode::L2Norm => "l2-norm",
            DenominatorMode::RmsNorm => "rms-norm",
            DenominatorMode::LayerNorm => "layer-norm",
            DenominatorMode::L2PlusSeq => "l2-seq",
        };
        f.write_str(s)
    }
}

impl FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => DenominatorMode::None,
            "exact" => DenominatorMode::Exact,
            "seq-norm" | "seq_norm" => DenominatorMode::SeqNorm,
            "gate" => DenominatorMode::Gate {
                seq_normalized: false,
            },
            "gate-seq" | "gate_seq" => DenominatorMode::Gate {
                seq_normalized: true,
            },
            "l2-norm" | "l2_norm" | "l2" => DenominatorMode::L2Norm,
            "rms-norm" | "rms_norm" | "rms" => DenominatorMode::RmsNorm,
            "layer-norm" | "layer_norm" | "layer" => DenominatorMode::LayerNorm,
            "l2-seq" | "l2_plus_seq" | "l2-plus-seq" => DenominatorMode::L2PlusSeq,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown denominator mode {other:?}"
                )))
            }
        })
    }
}

/// Row-wise feature map applied to queries or keys before scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    Identity,
    EluPlusOne,
    Relu,
    /// Unit-normalize each row; a zero row maps to itself.
    Cosine,
}

impl FeatureMapKind {
    pub const ALL: [FeatureMapKind; 4] = [
        FeatureMapKind::Identity,
        FeatureMapKind::EluPlusOne,
        FeatureMapKind::Relu,
        FeatureMapKind::Cosine,
    ];
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMapKind::Identity => "identity",
            FeatureMapKind::EluPlusOne => "elu-plus-one",
            FeatureMapKind::Relu => "relu",
            FeatureMapKind::Cosine => "cosine",
        })
    }
}

impl FromStr for FeatureMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => FeatureMapKind::Identity,
            "elu-plus-one" | "elu_plus_one" | "elu+1" => FeatureMapKind::EluPlusOne,
            "relu" => FeatureMapKind::Relu,
            "cosine" => FeatureMapKind::Cosine,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown feature map {other:?}"
                )))
            }
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Causal => "causal",
            Mode::Bidirectional => "bidir",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Mode::Causal),
            "bidir" | "bidirectional" => Ok(Mode::Bidirectional),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// Weights of the truncated exponential series, `w[m] = 1/m!`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorCoefficients(Vec<f64>);

impl TaylorCoefficients {
    /// `1/m!` for `m = 0..=order`, built as `w[m] = w[m-1] / m`.
    pub fn exponential(order: usize) -> Self {
        let mut w = Vec::with_capacity(order + 1);
        w.push(1.0);
        for m in 1..=order {
            w.push(w[m - 1] / m as f64);
        }
        TaylorCoefficients(w)
    }

    /// Arbitrary per-order weights, e.g. to isolate a single series term.
    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() > MAX_ORDER + 1 {
            return Err(Error::InvalidConfig(format!(
                "need between 1 and {} coefficients, got {}",
                MAX_ORDER + 1,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("coefficients must be finite".into()));
        }
        Ok(TaylorCoefficients(weights))
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `Σ_m w[m] x^m`, powers accumulated in ascending order.
    pub fn eval(&self, x: f64) -> f64 {
        let mut power = 1.0;
        let mut sum = self.0[0];
        for &w in &self.0[1..] {
            power *= x;
            sum += w * power;
        }
        sum
    }

    /// Derivative of [`TaylorCoefficients::eval`] with respect to `x`.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        let mut power = 1.0;
        let mut sum = 0.0;
        for (m, &w) in self.0.iter().enumerate().skip(1) {
            sum += m as f64 * w * power;
            power *= x;
        }
        sum
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub order: usize,
    pub mode: Mode,
    pub denominator: DenominatorMode,
    pub query_map: FeatureMapKind,
    pub key_map: FeatureMapKind,
    pub clamp: Option<f64>,
    /// Overrides the `1/m!` weights. Must have `order + 1` entries.
    #[serde(skip)]
    pub coefficients: Option<TaylorCoefficients>,
}

impl AttentionConfig {
    pub fn new(order: usize) -> Self {
        AttentionConfig {
            order,
            mode: Mode::Causal,
            denominator: DenominatorMode::Exact,
            query_map: FeatureMapKind::Identity,
            key_map: FeatureMapKind::Identity,
            clamp: None,
            coefficients: None,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_denominator(mut self, denominator: DenominatorMode) -> Self {
        self.denominator = denominator;
        self
    }

    pub fn with_maps(mut self, query_map: FeatureMapKind, key_map: FeatureMapKind) -> Self {
        self.query_map = query_map;
        self.key_map = key_map;
        self
    }

    pub fn with_clamp(mut self, clamp: Option<f64>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_coefficients(mut self, coefficients: TaylorCoefficients) -> Self {
        self.coefficients = Some(coefficients);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order > MAX_ORDER {
            return Err(Error::InvalidConfig(format!(
                "order {} exceeds the maximum of {MAX_ORDER}",
                self.order
            )));
        }
        if let Some(c) = self.clamp {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "clamp must be a finite non-negative bound, got {c}"
                )));
            }
        }
        if let Some(coeffs) = &self.coefficients {
            if coeffs.order() != self.order {
                return Err(Error::InvalidConfig(format!(
                    "{} coefficients supplied for order {}",
                    coeffs.order() + 1,
                    self.order
                )));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self) -> TaylorCoefficients {
        self.coefficients
            .clone()
            .unwrap_or_else(|| TaylorCoefficients::exponential(self.order))
    }
}

/// Per-position gates in `[0, 1]`.
///
/// `g_in` has one entry per query row and scales that row's output.
/// `g_out` has one entry per key/value position and scales the position's
/// contribution to the accumulated state. In the recurrent path `g_out`
/// is therefore applied at update time and `g_in` at readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePair {
    pub g_in: Vec<f64>,
    pub g_out: Vec<f64>,
}

impl GatePair {
    pub fn new(g_in: Vec<f64>, g_out: Vec<f64>) -> Result<Self> {
        let gates = GatePair { g_in, g_out };
        gates.validate()?;
        Ok(gates)
    }

    pub fn ones(n: usize, m: usize) -> Self {
        GatePair {
            g_in: vec![1.0; n],
            g_out: vec![1.0; m],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("g_in", &self.g_in), ("g_out", &self.g_out)] {
            if let Some((i, x)) = g
                .iter()
                .enumerate()
                .find(|(_, x)| !(0.0..=1.0).contains(*x))
            {
                return Err(Error::InvalidArgument(format!(
                    "{name}[{i}] = {x} lies outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_lengths(&self, n: usize, m: usize) -> Result<()> {
        self.validate()?;
        if self.g_in.len() != n || self.g_out.len() != m {
            return Err(Error::Shape(format!(
                "gates have lengths ({}, {}), expected ({n}, {m})",
                self.g_in.len(),
                self.g_out.len()
            )));
        }
        Ok(())
    }
}

/// Saturates `x` to `[-bound, bound]`; identity when `bound` is absent.
pub fn clamp_logit(x: f64, bound: Option<f64>) -> f64 {
    match bound {
        Some(b) => x.max(-b).min(b),
        None => x,
    }
}
