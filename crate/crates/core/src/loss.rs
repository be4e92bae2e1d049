//! Margin losses ρ(s, y) for a linear predictor `s` and a binary response `y`.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Past this margin the logistic loss is replaced by its linear asymptote.
const LOGISTIC_ASYMPTOTE: f64 = 30.0;

/// Default Huber transition point.
pub const DEFAULT_HUBER_DELTA: f64 = 0.1;

/// One of the supported convex losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    /// `log(1 + exp(−s(2y − 1)))`
    Logistic,
    /// `(y − s)² / 2`
    Quadratic,
    /// Huber function of the residual `y − s`.
    Huber { delta: f64 },
}

impl LossSpec {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        Ok(LossSpec::Huber { delta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Logistic => "logistic",
            LossSpec::Quadratic => "quadratic",
            LossSpec::Huber { .. } => "huber",
        }
    }

    /// Lipschitz constant in `s`; `None` when unbounded.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match *self {
            LossSpec::Logistic => Some(1.0),
            LossSpec::Quadratic => None,
            LossSpec::Huber { delta } => Some(delta),
        }
    }

    /// Global upper bound on the second derivative in `s`.
    pub fn curvature_bound(&self) -> f64 {
        match self {
            LossSpec::Logistic => 0.25,
            LossSpec::Quadratic | LossSpec::Huber { .. } => 1.0,
        }
    }

    /// ρ(s, y), assuming `y ∈ {0, 1}`.
    #[inline]
    pub fn value(&self, s: f64, y: f64) -> f64 {
        match *self {
            LossSpec::Logistic => {
                let m = -s * (2.0 * y - 1.0);
                if m > LOGISTIC_ASYMPTOTE {
                    m
                } else {
                    m.exp().ln_1p()
                }
            }
            LossSpec::Quadratic => 0.5 * (y - s) * (y - s),
            LossSpec::Huber { delta } => {
                let t = (y - s).abs();
                if t <= delta {
                    0.5 * t * t
                } else {
                    delta * t - 0.5 * delta * delta
                }
            }
        }
    }

    /// ∂ρ/∂s, assuming `y ∈ {0, 1}`.
    #[inline]
    pub fn derivative(&self, s: f64, y: f64) -> f64 {
        match *self {
            LossSpec::Logistic => {
                let sign = 2.0 * y - 1.0;
                -sign / (1.0 + (s * sign).exp())
            }
            LossSpec::Quadratic => s - y,
            LossSpec::Huber { delta } => -(y - s).clamp(-delta, delta),
        }
    }

    /// ∂²ρ/∂s² (Huber: the one-sided value at the kink is taken as 1).
    #[inline]
    pub fn second_derivative(&self, s: f64, y: f64) -> f64 {
        match *self {
            LossSpec::Logistic => {
                let _ = y;
                let p = sigmoid(s);
                p * (1.0 - p)
            }
            LossSpec::Quadratic => 1.0,
            LossSpec::Huber { delta } => {
                if (y - s).abs() <= delta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Huber { delta } => write!(f, "huber({delta})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// Accepts `logistic`, `quadratic`, `huber` (δ = 0.1) or `huber:<δ>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "logistic" => Ok(LossSpec::Logistic),
            "quadratic" => Ok(LossSpec::Quadratic),
            "huber" => LossSpec::huber(DEFAULT_HUBER_DELTA),
            other => match other.strip_prefix("huber:") {
                Some(d) => LossSpec::huber(
                    d.parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad huber delta `{d}`")))?,
                ),
                None => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
            },
        }
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn check_args(s: f64, y: f64) -> Result<()> {
    if s.is_nan() || y.is_nan() {
        return Err(Error::InvalidArgument("NaN loss argument".into()));
    }
    if y != 0.0 && y != 1.0 {
        return Err(Error::InvalidArgument(format!("non-binary response {y}")));
    }
    Ok(())
}

/// Checked ρ(s, y).
pub fn loss_value(spec: &LossSpec, s: f64, y: f64) -> Result<f64> {
    check_args(s, y)?;
    Ok(spec.value(s, y))
}

/// Checked ∂ρ/∂s.
pub fn loss_derivative(spec: &LossSpec, s: f64, y: f64) -> Result<f64> {
    check_args(s, y)?;
    Ok(spec.derivative(s, y))
}

/// Mean loss over rows for the given intercept and slope vector.
pub fn empirical_risk(spec: &LossSpec, d: &Dataset, intercept: f64, coefs: &[f64]) -> Result<f64> {
    let eta = d.linear_predictor(intercept, coefs)?;
    Ok(mean_loss(spec, &eta, d.y()))
}

/// Mean loss for precomputed linear predictors.
pub fn mean_loss(spec: &LossSpec, eta: &[f64], y: &[f64]) -> f64 {
    let total: f64 = eta.iter().zip(y).map(|(&s, &yi)| spec.value(s, yi)).sum();
    total / eta.len() as f64
}
