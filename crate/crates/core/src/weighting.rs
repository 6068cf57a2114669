//! Temporal weighting schemes.
//!
//! A scheme assigns weights `a_i(t)`, `i = 1..=t`, on the simplex to the
//! samples seen so far. Both supported schemes admit an exact two-term
//! recursion `fbar_{t+1} = old * fbar_t + new * f_{t+1}`, which is what the
//! streaming accumulators use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal weight rule.
///
/// Serialized as `{kind = "uniform"}` or `{kind = "discounted", gamma = 0.7}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme", into = "RawScheme")]
pub enum WeightScheme {
    /// `a_i(t) = 1/t`.
    Uniform,
    /// `a_i(t) = (1 - gamma) gamma^(t-i) / (1 - gamma^t)`, `0 < gamma < 1`.
    Discounted { gamma: f64 },
}

/// Wire form of [`WeightScheme`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

impl TryFrom<RawScheme> for WeightScheme {
    type Error = String;

    fn try_from(raw: RawScheme) -> std::result::Result<Self, String> {
        match (raw.kind.as_str(), raw.gamma) {
            ("uniform", None) => Ok(WeightScheme::Uniform),
            ("uniform", Some(_)) => Err("uniform scheme takes no gamma".into()),
            ("discounted", Some(g)) => WeightScheme::discounted(g).map_err(|e| e.to_string()),
            ("discounted", None) => Err("discounted scheme requires gamma".into()),
            (k, _) => Err(format!("unknown scheme kind '{k}' (expected uniform or discounted)")),
        }
    }
}

impl From<WeightScheme> for RawScheme {
    fn from(s: WeightScheme) -> Self {
        match s {
            WeightScheme::Uniform => RawScheme { kind: "uniform".into(), gamma: None },
            WeightScheme::Discounted { gamma } => RawScheme { kind: "discounted".into(), gamma: Some(gamma) },
        }
    }
}

impl WeightScheme {
    pub fn discounted(gamma: f64) -> Result<Self> {
        let s = WeightScheme::Discounted { gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Uniform => Ok(()),
            WeightScheme::Discounted { gamma } => {
                if gamma.is_finite() && gamma > 0.0 && gamma < 1.0 {
                    Ok(())
                } else {
                    Err(Error::param(format!(
                        "discount factor must lie in (0, 1), got {gamma}"
                    )))
                }
            }
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            WeightScheme::Uniform => None,
            WeightScheme::Discounted { gamma } => Some(gamma),
        }
    }

    /// Short tag used in file names, e.g. `uniform` or `discounted-g0.7`.
    pub fn tag(&self) -> String {
        match *self {
            WeightScheme::Uniform => "uniform".to_string(),
            WeightScheme::Discounted { gamma } => format!("discounted-g{gamma}"),
        }
    }

    /// Closed-form weight vector `(a_1(t), ..., a_t(t))`.
    pub fn weights(&self, t: usize) -> Result<Vec<f64>> {
        if t < 1 {
            return Err(Error::param("weights are defined for t >= 1"));
        }
        self.validate()?;
        Ok(match *self {
            WeightScheme::Uniform => vec![1.0 / t as f64; t],
            WeightScheme::Discounted { gamma } => {
                let norm = (1.0 - gamma) / (1.0 - gamma.powi(t as i32));
                (1..=t)
                    .map(|i| norm * gamma.powi((t - i) as i32))
                    .collect()
            }
        })
    }

    /// Coefficients `(old, new)` of the transition `t -> t+1`.
    ///
    /// `t = 0` yields `(0, 1)` for both schemes: the first sample takes the
    /// whole weight.
    pub fn recursion_coefficients(&self, t: usize) -> (f64, f64) {
        match *self {
            WeightScheme::Uniform => {
                let tf = t as f64;
                (tf / (tf + 1.0), 1.0 / (tf + 1.0))
            }
            WeightScheme::Discounted { gamma } => {
                let gt = gamma.powi(t as i32);
                discounted_coefficients(gamma, gt)
            }
        }
    }
}

// old = gamma (1 - gamma^t) / (1 - gamma^(t+1)) is taken as 1 - new, which
// is the same quantity and keeps the pair on the simplex to rounding.
fn discounted_coefficients(gamma: f64, gamma_pow_t: f64) -> (f64, f64) {
    let new = (1.0 - gamma) / (1.0 - gamma * gamma_pow_t);
    (1.0 - new, new)
}

/// Steps through the recursion coefficients of a scheme, carrying `gamma^t`
/// forward instead of re-exponentiating.
///
/// `gamma^t` is re-anchored by direct exponentiation every
/// [`WeightCursor::REANCHOR_EVERY`] steps.
#[derive(Debug, Clone)]
pub struct WeightCursor {
    scheme: WeightScheme,
    t: usize,
    gamma_pow_t: f64,
}

impl WeightCursor {
    pub const REANCHOR_EVERY: usize = 1000;

    /// Cursor positioned at `t = 1` (one sample absorbed).
    pub fn new(scheme: WeightScheme) -> Result<Self> {
        scheme.validate()?;
        Ok(WeightCursor {
            scheme,
            t: 1,
            gamma_pow_t: scheme.gamma().unwrap_or(0.0),
        })
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Coefficients for `t -> t+1`, then moves to `t+1`.
    pub fn advance(&mut self) -> (f64, f64) {
        let coeffs = match self.scheme {
            WeightScheme::Uniform => self.scheme.recursion_coefficients(self.t),
            WeightScheme::Discounted { gamma } => {
                let c = discounted_coefficients(gamma, self.gamma_pow_t);
                let next = self.t + 1;
                self.gamma_pow_t = if next.is_multiple_of(Self::REANCHOR_EVERY) {
                    gamma.powf(next as f64)
                } else {
                    self.gamma_pow_t * gamma
                };
                c
            }
        };
        self.t += 1;
        coeffs
    }
}
