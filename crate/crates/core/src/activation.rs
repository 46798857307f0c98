//! Pointwise nonlinearities and their derivatives.

use serde::{Deserialize, Serialize};

use crate::extreme_stats::normal::{normal_cdf, normal_pdf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Exact GELU `x Φ(x)`.
    Gelu,
    Silu,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Relu, Self::Gelu, Self::Silu, Self::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Gelu => "gelu",
            Self::Silu => "silu",
            Self::Tanh => "tanh",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Gelu => x * normal_cdf(x),
            Self::Silu => x * sigmoid(x),
            Self::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Gelu => normal_cdf(x) + x * normal_pdf(x),
            Self::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Self::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    /// `E[φ(z)]` for `z ~ N(0, 1)` when a closed form exists.
    pub fn gaussian_mean(self) -> Option<f64> {
        match self {
            Self::Relu => Some(1.0 / (2.0 * std::f64::consts::PI).sqrt()),
            Self::Gelu => Some(0.5 / std::f64::consts::PI.sqrt()),
            Self::Tanh => Some(0.0),
            Self::Silu => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown activation `{s}` (relu|gelu|silu|tanh)"))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
