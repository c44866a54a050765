//! Group penalty functions `rho_lambda(t)` and their derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FarError, Result};

pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PenaltyFamily {
    Lasso,
    Scad { a: f64 },
}

impl PenaltyFamily {
    pub fn scad() -> Self {
        Self::Scad { a: DEFAULT_SCAD_A }
    }

    pub fn is_lasso(&self) -> bool {
        matches!(self, Self::Lasso)
    }
}

impl FromStr for PenaltyFamily {
    type Err = FarError;

    /// Accepts `lasso`, `scad` and `scad:a=<value>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let family = match s.as_str() {
            "lasso" => Self::Lasso,
            "scad" => Self::scad(),
            _ => {
                let rest = s
                    .strip_prefix("scad:")
                    .ok_or_else(|| FarError::InvalidPenalty(format!("unknown penalty `{s}`")))?;
                let value = rest
                    .strip_prefix("a=")
                    .ok_or_else(|| FarError::InvalidPenalty(format!("expected `scad:a=<value>`, got `{s}`")))?;
                let a: f64 = value
                    .parse()
                    .map_err(|_| FarError::InvalidPenalty(format!("bad SCAD shape `{value}`")))?;
                Self::Scad { a }
            }
        };
        family.validate()?;
        Ok(family)
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lasso => write!(f, "lasso"),
            Self::Scad { a } => write!(f, "scad:a={a}"),
        }
    }
}

impl PenaltyFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::Lasso => Ok(()),
            Self::Scad { a } if a > 2.0 && a.is_finite() => Ok(()),
            Self::Scad { a } => Err(FarError::InvalidPenalty(format!(
                "SCAD shape must exceed 2, got {a}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    #[serde(flatten)]
    pub family: PenaltyFamily,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64) -> Result<Self> {
        family.validate()?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(FarError::InvalidPenalty(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Self { family, lambda })
    }

    pub fn lasso(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Lasso, lambda)
    }

    pub fn scad(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::scad(), lambda)
    }

    /// Same family at a different level.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.family, lambda)
    }

    fn check(t: f64) -> Result<()> {
        if t < 0.0 || t.is_nan() {
            return Err(FarError::InvalidPenalty(format!(
                "penalty argument must be nonnegative, got {t}"
            )));
        }
        Ok(())
    }

    pub fn rho(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        let l = self.lambda;
        Ok(match self.family {
            PenaltyFamily::Lasso => l * t,
            PenaltyFamily::Scad { a } => {
                if t <= l {
                    l * t
                } else if t <= a * l {
                    (2.0 * a * l * t - t * t - l * l) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * l * l / 2.0
                }
            }
        })
    }

    pub fn rho_prime(&self, t: f64) -> Result<f64> {
        Self::check(t)?;
        let l = self.lambda;
        Ok(match self.family {
            PenaltyFamily::Lasso => l,
            PenaltyFamily::Scad { a } => {
                if t <= l {
                    l
                } else if t <= a * l {
                    (a * l - t) / (a - 1.0)
                } else {
                    0.0
                }
            }
        })
    }
}
