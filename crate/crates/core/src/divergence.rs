//! f-divergence generators.
//!
//! Every DICE loss in this crate goes through the nonnegative convex conjugate
//!
//! ```text
//! f*₀(y) = max_{x ≥ 0} x·y − f(x)
//! ```
//!
//! whose maximiser is `x* = max(0, (f')⁻¹(y))`, which is also `(f*₀)'(y)`.
//! [`FGenerator`] bundles `f`, `f'`, `(f')⁻¹`, `f*₀` and its first two
//! derivatives for the four generators used by the solvers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `f(x) = ½(x − 1)²`
    Chi2,
    /// `f(x) = x² − x`
    SqlChi2,
    /// `f(x) = x log x`
    Kl,
    /// `½(x − 1)²` for `x ≥ 1`, `x log x − x + 1` below.
    SoftChi2,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 4] =
        [GeneratorKind::Chi2, GeneratorKind::SqlChi2, GeneratorKind::Kl, GeneratorKind::SoftChi2];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Chi2 => "chi2",
            GeneratorKind::SqlChi2 => "sql_chi2",
            GeneratorKind::Kl => "kl",
            GeneratorKind::SoftChi2 => "soft_chi2",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown f-divergence generator '{s}'")))
    }
}

/// An f-divergence generator together with every derived quantity the
/// solvers need. Immutable and `Copy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FGenerator {
    kind: GeneratorKind,
}

pub fn make_generator(name: &str) -> Result<FGenerator> {
    Ok(FGenerator::new(name.parse()?))
}

fn clamped_exp(y: f64) -> f64 {
    y.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

impl FGenerator {
    pub const fn new(kind: GeneratorKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// `f(x)` for `x ≥ 0`; `x = 0` uses the documented limit values.
    pub fn f(&self, x: f64) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 => 0.5 * (x - 1.0).powi(2),
            GeneratorKind::SqlChi2 => x * x - x,
            GeneratorKind::Kl => {
                if x <= 0.0 {
                    0.0
                } else {
                    x * x.ln()
                }
            }
            GeneratorKind::SoftChi2 => {
                if x >= 1.0 {
                    0.5 * (x - 1.0).powi(2)
                } else if x <= 0.0 {
                    1.0
                } else {
                    x * x.ln() - x + 1.0
                }
            }
        }
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 => x - 1.0,
            GeneratorKind::SqlChi2 => 2.0 * x - 1.0,
            GeneratorKind::Kl => x.ln() + 1.0,
            GeneratorKind::SoftChi2 => {
                if x >= 1.0 {
                    x - 1.0
                } else {
                    x.ln()
                }
            }
        }
    }

    pub fn f_prime_inverse(&self, y: f64) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 => y + 1.0,
            GeneratorKind::SqlChi2 => 0.5 * (y + 1.0),
            GeneratorKind::Kl => clamped_exp(y - 1.0),
            GeneratorKind::SoftChi2 => {
                if y >= 0.0 {
                    y + 1.0
                } else {
                    clamped_exp(y)
                }
            }
        }
    }

    /// Infimum of the range of `f'` on `(0, ∞)`; below it `x* = 0`.
    pub fn f_prime_at_zero_plus(&self) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 | GeneratorKind::SqlChi2 => -1.0,
            GeneratorKind::Kl | GeneratorKind::SoftChi2 => f64::NEG_INFINITY,
        }
    }

    /// `f*₀(y) = max_{x ≥ 0} x·y − f(x)`.
    pub fn f_star0(&self, y: f64) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 => {
                if y >= -1.0 {
                    0.5 * y * y + y
                } else {
                    -0.5
                }
            }
            GeneratorKind::SqlChi2 => {
                if y >= -1.0 {
                    0.25 * (1.0 + y).powi(2)
                } else {
                    0.0
                }
            }
            GeneratorKind::Kl => clamped_exp(y - 1.0),
            GeneratorKind::SoftChi2 => {
                if y >= 0.0 {
                    0.5 * y * y + y
                } else {
                    clamped_exp(y) - 1.0
                }
            }
        }
    }

    /// `(f*₀)'(y) = max(0, (f')⁻¹(y))`.
    pub fn f_star0_prime(&self, y: f64) -> f64 {
        self.f_prime_inverse(y).max(0.0)
    }

    /// Second derivative of `f*₀`, i.e. `1 / f''(x*)` where the maximiser is
    /// interior and zero where it is clamped at 0.
    pub fn f_star0_second(&self, y: f64) -> f64 {
        match self.kind {
            GeneratorKind::Chi2 => {
                if y > -1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            GeneratorKind::SqlChi2 => {
                if y > -1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            GeneratorKind::Kl => clamped_exp(y - 1.0),
            GeneratorKind::SoftChi2 => {
                if y >= 0.0 {
                    1.0
                } else {
                    clamped_exp(y)
                }
            }
        }
    }

    /// Whether evaluating the exponential branches at `y` hits the clamp.
    pub fn saturates(&self, y: f64) -> bool {
        match self.kind {
            GeneratorKind::Kl => (y - 1.0).abs() > EXP_CLAMP,
            GeneratorKind::SoftChi2 => y < -EXP_CLAMP,
            GeneratorKind::Chi2 | GeneratorKind::SqlChi2 => false,
        }
    }

    /// Maximiser of `x·y − f(x)` over `x ≥ 0`.
    pub fn conjugate_argmax(&self, y: f64) -> f64 {
        self.f_star0_prime(y)
    }
}

impl fmt::Display for FGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FGenerator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        make_generator(s)
    }
}

/// Largest violation of `f*₀(y) = x*·y − f(x*)` with `x* = max(0, (f')⁻¹(y))`
/// over the grid.
pub fn conjugate_pair_check(g: &FGenerator, y_grid: &[f64]) -> f64 {
    y_grid
        .iter()
        .map(|&y| {
            let x = g.conjugate_argmax(y);
            (g.f_star0(y) - (x * y - g.f(x))).abs()
        })
        .fold(0.0, f64::max)
}
