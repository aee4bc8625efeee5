//! Multiplicative factors `#_R(r)`: the density that turns label-space
//! measure into score-space measure.
//!
//! Analytic families carry closed-form antiderivatives so that integrals
//! against step functions are exact. Scorers whose factor has no closed form
//! (LAC, CQR, APS) are tagged [`FactorSpec::Unknown`] and go through the
//! score-matrix estimators instead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FactorSpec {
    /// `|M(x) - y|`: constant factor 2.
    L1,
    /// `|M(x) - y|^p` for scalar labels.
    Lp { p: f64 },
    /// `||M(x) - y||_p^p` for labels in `R^m`.
    LpHighDim { p: f64, m: u32 },
    /// `1{M(x) != y}` over `num_labels` classes.
    ZeroOne { num_labels: u32 },
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Continuous,
    /// Atoms at the integer points of `[lower, upper]`.
    DiscreteAtoms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorSupport {
    pub lower: f64,
    pub upper: f64,
    pub kind: MeasureKind,
}

impl FactorSupport {
    pub fn is_bounded(&self) -> bool {
        self.upper.is_finite()
    }
}

impl FactorSpec {
    pub fn lp(p: f64) -> Result<Self> {
        check_p(p)?;
        Ok(if p == 1.0 {
            FactorSpec::L1
        } else {
            FactorSpec::Lp { p }
        })
    }

    pub fn lp_high_dim(p: f64, m: u32) -> Result<Self> {
        check_p(p)?;
        if m == 0 {
            return Err(Error::domain("label dimension m must be at least 1"));
        }
        Ok(FactorSpec::LpHighDim { p, m })
    }

    pub fn zero_one(num_labels: u32) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::domain(format!(
                "zero-one factor needs at least 2 labels, got {num_labels}"
            )));
        }
        Ok(FactorSpec::ZeroOne { num_labels })
    }

    /// Checks the invariants a hand-built value might violate.
    pub fn validate(&self) -> Result<()> {
        match *self {
            FactorSpec::Lp { p } => check_p(p),
            FactorSpec::LpHighDim { p, m } => Self::lp_high_dim(p, m).map(|_| ()),
            FactorSpec::ZeroOne { num_labels } => Self::zero_one(num_labels).map(|_| ()),
            FactorSpec::L1 | FactorSpec::Unknown => Ok(()),
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, FactorSpec::Unknown)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, FactorSpec::ZeroOne { .. })
    }

    pub fn support(&self) -> FactorSupport {
        match self {
            FactorSpec::L1 | FactorSpec::Lp { .. } | FactorSpec::LpHighDim { .. } => {
                FactorSupport {
                    lower: 0.0,
                    upper: f64::INFINITY,
                    kind: MeasureKind::Continuous,
                }
            }
            FactorSpec::ZeroOne { .. } => FactorSupport {
                lower: 0.0,
                upper: 1.0,
                kind: MeasureKind::DiscreteAtoms,
            },
            FactorSpec::Unknown => FactorSupport {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                kind: MeasureKind::Continuous,
            },
        }
    }

    /// Atoms and their weights for discrete factors.
    pub fn atoms(&self) -> Result<Vec<(f64, f64)>> {
        match *self {
            FactorSpec::ZeroOne { num_labels } => {
                Ok(vec![(0.0, 1.0), (1.0, f64::from(num_labels) - 1.0)])
            }
            ref other => Err(Error::unsupported(format!(
                "factor {other} has no atoms"
            ))),
        }
    }

    /// `(2 Γ(1/p + 1))^m / Γ(m/p + 1)`: volume of the unit `l_p` ball in `R^m`.
    fn ball_volume(p: f64, m: u32) -> f64 {
        let mf = f64::from(m);
        let top = mf / p + 1.0;
        if top < 150.0 {
            (2.0 * gamma_product(1.0 / p + 1.0)).powi(m as i32) / gamma_product(top)
        } else {
            (mf * (2.0f64.ln() + ln_gamma(1.0 / p + 1.0)) - ln_gamma(top)).exp()
        }
    }

    /// `#_R(r)`.
    pub fn value(&self, r: f64) -> Result<f64> {
        match *self {
            FactorSpec::Unknown => Err(Error::unsupported(
                "the unknown factor has no pointwise value",
            )),
            FactorSpec::ZeroOne { num_labels } => {
                if r == 0.0 {
                    Ok(1.0)
                } else if r == 1.0 {
                    Ok(f64::from(num_labels) - 1.0)
                } else {
                    Err(Error::domain(format!(
                        "zero-one factor is supported on {{0, 1}}, got r={r}"
                    )))
                }
            }
            _ => {
                check_nonnegative(r)?;
                Ok(match *self {
                    FactorSpec::L1 => 2.0,
                    FactorSpec::Lp { p } => 2.0 * r.powf(1.0 / p - 1.0) / p,
                    FactorSpec::LpHighDim { p, m } => {
                        let mp = f64::from(m) / p;
                        Self::ball_volume(p, m) * mp * r.powf(mp - 1.0)
                    }
                    _ => unreachable!(),
                })
            }
        }
    }

    /// `F(r) = ∫_0^r #_R(s) ds` for the continuous analytic families.
    pub fn antiderivative(&self, r: f64) -> Result<f64> {
        match *self {
            FactorSpec::L1 => check_nonnegative(r).map(|_| 2.0 * r),
            FactorSpec::Lp { p } => check_nonnegative(r).map(|_| 2.0 * r.powf(1.0 / p)),
            FactorSpec::LpHighDim { p, m } => check_nonnegative(r)
                .map(|_| Self::ball_volume(p, m) * r.powf(f64::from(m) / p)),
            ref other => Err(Error::unsupported(format!(
                "factor {other} has no continuous antiderivative"
            ))),
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::domain(format!("l_p exponent must be >= 1, got {p}")));
    }
    Ok(())
}

fn check_nonnegative(r: f64) -> Result<()> {
    if !(r >= 0.0) {
        return Err(Error::domain(format!(
            "score {r} lies outside the support [0, inf)"
        )));
    }
    Ok(())
}

impl fmt::Display for FactorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorSpec::L1 => write!(f, "l1"),
            FactorSpec::Lp { p } => write!(f, "lp:{p}"),
            FactorSpec::LpHighDim { p, m } => write!(f, "lp:{p}:{m}"),
            FactorSpec::ZeroOne { num_labels } => write!(f, "zero-one:{num_labels}"),
            FactorSpec::Unknown => write!(f, "unknown"),
        }
    }
}

impl FromStr for FactorSpec {
    type Err = Error;

    /// Parses `l1`, `lp:<p>`, `lp:<p>:<m>`, `zero-one:<L>` or `unknown`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::domain(format!("unrecognized factor spec {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["l1"] => Ok(FactorSpec::L1),
            ["unknown"] => Ok(FactorSpec::Unknown),
            ["lp", p] => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                check_p(p)?;
                Ok(FactorSpec::Lp { p })
            }
            ["lp", p, m] => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                let m: u32 = m.parse().map_err(|_| bad())?;
                FactorSpec::lp_high_dim(p, m)
            }
            ["zero-one", l] => FactorSpec::zero_one(l.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

/// `Γ(x)` for `0 < x < 150`, multiplied out at integers and half-integers so
/// that `p = 1` and `p = 2` stay exact to rounding.
fn gamma_product(x: f64) -> f64 {
    let twice = 2.0 * x;
    if twice.fract() != 0.0 || x < 0.5 {
        return gamma(x);
    }
    let (mut acc, mut y) = if x.fract() == 0.0 {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while y < x {
        acc *= y;
        y += 1.0;
    }
    acc
}
