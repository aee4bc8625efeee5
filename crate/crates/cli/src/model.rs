//! Score models for the `mc` and `coverage` commands.

use std::fmt;
use std::str::FromStr;

use cpsize::baseline::ScoreLaw;

/// `synthetic:m:a:b`, `uniform:low:high`, `exponential:rate` or `constant:c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Synthetic { m: usize, a: f64, b: f64 },
    Law(ScoreLaw),
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64, String> {
            parts
                .get(i)
                .ok_or_else(|| format!("model {s:?} is missing a parameter"))?
                .parse::<f64>()
                .map_err(|_| format!("model {s:?} has a non-numeric parameter"))
        };
        let arity = |n: usize| {
            if parts.len() == n + 1 {
                Ok(())
            } else {
                Err(format!("model {s:?} takes {n} parameter(s)"))
            }
        };
        match parts[0] {
            "synthetic" => {
                arity(3)?;
                let m = parts[1]
                    .parse::<usize>()
                    .map_err(|_| format!("model {s:?}: m must be a positive integer"))?;
                Ok(ModelSpec::Synthetic { m, a: num(2)?, b: num(3)? })
            }
            "uniform" => {
                arity(2)?;
                let (low, high) = (num(1)?, num(2)?);
                if !(low < high) {
                    return Err(format!("model {s:?}: need low < high"));
                }
                Ok(ModelSpec::Law(ScoreLaw::Uniform { low, high }))
            }
            "exponential" => {
                arity(1)?;
                let rate = num(1)?;
                if !(rate > 0.0) {
                    return Err(format!("model {s:?}: rate must be positive"));
                }
                Ok(ModelSpec::Law(ScoreLaw::Exponential { rate }))
            }
            "constant" => {
                arity(1)?;
                Ok(ModelSpec::Law(ScoreLaw::Constant(num(1)?)))
            }
            other => Err(format!(
                "unknown model {other:?} (expected synthetic, uniform, exponential or constant)"
            )),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ModelSpec::Synthetic { m, a, b } => write!(f, "synthetic:{m}:{a}:{b}"),
            ModelSpec::Law(ScoreLaw::Uniform { low, high }) => write!(f, "uniform:{low}:{high}"),
            ModelSpec::Law(ScoreLaw::Exponential { rate }) => write!(f, "exponential:{rate}"),
            ModelSpec::Law(ScoreLaw::Constant(c)) => write!(f, "constant:{c}"),
        }
    }
}
