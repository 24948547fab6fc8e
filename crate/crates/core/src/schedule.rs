//! Per-layer overlap dimensions.
//!
//! A [`SchedulePolicy`] names how the overlap `o_l` varies with the encoder
//! layer `l` (1-based):
//!
//! * `fixed k` / `fixed half`: the same `o` everywhere (`half` is
//!   `head_dim / 2`, rounded down),
//! * `inc-b (x)`: `o_l = floor((l - 1) / x) + b`,
//! * `dec-b (x)`: the `inc-b (x)` schedule read back to front.

use std::fmt;
use std::str::FromStr;

use crate::error::ScheduleError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixedOverlap {
    Value(usize),
    /// Half the head dimension, rounded down.
    Half,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchedulePolicy {
    Fixed(FixedOverlap),
    Inc { base: u8, period: usize },
    Dec { base: u8, period: usize },
}

impl Default for SchedulePolicy {
    /// Plain multi-head attention.
    fn default() -> Self {
        SchedulePolicy::Fixed(FixedOverlap::Value(0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapSchedule {
    dims: Vec<usize>,
}

impl OverlapSchedule {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn depth(&self) -> usize {
        self.dims.len()
    }

    /// Overlap of 0-based layer `index`.
    pub fn get(&self, index: usize) -> usize {
        self.dims[index]
    }
}

impl fmt::Display for OverlapSchedule {
    /// `(o_1,o_2,...)` with no spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl SchedulePolicy {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            SchedulePolicy::Fixed(_) => Ok(()),
            SchedulePolicy::Inc { base, period } | SchedulePolicy::Dec { base, period } => {
                if base > 1 {
                    return Err(ScheduleError::Invalid(format!(
                        "index base must be 0 or 1, got {base}"
                    )));
                }
                if period == 0 {
                    return Err(ScheduleError::Invalid("period must be at least 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Overlap dimensions for `depth` layers of width `head_dim`.
    pub fn build(&self, depth: usize, head_dim: usize) -> Result<OverlapSchedule, ScheduleError> {
        if depth == 0 || head_dim == 0 {
            return Err(ScheduleError::Invalid(format!(
                "depth and head_dim must be positive (got {depth}, {head_dim})"
            )));
        }
        self.validate()?;
        let inc = |base: u8, period: usize| -> Vec<usize> {
            (1..=depth).map(|l| (l - 1) / period + base as usize).collect()
        };
        let dims = match *self {
            SchedulePolicy::Fixed(FixedOverlap::Value(k)) => vec![k; depth],
            SchedulePolicy::Fixed(FixedOverlap::Half) => vec![head_dim / 2; depth],
            SchedulePolicy::Inc { base, period } => inc(base, period),
            SchedulePolicy::Dec { base, period } => {
                let mut d = inc(base, period);
                d.reverse();
                d
            }
        };
        if let Some((i, &o)) = dims.iter().enumerate().find(|(_, &o)| o > head_dim) {
            return Err(ScheduleError::Overflow {
                layer: i + 1,
                overlap: o,
                head_dim,
            });
        }
        Ok(OverlapSchedule { dims })
    }
}

/// Free-function form of [`SchedulePolicy::build`].
pub fn build_schedule(
    policy: &SchedulePolicy,
    depth: usize,
    head_dim: usize,
) -> Result<OverlapSchedule, ScheduleError> {
    policy.build(depth, head_dim)
}

/// Parses `fixed <k>`, `fixed half` or `<inc|dec>-<0|1> (<x>)`.
///
/// Matching is case-insensitive and whitespace between tokens is optional,
/// so `inc-0(2)` and `INC - 0 ( 2 )` are both accepted.
pub fn parse_policy(name: &str) -> Result<SchedulePolicy, ScheduleError> {
    let err = || ScheduleError::Parse {
        input: name.to_string(),
    };
    let s: String = name
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    if let Some(rest) = s.strip_prefix("fixed") {
        if rest == "half" {
            return Ok(SchedulePolicy::Fixed(FixedOverlap::Half));
        }
        let k = parse_digits(rest).ok_or_else(err)?;
        return Ok(SchedulePolicy::Fixed(FixedOverlap::Value(k)));
    }
    let (is_inc, rest) = if let Some(r) = s.strip_prefix("inc") {
        (true, r)
    } else if let Some(r) = s.strip_prefix("dec") {
        (false, r)
    } else {
        return Err(err());
    };
    let rest = rest.strip_prefix('-').ok_or_else(err)?;
    let (base, rest) = match rest.as_bytes().first() {
        Some(b'0') => (0u8, &rest[1..]),
        Some(b'1') => (1u8, &rest[1..]),
        _ => return Err(err()),
    };
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(err)?;
    let period = parse_digits(inner).filter(|&p| p >= 1).ok_or_else(err)?;
    Ok(if is_inc {
        SchedulePolicy::Inc { base, period }
    } else {
        SchedulePolicy::Dec { base, period }
    })
}

fn parse_digits(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl fmt::Display for SchedulePolicy {
    /// Canonical spelling, accepted back by [`parse_policy`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulePolicy::Fixed(FixedOverlap::Value(k)) => write!(f, "fixed {k}"),
            SchedulePolicy::Fixed(FixedOverlap::Half) => write!(f, "fixed half"),
            SchedulePolicy::Inc { base, period } => write!(f, "inc-{base} ({period})"),
            SchedulePolicy::Dec { base, period } => write!(f, "dec-{base} ({period})"),
        }
    }
}

impl FromStr for SchedulePolicy {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(p: &str, depth: usize, head_dim: usize) -> Vec<usize> {
        parse_policy(p).unwrap().build(depth, head_dim).unwrap().dims().to_vec()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(dims("inc-0 (2)", 12, 16), [0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert_eq!(dims("dec-1 (1)", 12, 16), [12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(dims("fixed 1", 12, 16), [1; 12]);
        assert_eq!(dims("fixed half", 12, 16), [8; 12]);
        assert_eq!(dims("fixed half", 3, 5), [2; 3]);
    }

    #[test]
    fn parse_accepts_grammar_variants() {
        assert_eq!(
            parse_policy("inc-0 (3)").unwrap(),
            SchedulePolicy::Inc { base: 0, period: 3 }
        );
        assert_eq!(
            parse_policy("fixed half").unwrap(),
            SchedulePolicy::Fixed(FixedOverlap::Half)
        );
        assert_eq!(
            parse_policy("  DEC-1(3) ").unwrap(),
            SchedulePolicy::Dec { base: 1, period: 3 }
        );
        assert_eq!(
            parse_policy("Fixed 12").unwrap(),
            SchedulePolicy::Fixed(FixedOverlap::Value(12))
        );
    }

    #[test]
    fn parse_rejects_bad_input() {
        for bad in ["inc-2 (3)", "inc-0 (0)", "inc-0", "fixed", "fixed -1", "dec-1 (x)", "", "mix-0 (1)"] {
            let err = parse_policy(bad).unwrap_err();
            assert!(err.to_string().contains("fixed half"), "{bad}: {err}");
        }
    }

    #[test]
    fn overflow_names_layer() {
        let err = parse_policy("dec-1 (1)").unwrap().build(12, 8).unwrap_err();
        assert_eq!(
            err,
            ScheduleError::Overflow {
                layer: 1,
                overlap: 12,
                head_dim: 8
            }
        );
        assert!(parse_policy("fixed 3").unwrap().build(4, 2).is_err());
    }

    #[test]
    fn dec_reverses_inc_exhaustively() {
        for base in 0..=1u8 {
            for period in 1..=8 {
                for depth in 1..=32 {
                    let inc = SchedulePolicy::Inc { base, period }.build(depth, 64).unwrap();
                    let dec = SchedulePolicy::Dec { base, period }.build(depth, 64).unwrap();
                    let mut r = inc.dims().to_vec();
                    r.reverse();
                    assert_eq!(r, dec.dims());
                }
            }
        }
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut policies = vec![
            SchedulePolicy::Fixed(FixedOverlap::Half),
            SchedulePolicy::Fixed(FixedOverlap::Value(0)),
            SchedulePolicy::Fixed(FixedOverlap::Value(17)),
        ];
        for base in 0..=1 {
            for period in [1, 2, 3, 10] {
                policies.push(SchedulePolicy::Inc { base, period });
                policies.push(SchedulePolicy::Dec { base, period });
            }
        }
        for p in policies {
            assert_eq!(parse_policy(&p.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn display_has_no_spaces() {
        let s = parse_policy("inc-0(2)").unwrap().build(4, 16).unwrap();
        assert_eq!(s.to_string(), "(0,0,1,1)");
    }
}
