//! Per-epoch metrics and their CSV form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TrainError};

pub const CSV_HEADER: &str = "epoch,split,loss,acc,lr,wall_seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    /// Mean cross-entropy (no label smoothing).
    pub loss: f64,
    /// Top-1 accuracy in `[0, 1]`.
    pub acc: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    /// CSV row; floats use Rust's shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.acc, self.lr, self.wall_seconds
        )
    }
}

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Parses a metrics file. Errors name the 1-based line.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((n, h)) => {
            return Err(TrainError::Format(format!(
                "line {}: expected header {CSV_HEADER:?}, got {h:?}",
                n + 1
            )))
        }
        None => return Err(TrainError::Format("line 1: empty metrics file".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let err = |what: &str| TrainError::Format(format!("line {}: {what} in {line:?}", n + 1));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(err(&format!("expected 6 fields, found {}", f.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            f[i].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(&format!("bad {name}")))
        };
        let rec = MetricsRecord {
            epoch: f[0].parse().map_err(|_| err("bad epoch"))?,
            split: f[1].parse().map_err(|e: String| err(&e))?,
            loss: num(2, "loss")?,
            acc: num(3, "acc")?,
            lr: num(4, "lr")?,
            wall_seconds: num(5, "wall_seconds")?,
        };
        if !(0.0..=1.0).contains(&rec.acc) {
            return Err(err("accuracy outside [0, 1]"));
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(TrainError::Format("line 2: metrics file has a header but no records".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let recs = vec![
            MetricsRecord {
                epoch: 1,
                split: Split::Train,
                loss: std::f64::consts::LN_10,
                acc: 0.1,
                lr: 1e-4,
                wall_seconds: 0.0,
            },
            MetricsRecord {
                epoch: 1,
                split: Split::Val,
                loss: 2.25,
                acc: 0.125,
                lr: 1e-4,
                wall_seconds: 0.0,
            },
        ];
        let text = to_csv(&recs);
        assert!(text.starts_with("epoch,split,loss,acc,lr,wall_seconds\n1,train,"));
        assert_eq!(parse_csv(&text).unwrap(), recs);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_csv("epoch,split,loss,acc,lr,wall_seconds\n1,train,0.5,0.5,0.1,0\n2,test,0.5,0.5,0.1,0\n")
            .unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(parse_csv(&format!("{CSV_HEADER}\n")).is_err());
        assert!(parse_csv("").is_err());
    }
}
