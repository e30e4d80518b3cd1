//! Per-epoch learning-curve records and their CSV form.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Equality on everything except wall-clock time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_acc.to_bits() == other.val_acc.to_bits()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        let expected = self.records.len() + 1;
        if r.epoch != expected {
            return Err(Error::Contract(format!(
                "history epoch {} out of sequence, expected {expected}",
                r.epoch
            )));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                format_sig(r.train_loss, 9),
                format_sig(r.train_acc, 9),
                format_sig(r.val_loss, 9),
                format_sig(r.val_acc, 9),
                format_sig(r.seconds, 9),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::Data(format!("history must start with {HISTORY_HEADER:?}")));
        }
        let mut h = Self::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Data(format!("history line {}: malformed row {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            h.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
                seconds: num(f[5])?,
            })?;
        }
        Ok(h)
    }
}

/// Formats `v` with `digits` significant digits in the manner of C's `%g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn format_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
