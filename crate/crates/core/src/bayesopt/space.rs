//! Mixed discrete/continuous search spaces and their unit-cube encoding.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    /// Integer literal, then float, then bare text.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            ParamValue::Int(i)
        } else if let Ok(f) = s.parse::<f64>() {
            ParamValue::Float(f)
        } else {
            ParamValue::Text(s.to_string())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Float(f) => Some(f),
            ParamValue::Text(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(v) => write!(f, "{v:?}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dimension {
    Int { lo: i64, hi: i64, step: i64 },
    Choice(Vec<ParamValue>),
    Linear { lo: f64, hi: f64 },
    Log { lo: f64, hi: f64 },
}

impl Dimension {
    pub fn validate(&self) -> Result<()> {
        match self {
            Dimension::Int { lo, hi, step } if lo < hi && *step > 0 => Ok(()),
            Dimension::Choice(v) if !v.is_empty() => Ok(()),
            Dimension::Linear { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => Ok(()),
            Dimension::Log { lo, hi } if *lo > 0.0 && lo < hi && hi.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid search dimension {other}"))),
        }
    }

    /// Number of cells for discrete dimensions.
    pub fn cells(&self) -> Option<usize> {
        match self {
            Dimension::Int { lo, hi, step } => Some(((hi - lo) / step) as usize + 1),
            Dimension::Choice(v) => Some(v.len()),
            _ => None,
        }
    }

    pub fn encode(&self, value: &ParamValue) -> Result<f64> {
        let bad = || Error::Config(format!("value {value} is outside {self}"));
        match self {
            Dimension::Int { lo, step, .. } => {
                let v = match *value {
                    ParamValue::Int(i) => i,
                    ParamValue::Float(f) if f.fract() == 0.0 => f as i64,
                    _ => return Err(bad()),
                };
                if v < *lo || (v - lo) % step != 0 {
                    return Err(bad());
                }
                let i = ((v - lo) / step) as usize;
                let m = self.cells().expect("discrete");
                if i >= m {
                    return Err(bad());
                }
                Ok((i as f64 + 0.5) / m as f64)
            }
            Dimension::Choice(options) => {
                let i = options
                    .iter()
                    .position(|o| o == value || (o.as_f64().is_some() && o.as_f64() == value.as_f64()))
                    .ok_or_else(bad)?;
                Ok((i as f64 + 0.5) / options.len() as f64)
            }
            Dimension::Linear { lo, hi } => {
                let v = value.as_f64().ok_or_else(bad)?;
                if !(*lo..=*hi).contains(&v) {
                    return Err(bad());
                }
                Ok((v - lo) / (hi - lo))
            }
            Dimension::Log { lo, hi } => {
                let v = value.as_f64().ok_or_else(bad)?;
                if !(*lo..=*hi).contains(&v) {
                    return Err(bad());
                }
                Ok((v.ln() - lo.ln()) / (hi.ln() - lo.ln()))
            }
        }
    }

    /// Maps `u` (clamped to `[0, 1]`) back to a value.
    pub fn decode(&self, u: f64) -> ParamValue {
        let u = if u.is_nan() { 0.5 } else { u.clamp(0.0, 1.0) };
        let cell = |m: usize| ((u * m as f64).floor() as usize).min(m - 1);
        match self {
            Dimension::Int { lo, step, .. } => ParamValue::Int(lo + step * cell(self.cells().expect("discrete")) as i64),
            Dimension::Choice(options) => options[cell(options.len())].clone(),
            Dimension::Linear { lo, hi } => ParamValue::Float(if u == 1.0 { *hi } else { lo + u * (hi - lo) }),
            Dimension::Log { lo, hi } => ParamValue::Float(match u {
                0.0 => *lo,
                1.0 => *hi,
                _ => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
            }),
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Int { lo, hi, step } => write!(f, "int({lo},{hi},{step})"),
            Dimension::Choice(v) => {
                let items: Vec<String> = v.iter().map(ToString::to_string).collect();
                write!(f, "choice({})", items.join(","))
            }
            Dimension::Linear { lo, hi } => write!(f, "linear({lo:?},{hi:?})"),
            Dimension::Log { lo, hi } => write!(f, "log({lo:?},{hi:?})"),
        }
    }
}

/// Named parameter values, dimensions first (in space order) then fixed ones.
pub type Assignment = Vec<(String, ParamValue)>;

pub fn lookup<'a>(a: &'a Assignment, name: &str) -> Option<&'a ParamValue> {
    a.iter().find(|(n, _)| n == name).map(|(_, v)| v)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<(String, Dimension)>,
    pub fixed: Vec<(String, ParamValue)>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        let mut names: Vec<&str> = self.dims.iter().map(|d| d.0.as_str()).chain(self.fixed.iter().map(|f| f.0.as_str())).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("search parameter {:?} declared twice", w[0])));
        }
        for (name, d) in &self.dims {
            d.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn encode(&self, config: &Assignment) -> Result<Vec<f64>> {
        self.dims
            .iter()
            .map(|(name, d)| {
                let v = lookup(config, name).ok_or_else(|| Error::Config(format!("configuration lacks {name:?}")))?;
                d.encode(v).map_err(|e| Error::Config(format!("{name}: {e}")))
            })
            .collect()
    }

    pub fn decode(&self, point: &[f64]) -> Result<Assignment> {
        if point.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, space has {} dimensions",
                point.len(),
                self.dims.len()
            )));
        }
        let mut out: Assignment = self.dims.iter().zip(point).map(|((n, d), &u)| (n.clone(), d.decode(u))).collect();
        out.extend(self.fixed.iter().cloned());
        Ok(out)
    }

    /// `encode(decode(point))`: moves discrete coordinates to cell centres.
    pub fn snap(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.encode(&self.decode(point)?)
    }

    /// Parses `int(lo,hi,step)`, `choice(a,b,..)`, `linear(lo,hi)`,
    /// `log(lo,hi)` or `fixed(v)`.
    pub fn parse_entry(text: &str) -> Result<SpecEntry> {
        let t = text.trim();
        let (kind, rest) = t
            .split_once('(')
            .ok_or_else(|| Error::Config(format!("expected kind(args), got {t:?}")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::Config(format!("missing ')' in {t:?}")))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let float = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{s:?} is not a number in {t:?}")))
        };
        let int = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| Error::Config(format!("{s:?} is not an integer in {t:?}")))
        };
        let arity = |n: usize| {
            if parts.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!("{kind} takes {n} arguments, got {}", parts.len())))
            }
        };
        let dim = match kind.trim() {
            "int" => {
                if parts.len() == 2 {
                    Dimension::Int { lo: int(parts[0])?, hi: int(parts[1])?, step: 1 }
                } else {
                    arity(3)?;
                    Dimension::Int {
                        lo: int(parts[0])?,
                        hi: int(parts[1])?,
                        step: int(parts[2])?,
                    }
                }
            }
            "choice" => Dimension::Choice(parts.iter().filter(|p| !p.is_empty()).map(|p| ParamValue::parse(p)).collect()),
            "linear" => {
                arity(2)?;
                Dimension::Linear { lo: float(parts[0])?, hi: float(parts[1])? }
            }
            "log" => {
                arity(2)?;
                Dimension::Log { lo: float(parts[0])?, hi: float(parts[1])? }
            }
            "fixed" => return Ok(SpecEntry::Fixed(ParamValue::parse(args))),
            other => {
                return Err(Error::Config(format!(
                    "unknown dimension kind {other:?}; expected int, choice, linear, log or fixed"
                )))
            }
        };
        dim.validate()?;
        Ok(SpecEntry::Dim(dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpecEntry {
    Dim(Dimension),
    Fixed(ParamValue),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        SearchSpace {
            dims: vec![
                ("units".into(), Dimension::Choice([32, 64, 128, 512].map(ParamValue::Int).to_vec())),
                ("lr".into(), Dimension::Log { lo: 1e-5, hi: 1e-2 }),
                ("layers".into(), Dimension::Int { lo: 1, hi: 6, step: 1 }),
                ("dropout".into(), Dimension::Linear { lo: 0.0, hi: 0.5 }),
            ],
            fixed: vec![("batch".into(), ParamValue::Int(32))],
        }
    }

    #[test]
    fn cell_and_log_fixtures() {
        let s = space();
        let d = &s.dims[0].1;
        assert_eq!(d.encode(&ParamValue::Int(64)).unwrap(), 0.375);
        assert_eq!(d.decode(0.375), ParamValue::Int(64));
        let lr = &s.dims[1].1;
        let mid = lr.decode(0.5).as_f64().unwrap();
        assert!((mid - 10f64.powf(-3.5)).abs() < 1e-15);
        assert!((mid - 3.162e-4).abs() < 1e-7);
        assert!(lr.encode(&ParamValue::Float(0.5)).is_err());
        assert!(s.dims[2].1.encode(&ParamValue::Int(7)).is_err());
    }

    #[test]
    fn fixed_reinserted() {
        let s = space();
        let a = s.decode(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(lookup(&a, "batch"), Some(&ParamValue::Int(32)));
        assert_eq!(s.encode(&a).unwrap().len(), 4);
        let back = s.decode(&s.encode(&a).unwrap()).unwrap();
        assert_eq!(back[0], a[0]);
        assert_eq!(back[2], a[2]);
    }

    #[test]
    fn parse_entries() {
        assert_eq!(
            SearchSpace::parse_entry("int(1, 6, 1)").unwrap(),
            SpecEntry::Dim(Dimension::Int { lo: 1, hi: 6, step: 1 })
        );
        assert_eq!(
            SearchSpace::parse_entry("choice(32,64,128)").unwrap(),
            SpecEntry::Dim(Dimension::Choice(vec![ParamValue::Int(32), ParamValue::Int(64), ParamValue::Int(128)]))
        );
        assert_eq!(
            SearchSpace::parse_entry("log(1e-4,1e-2)").unwrap(),
            SpecEntry::Dim(Dimension::Log { lo: 1e-4, hi: 1e-2 })
        );
        assert_eq!(SearchSpace::parse_entry("fixed(adam)").unwrap(), SpecEntry::Fixed(ParamValue::Text("adam".into())));
        assert!(SearchSpace::parse_entry("linear(1,0)").is_err());
        assert!(SearchSpace::parse_entry("gauss(0,1)").is_err());
        assert!(SearchSpace::parse_entry("log(0,1)").is_err());
    }

    #[test]
    fn display_round_trips() {
        for (_, d) in space().dims {
            assert_eq!(SearchSpace::parse_entry(&d.to_string()).unwrap(), SpecEntry::Dim(d));
        }
    }
}
