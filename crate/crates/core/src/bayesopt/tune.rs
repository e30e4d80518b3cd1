//! The sequential tuning loop and its resumable trial log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::acquisition::{propose_next, shifted_halton};
use super::gp::gp_fit;
use super::kernel::KernelKind;
use super::space::{Assignment, ParamValue, SearchSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Ok,
    Failed,
}

impl TrialStatus {
    fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// 1-based.
    pub trial: usize,
    pub point: Vec<f64>,
    pub config: Assignment,
    /// Objective value; for failed trials, the penalty.
    pub loss: f64,
    pub seconds: f64,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub budget: usize,
    /// Quasi-random trials before the GP takes over; `None` means
    /// `max(5, d + 1)`.
    pub init: Option<usize>,
    pub kernel: KernelKind,
    pub noise_floor: f64,
    pub seed: u64,
    /// CSV trial log, appended per trial and resumed if present.
    pub log_path: Option<PathBuf>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            budget: 30,
            init: None,
            kernel: KernelKind::Matern52,
            noise_floor: 1e-6,
            seed: 0,
            log_path: None,
        }
    }
}

impl TuneConfig {
    pub fn init_trials(&self, dim: usize) -> usize {
        self.init.unwrap_or(5.max(dim + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

/// Loss of every trial as seen by the surrogate: failed trials are
/// reassessed against the worst successful loss so the GP stays finite.
fn surrogate_targets(trials: &[TrialRecord]) -> Vec<f64> {
    let worst_ok = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .map(|t| t.loss)
        .fold(f64::NEG_INFINITY, f64::max);
    trials
        .iter()
        .map(|t| match t.status {
            TrialStatus::Ok => t.loss,
            TrialStatus::Failed if worst_ok.is_finite() => t.loss.max(worst_ok + 1.0),
            TrialStatus::Failed => t.loss,
        })
        .collect()
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Minimizes `objective` over `space`. Errors and non-finite values from
/// the objective mark the trial failed with penalty `worst + 1`.
pub fn tune<F>(space: &SearchSpace, cfg: &TuneConfig, mut objective: F) -> Result<TuneResult>
where
    F: FnMut(&Assignment, usize) -> Result<f64>,
{
    space.validate()?;
    let d = space.dim();
    let init = cfg.init_trials(d).min(cfg.budget);
    if init < 2 || cfg.budget < init {
        return Err(Error::Config(format!(
            "tuning needs budget >= init >= 2, got budget {} and init {init}",
            cfg.budget
        )));
    }
    let mut trials = match &cfg.log_path {
        Some(p) if p.exists() => TrialLog::read(p, space)?,
        _ => Vec::new(),
    };
    let mut log = match &cfg.log_path {
        Some(p) => Some(TrialLog::open(p, space, !trials.is_empty())?),
        None => None,
    };
    let init_shift: Vec<f64> = {
        let mut r = trial_rng(cfg.seed, 0);
        (0..d).map(|_| r.random::<f64>()).collect()
    };
    let init_points = shifted_halton(1, init, &init_shift);

    while trials.len() < cfg.budget {
        let t = trials.len() + 1;
        let point = if t <= init {
            space.snap(&init_points[t - 1])?
        } else {
            if trials.iter().all(|r| r.status == TrialStatus::Failed) {
                return Err(Error::Tuning(format!("all {} initial trials failed", trials.len())));
            }
            let x: Vec<Vec<f64>> = trials.iter().map(|r| r.point.clone()).collect();
            let model = gp_fit(&x, &surrogate_targets(&trials), cfg.kernel, cfg.noise_floor)?;
            propose_next(&model, space, &mut trial_rng(cfg.seed, t))?.point
        };
        let config = space.decode(&point)?;
        let started = Instant::now();
        let outcome = objective(&config, t);
        let seconds = started.elapsed().as_secs_f64();
        let (loss, status) = match outcome {
            Ok(v) if v.is_finite() => (v, TrialStatus::Ok),
            _ => {
                let worst = trials.iter().map(|r| r.loss).fold(0.0f64, f64::max);
                (worst + 1.0, TrialStatus::Failed)
            }
        };
        let record = TrialRecord {
            trial: t,
            point,
            config,
            loss,
            seconds,
            status,
        };
        if let Some(log) = log.as_mut() {
            log.append(&record, space)?;
        }
        trials.push(record);
    }
    let best = trials
        .iter()
        .filter(|r| r.status == TrialStatus::Ok)
        .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.trial.cmp(&b.trial)))
        .cloned()
        .ok_or_else(|| Error::Tuning(format!("all {} trials failed", trials.len())))?;
    Ok(TuneResult { best, trials })
}

/// Best-so-far loss after each trial.
pub fn best_so_far(trials: &[TrialRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trials
        .iter()
        .map(|t| {
            if t.status == TrialStatus::Ok {
                best = best.min(t.loss);
            }
            best
        })
        .collect()
}

/// `trial,status,loss,seconds,<dimension names>` CSV.
pub struct TrialLog {
    path: PathBuf,
    file: File,
}

impl TrialLog {
    pub fn header(space: &SearchSpace) -> String {
        let mut cols = vec!["trial", "status", "loss", "seconds"];
        cols.extend(space.dims.iter().map(|d| d.0.as_str()));
        cols.join(",")
    }

    fn open(path: &Path, space: &SearchSpace, resume: bool) -> Result<Self> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !resume {
            writeln!(file, "{}", Self::header(space)).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn append(&mut self, r: &TrialRecord, space: &SearchSpace) -> Result<()> {
        let mut row = format!("{},{},{:?},{:?}", r.trial, r.status.as_str(), r.loss, r.seconds);
        for (name, _) in &space.dims {
            let v = super::space::lookup(&r.config, name).expect("decoded configs carry every dimension");
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(self.file, "{row}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// Reads a log written for `space`.
    pub fn read(path: &Path, space: &SearchSpace) -> Result<Vec<TrialRecord>> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = Self::header(space);
        if lines.next().map(str::trim) != Some(header.as_str()) {
            return Err(Error::Tuning(format!(
                "{}: header does not match the search space (expected {header:?})",
                path.display()
            )));
        }
        let mut out = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |why: String| Error::Tuning(format!("{} line {}: {why}", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 + space.dim() {
                return Err(bad(format!("expected {} fields", 4 + space.dim())));
            }
            let trial: usize = f[0].parse().map_err(|_| bad("bad trial index".into()))?;
            if trial != out.len() + 1 {
                return Err(bad(format!("trial {trial} out of sequence")));
            }
            let status = match f[1] {
                "ok" => TrialStatus::Ok,
                "failed" => TrialStatus::Failed,
                s => return Err(bad(format!("unknown status {s:?}"))),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
            let loss = num(f[2])?;
            let seconds = num(f[3])?;
            let mut config: Assignment = space
                .dims
                .iter()
                .zip(&f[4..])
                .map(|((n, _), v)| (n.clone(), ParamValue::parse(v)))
                .collect();
            let point = space.encode(&config).map_err(|e| bad(e.to_string()))?;
            config.extend(space.fixed.iter().cloned());
            out.push(TrialRecord {
                trial,
                point,
                config,
                loss,
                seconds,
                status,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::space::Dimension;

    fn unit_space() -> SearchSpace {
        SearchSpace {
            dims: vec![("x".into(), Dimension::Linear { lo: 0.0, hi: 1.0 })],
            fixed: vec![],
        }
    }

    fn x_of(a: &Assignment) -> f64 {
        a[0].1.as_f64().unwrap()
    }

    #[test]
    fn budget_equal_to_init_is_random_search() {
        let cfg = TuneConfig {
            budget: 5,
            seed: 3,
            ..TuneConfig::default()
        };
        let res = tune(&unit_space(), &cfg, |a, _| Ok((x_of(a) - 0.3).powi(2))).unwrap();
        assert_eq!(res.trials.len(), 5);
        let min = res.trials.iter().map(|t| t.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(res.best.loss, min);
    }

    #[test]
    fn failures_get_penalty() {
        let cfg = TuneConfig {
            budget: 8,
            seed: 1,
            ..TuneConfig::default()
        };
        let res = tune(&unit_space(), &cfg, |a, t| {
            if t == 3 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(x_of(a))
            }
        })
        .unwrap();
        let failed = &res.trials[2];
        assert_eq!(failed.status, TrialStatus::Failed);
        let worst = res.trials[..2].iter().map(|t| t.loss).fold(0.0, f64::max);
        assert_eq!(failed.loss, worst + 1.0);
        assert!(res.trials.iter().all(|t| t.loss.is_finite()));
        let bsf = best_so_far(&res.trials);
        assert!(bsf.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn all_failing_init_is_an_error() {
        let cfg = TuneConfig {
            budget: 7,
            ..TuneConfig::default()
        };
        let err = tune(&unit_space(), &cfg, |_, _| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Tuning(_)));
    }

    #[test]
    fn log_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let full_path = dir.path().join("full.csv");
        let part_path = dir.path().join("part.csv");
        let f = |a: &Assignment, _: usize| Ok((x_of(a) - 0.3).powi(2));
        let cfg = |budget, path: &Path| TuneConfig {
            budget,
            seed: 11,
            log_path: Some(path.to_path_buf()),
            ..TuneConfig::default()
        };
        let full = tune(&unit_space(), &cfg(9, &full_path), f).unwrap();
        tune(&unit_space(), &cfg(6, &part_path), f).unwrap();
        let resumed = tune(&unit_space(), &cfg(9, &part_path), f).unwrap();
        for (a, b) in full.trials.iter().zip(&resumed.trials) {
            assert_eq!((a.trial, &a.point, a.loss), (b.trial, &b.point, b.loss));
        }
        let strip = |p: &Path| -> Vec<String> {
            fs::read_to_string(p)
                .unwrap()
                .lines()
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    format!("{},{},{},{}", f[0], f[1], f[2], f[4])
                })
                .collect()
        };
        assert_eq!(strip(&full_path), strip(&part_path));
    }
}
