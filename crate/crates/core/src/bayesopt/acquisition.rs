//! Expected improvement and its maximization over the search space.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;

use super::gp::GpModel;
use super::space::SearchSpace;
use crate::error::Result;

pub const CANDIDATES: usize = 2048;
pub const REFINE_PASSES: usize = 16;
pub const REFINE_STARTS: usize = 8;
const DUPLICATE_TOL: f64 = 1e-9;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `σ(γΦ(γ) + φ(γ))` with `γ = (f_best − mean)/σ`, for minimization.
/// Negative variance is treated as zero.
pub fn expected_improvement(mean: f64, variance: f64, f_best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    if sigma < 1e-12 {
        return 0.0;
    }
    let g = (f_best - mean) / sigma;
    (sigma * (g * normal_cdf(g) + normal_pdf(g))).max(0.0)
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn nth_prime(k: usize) -> u64 {
    if k < PRIMES.len() {
        return PRIMES[k];
    }
    let mut found = PRIMES.len();
    let mut c = PRIMES[PRIMES.len() - 1];
    loop {
        c += 2;
        if (3..).step_by(2).take_while(|p| p * p <= c).all(|p| c % p != 0) {
            if found == k {
                return c;
            }
            found += 1;
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton points `start..start+count` in `dim` dimensions, each coordinate
/// rotated by `shift` modulo 1.
pub fn shifted_halton(start: u64, count: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    let bases: Vec<u64> = (0..shift.len()).map(nth_prime).collect();
    (0..count as u64)
        .map(|i| {
            bases
                .iter()
                .zip(shift)
                .map(|(&b, &s)| (radical_inverse(start + i, b) + s).fract())
                .collect()
        })
        .collect()
}

fn is_duplicate(p: &[f64], observed: &[Vec<f64>]) -> bool {
    observed
        .iter()
        .any(|o| o.iter().zip(p).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
}

/// A candidate and its acquisition value.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub point: Vec<f64>,
    pub ei: f64,
}

/// Maximizes EI over `space`: a shifted Halton sweep of [`CANDIDATES`]
/// points, then [`REFINE_PASSES`] coordinate passes from the best
/// [`REFINE_STARTS`]. Candidates are snapped to discrete cells; points
/// already observed are skipped unless nothing else is available.
pub fn propose_next<R: Rng + ?Sized>(model: &GpModel, space: &SearchSpace, rng: &mut R) -> Result<Proposal> {
    let d = space.dim();
    let observed = model.points();
    let f_best = model.targets().iter().copied().fold(f64::INFINITY, f64::min);
    let score = |p: &[f64]| -> Result<f64> {
        let (m, v) = model.posterior(p)?;
        Ok(expected_improvement(m, v, f_best))
    };
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut pool: Vec<Proposal> = Vec::with_capacity(CANDIDATES);
    let mut fallback: Option<Proposal> = None;
    for raw in shifted_halton(1, CANDIDATES, &shift) {
        let point = space.snap(&raw)?;
        let ei = score(&point)?;
        let cand = Proposal { point, ei };
        if is_duplicate(&cand.point, observed) {
            if fallback.as_ref().is_none_or(|f| cand.ei > f.ei) {
                fallback = Some(cand);
            }
            continue;
        }
        if !pool.iter().any(|q| q.point == cand.point) {
            pool.push(cand);
        }
    }
    if pool.is_empty() {
        return Ok(fallback.expect("candidate sweep is non-empty"));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].ei.total_cmp(&pool[a].ei).then(a.cmp(&b)));
    let mut best = pool[order[0]].clone();
    for &start in order.iter().take(REFINE_STARTS) {
        let mut cur = pool[start].clone();
        let mut step = 0.25;
        for _ in 0..REFINE_PASSES {
            for (c, (_, dim)) in space.dims.iter().enumerate() {
                let delta = dim.cells().map_or(step, |m| 1.0 / m as f64);
                for dir in [1.0, -1.0] {
                    let mut p = cur.point.clone();
                    p[c] = (p[c] + dir * delta).clamp(0.0, 1.0);
                    let p = space.snap(&p)?;
                    if p == cur.point || is_duplicate(&p, observed) {
                        continue;
                    }
                    let ei = score(&p)?;
                    if ei > cur.ei {
                        cur = Proposal { point: p, ei };
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if cur.ei > best.ei {
            best = cur;
        }
    }
    Ok(best)
}
