//! Offline ground truth: significant shifts on an arm grid and the classical
//! non-stationarity counts.
//!
//! An arm `x` has significant regret on `[s1, s2]` (with `s1 < s2`) when
//! `sum_{t=s1}^{s2} delta_t(x) >= ln(T) (s2 - s1)^(2/3)`, where `delta_t` is
//! the gap to the exact best mean of round `t`. A phase that began at `tau`
//! ends at the first round by which every arm has such an interval inside
//! `[tau, round]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};

/// Largest `T * arms` the oracle will materialize.
pub const MAX_CELLS: u64 = 10_000_000;

/// Certifying interval of one arm for one shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// 1-based index of the shift this certificate contributes to.
    pub shift: usize,
    pub arm: f64,
    pub s1: u64,
    pub s2: u64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// `tau_0 = 1` followed by every shift round.
    pub taus: Vec<u64>,
    /// Number of significant shifts, `taus.len() - 1`.
    pub phase_count: usize,
    pub grid_size: usize,
    /// Arms actually certified: the grid plus environment breakpoints.
    pub arms: Vec<f64>,
    pub certificates: Vec<Certificate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rounds whose mean function differs from the previous round's.
    #[serde(rename = "L_T")]
    pub changes: u64,
    /// Rounds whose best arm differs from the previous round's.
    #[serde(rename = "S_T")]
    pub best_arm_changes: u64,
    /// Sum over rounds of the sup-norm change of the mean function.
    #[serde(rename = "V_T")]
    pub variation: f64,
}

/// Grid points `k / g` for `k = 0..=g`, merged with `extra` points in
/// `[0, 1]`, sorted and deduplicated.
pub fn arm_set(grid_size: usize, extra: &[f64]) -> Vec<f64> {
    let g = grid_size as f64;
    let mut xs: Vec<f64> = (0..=grid_size).map(|k| k as f64 / g).collect();
    xs.extend(extra.iter().copied().filter(|x| (0.0..=1.0).contains(x)));
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    xs
}

/// Significance threshold exponent.
const EXPONENT: f64 = 2.0 / 3.0;

#[inline]
fn slack(prefix: &[f64], log_t: f64, s1: u64, s2: u64) -> f64 {
    prefix[s2 as usize] - prefix[(s1 - 1) as usize] - log_t * ((s2 - s1) as f64).powf(EXPONENT)
}

/// First `(s1, s2)` with `start <= s1 < s2 <= end` and nonnegative slack,
/// choosing the `s1` of largest slack at the earliest such `s2`.
///
/// `prefix[t]` is the sum of gaps over rounds `1..=t`. For an older start
/// `i` and newer start `j` the slack difference `slack(i) - slack(j)` grows
/// with `s2` because the threshold is concave in the length. So once an
/// older start catches up with a newer one, the newer one is never needed
/// again. The stack keeps starts whose winning ranges of `s2` are disjoint,
/// newest on top with the earliest range; crossing times are found by
/// binary search.
pub fn first_certificate(
    prefix: &[f64],
    log_t: f64,
    start: u64,
    end: u64,
) -> Option<(u64, u64, f64)> {
    let beats = |older: u64, newer: u64, s2: u64| {
        slack(prefix, log_t, older, s2) >= slack(prefix, log_t, newer, s2)
    };
    // First s2 in [lo, end] at which `older` beats `newer`.
    let crossing = |older: u64, newer: u64, lo: u64| -> u64 {
        if !beats(older, newer, end) {
            return u64::MAX;
        }
        let (mut lo, mut hi) = (lo, end);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if beats(older, newer, mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    };
    // (start, round at which the entry below overtakes it)
    let mut stack: Vec<(u64, u64)> = Vec::new();
    for s2 in start + 1..=end {
        while stack.last().is_some_and(|&(_, until)| until <= s2) {
            stack.pop();
        }
        let j = s2 - 1;
        loop {
            match stack.last() {
                None => {
                    stack.push((j, u64::MAX));
                    break;
                }
                Some(&(c, until)) => {
                    let x = crossing(c, j, s2);
                    if x <= s2 {
                        break;
                    }
                    if x >= until {
                        stack.pop();
                        continue;
                    }
                    stack.push((j, x));
                    break;
                }
            }
        }
        let &(best, _) = stack.last().expect("nonempty");
        let v = slack(prefix, log_t, best, s2);
        if v >= 0.0 {
            return Some((best, s2, v + log_t * ((s2 - best) as f64).powf(EXPONENT)));
        }
    }
    None
}

/// Quadratic scan over every `(s1, s2)`; same contract as
/// [`first_certificate`] except ties in `s1` go to the smallest start.
pub fn first_certificate_brute(
    prefix: &[f64],
    log_t: f64,
    start: u64,
    end: u64,
) -> Option<(u64, u64, f64)> {
    for s2 in start + 1..=end {
        let mut best: Option<(u64, f64)> = None;
        for s1 in start..s2 {
            let v = slack(prefix, log_t, s1, s2);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((s1, v));
            }
        }
        if let Some((s1, v)) = best {
            if v >= 0.0 {
                return Some((s1, s2, v + log_t * ((s2 - s1) as f64).powf(EXPONENT)));
            }
        }
    }
    None
}

fn check_size(env: &EnvSpec, arms: usize) -> Result<()> {
    let cells = env.horizon().saturating_mul(arms as u64);
    if cells > MAX_CELLS {
        return Err(Error::Resource(format!(
            "{} rounds x {arms} arms exceeds the limit of {MAX_CELLS} cells",
            env.horizon()
        )));
    }
    Ok(())
}

/// Gap prefix sums of one arm, indexed by round with `prefix[0] = 0`.
fn gap_prefix(env: &EnvSpec, best: &[f64], x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(best.len() + 1);
    let mut acc = 0.0;
    p.push(0.0);
    for (i, &b) in best.iter().enumerate() {
        acc += (b - env.mean(i as u64 + 1, x)).max(0.0);
        p.push(acc);
    }
    p
}

/// Significant shifts of `env`, certified on `grid_size + 1` grid points
/// and the environment's breakpoints.
pub fn significant_shifts(env: &EnvSpec, grid_size: usize) -> Result<ShiftReport> {
    if grid_size < 2 {
        return Err(Error::Input(format!("grid size {grid_size} is below 2")));
    }
    let arms = arm_set(grid_size, &env.arm_breakpoints());
    check_size(env, arms.len())?;
    let horizon = env.horizon();
    let log_t = (horizon.max(2) as f64).ln();
    let best: Vec<f64> = (1..=horizon)
        .into_par_iter()
        .map(|t| env.best_value(t).1)
        .collect();
    let prefixes: Vec<Vec<f64>> = arms
        .par_iter()
        .map(|&x| gap_prefix(env, &best, x))
        .collect();

    let mut taus = vec![1u64];
    let mut certificates = Vec::new();
    loop {
        let start = *taus.last().expect("tau_0");
        let found: Option<Vec<(u64, u64, f64)>> = prefixes
            .par_iter()
            .map(|p| first_certificate(p, log_t, start, horizon))
            .collect();
        let Some(found) = found else { break };
        let tau = found.iter().map(|c| c.1).max().expect("at least one arm");
        let shift = taus.len();
        certificates.extend(
            arms.iter()
                .zip(&found)
                .map(|(&arm, &(s1, s2, regret))| Certificate {
                    shift,
                    arm,
                    s1,
                    s2,
                    regret,
                }),
        );
        taus.push(tau);
        if tau >= horizon {
            break;
        }
    }
    Ok(ShiftReport {
        phase_count: taus.len() - 1,
        taus,
        grid_size,
        arms,
        certificates,
    })
}

/// Change counts and total variation evaluated on the grid, the
/// environment's breakpoints and the knots of both adjacent profiles.
pub fn metrics(env: &EnvSpec, grid_size: usize) -> Result<Metrics> {
    if grid_size < 2 {
        return Err(Error::Input(format!("grid size {grid_size} is below 2")));
    }
    let arms = arm_set(grid_size, &env.arm_breakpoints());
    check_size(env, arms.len())?;
    let horizon = env.horizon();
    let per_round: Vec<(bool, bool, f64)> = (2..=horizon)
        .into_par_iter()
        .map(|t| {
            let (prev, cur) = (env.profile(t - 1), env.profile(t));
            let mut xs = arms.clone();
            xs.extend(prev.knots().iter().chain(cur.knots()).map(|k| k.0));
            let sup = xs
                .iter()
                .map(|&x| (cur.eval(x) - prev.eval(x)).abs())
                .fold(0.0, f64::max);
            let argmax = |f: &dyn Fn(f64) -> f64| {
                let mut best = (0usize, f64::NEG_INFINITY);
                for (i, &x) in arms.iter().enumerate() {
                    let v = f(x);
                    if v > best.1 {
                        best = (i, v);
                    }
                }
                best.0
            };
            let moved = argmax(&|x| cur.eval(x)) != argmax(&|x| prev.eval(x));
            (sup > 0.0, moved, sup)
        })
        .collect();
    Ok(Metrics {
        changes: per_round.iter().filter(|r| r.0).count() as u64,
        best_arm_changes: per_round.iter().filter(|r| r.1).count() as u64,
        variation: per_round.iter().map(|r| r.2).sum(),
    })
}
