//! Importance-weighted bin estimates, per-segment gap ledgers and the
//! interval eviction test.
//!
//! Each active depth keeps one [`GapLedger`] for the replay segment it is
//! currently tracking. The ledger stores running sums of the IPS values of
//! every bin, so the cumulative estimated gap between two bins over
//! `[s1, s2]` is four array reads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{bin_index, bins_at, BinRef};

/// `3 + 7 (e - 1) sqrt(2)`, the eviction constant from the concentration
/// analysis.
pub const C0_DEFAULT: f64 = 3.0 + 7.0 * (std::f64::consts::E - 1.0) * std::f64::consts::SQRT_2;

/// `7 (e - 1) sqrt(2)`, the concentration constant. `C0_DEFAULT - C1` is the
/// factor 3 in the bin-level significant regret threshold.
pub const C1: f64 = 7.0 * (std::f64::consts::E - 1.0) * std::f64::consts::SQRT_2;

/// Importance-weighted estimate of a bin mean from one observation.
pub fn ips_value(reward: f64, prob_in_bin: f64, x_in_bin: bool) -> Result<f64> {
    if prob_in_bin.is_nan() || prob_in_bin <= 0.0 {
        return Err(Error::Invariant(format!(
            "sampling probability {prob_in_bin} is not positive"
        )));
    }
    Ok(if x_in_bin { reward / prob_in_bin } else { 0.0 })
}

/// Constants of the eviction threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionConfig {
    pub c0: f64,
    /// Natural log of the horizon.
    pub log_t: f64,
    /// Multiplier on the concentration term only; the bias term is kept.
    pub constant_scale: f64,
}

impl EvictionConfig {
    pub fn new(c0: f64, log_t: f64, constant_scale: f64) -> Result<Self> {
        for (name, v) in [
            ("c0", c0),
            ("log_t", log_t),
            ("constant_scale", constant_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(EvictionConfig {
            c0,
            log_t,
            constant_scale,
        })
    }

    /// Default constants for horizon `T`. A horizon of 1 has `ln T = 0`, so
    /// the log is floored at `ln 2`.
    pub fn for_horizon(horizon: u64) -> Self {
        EvictionConfig {
            c0: C0_DEFAULT,
            log_t: (horizon.max(2) as f64).ln(),
            constant_scale: 1.0,
        }
    }

    pub fn with_scale(self, constant_scale: f64) -> Result<Self> {
        EvictionConfig::new(self.c0, self.log_t, constant_scale)
    }
}

/// Right-hand side of the eviction rule for an interval of `len = s2 - s1`
/// rounds at depth `depth`.
pub fn eviction_threshold(cfg: &EvictionConfig, depth: u32, len: u64) -> f64 {
    let len = len as f64;
    let bins = (depth as f64).exp2();
    let spread = (len * bins).max(bins * bins);
    cfg.constant_scale * cfg.c0 * cfg.log_t * spread.sqrt() + 4.0 * len / bins
}

/// How interval starts are enumerated by the eviction test.
///
/// The interval end is always the current round. `Exact` tries every start
/// in the segment; `Thinned` tries starts at distances 1, 2, 4, ... from the
/// current round plus the segment start itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    Exact,
    Thinned,
    /// Exact up to depth [`IntervalMode::AUTO_EXACT_DEPTH`], thinned above.
    #[default]
    Auto,
}

impl IntervalMode {
    pub const AUTO_EXACT_DEPTH: u32 = 3;

    pub fn is_exact_at(self, depth: u32) -> bool {
        match self {
            IntervalMode::Exact => true,
            IntervalMode::Thinned => false,
            IntervalMode::Auto => depth <= Self::AUTO_EXACT_DEPTH,
        }
    }

    /// Candidate interval starts `s1` with `segment_start <= s1 < t`, in
    /// increasing order.
    pub fn candidates(self, depth: u32, segment_start: u64, t: u64) -> Vec<u64> {
        if t <= segment_start {
            return Vec::new();
        }
        if self.is_exact_at(depth) {
            return (segment_start..t).collect();
        }
        let mut out = vec![segment_start];
        let mut dist = 1u64;
        while dist < t - segment_start {
            out.push(t - dist);
            dist <<= 1;
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Proof that a bin satisfies the eviction rule on `[s1, s2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionEvidence {
    pub bin: BinRef,
    /// Alive bin with the largest estimated cumulative reward on the interval.
    pub rival: BinRef,
    pub s1: u64,
    pub s2: u64,
    /// `sum_{t=s1}^{s2} (mu_hat_t(rival) - mu_hat_t(bin))`.
    pub statistic: f64,
    pub threshold: f64,
}

/// Running IPS sums of every bin at one depth over one tracking segment.
#[derive(Debug, Clone)]
pub struct GapLedger {
    depth: u32,
    segment_start: u64,
    /// `prefix[k][j]` is the sum of the first `j` IPS values of bin `k`;
    /// `prefix[k][0] == 0`.
    prefix: Vec<Vec<f64>>,
    alive: Vec<bool>,
    died_at: Vec<Option<u64>>,
    rounds: u64,
}

impl GapLedger {
    pub fn new(depth: u32, segment_start: u64) -> Self {
        let n = bins_at(depth) as usize;
        GapLedger {
            depth,
            segment_start,
            prefix: vec![vec![0.0]; n],
            alive: vec![true; n],
            died_at: vec![None; n],
            rounds: 0,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn segment_start(&self) -> u64 {
        self.segment_start
    }

    /// Last recorded round, if any.
    pub fn current_round(&self) -> Option<u64> {
        (self.rounds > 0).then(|| self.segment_start + self.rounds - 1)
    }

    pub fn is_alive(&self, index: u64) -> bool {
        self.alive.get(index as usize).copied().unwrap_or(false)
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Running sums of bin `index`, one entry per recorded round.
    pub fn prefix(&self, index: u64) -> &[f64] {
        &self.prefix[index as usize][1..]
    }

    /// Appends one round. `probs[k]` must be the exact probability that the
    /// arm lands in bin `k`, for every alive `k`.
    pub fn record_round(&mut self, round: u64, x: f64, reward: f64, probs: &[f64]) -> Result<()> {
        let expected = self.segment_start + self.rounds;
        if round != expected {
            return Err(Error::Sequencing(format!(
                "ledger at depth {} expected round {expected}, got {round}",
                self.depth
            )));
        }
        if probs.len() != self.alive.len() {
            return Err(Error::Invariant(format!(
                "{} probabilities for {} bins",
                probs.len(),
                self.alive.len()
            )));
        }
        let hit = bin_index(x.clamp(0.0, 1.0), self.depth) as usize;
        for (k, sums) in self.prefix.iter_mut().enumerate() {
            if !self.alive[k] {
                continue;
            }
            let v = ips_value(reward, probs[k], k == hit)?;
            let last = *sums.last().expect("prefix starts with 0");
            sums.push(last + v);
        }
        self.rounds += 1;
        Ok(())
    }

    /// Marks bin `index` dead at the end of `round`; its sums stop there.
    pub fn kill(&mut self, index: u64, round: u64) {
        let k = index as usize;
        if self.alive[k] {
            self.alive[k] = false;
            self.died_at[k] = Some(round);
        }
    }

    /// Sum of IPS values of bin `k` over `[s1, s2]`, unchecked.
    #[inline]
    fn window(&self, k: usize, s1: u64, s2: u64) -> f64 {
        let p = &self.prefix[k];
        p[(s2 - self.segment_start + 1) as usize] - p[(s1 - self.segment_start) as usize]
    }

    fn check_window(&self, index: u64, s1: u64, s2: u64) -> Result<()> {
        let last = self
            .current_round()
            .ok_or_else(|| Error::Query("ledger is empty".into()))?;
        if s1 < self.segment_start || s1 > s2 || s2 > last {
            return Err(Error::Query(format!(
                "interval [{s1}, {s2}] outside recorded rounds [{}, {last}]",
                self.segment_start
            )));
        }
        let k = index as usize;
        if k >= self.alive.len() {
            return Err(Error::Query(format!("bin index {index} out of range")));
        }
        if let Some(died) = self.died_at[k] {
            if s2 > died {
                return Err(Error::Query(format!(
                    "bin {index} at depth {} died at round {died}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    /// `sum_{t=s1}^{s2} (mu_hat_t(b_prime) - mu_hat_t(b))`.
    pub fn gap_sum(&self, b_prime: BinRef, b: BinRef, s1: u64, s2: u64) -> Result<f64> {
        for bin in [b_prime, b] {
            if bin.depth != self.depth {
                return Err(Error::Query(format!(
                    "{bin} is not at ledger depth {}",
                    self.depth
                )));
            }
            self.check_window(bin.index, s1, s2)?;
        }
        if b_prime == b {
            return Ok(0.0);
        }
        Ok(self.window(b_prime.index as usize, s1, s2) - self.window(b.index as usize, s1, s2))
    }

    /// For each candidate start, the alive bin with the largest IPS sum over
    /// `[s1, t]`, and that sum.
    fn running_maxima(&self, t: u64, candidate_s1: &[u64]) -> Vec<(usize, f64)> {
        candidate_s1
            .iter()
            .map(|&s1| {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for k in (0..self.alive.len()).filter(|&k| self.alive[k]) {
                    let v = self.window(k, s1, t);
                    if v > best.1 {
                        best = (k, v);
                    }
                }
                best
            })
            .collect()
    }

    fn valid_candidates(&self, t: u64, candidate_s1: &[u64]) -> Result<Vec<u64>> {
        if self.current_round() != Some(t) {
            return Err(Error::Query(format!(
                "eviction check at round {t} but ledger is at {:?}",
                self.current_round()
            )));
        }
        Ok(candidate_s1
            .iter()
            .copied()
            .filter(|&s1| s1 >= self.segment_start && s1 < t)
            .collect())
    }

    fn best_evidence(
        &self,
        k: usize,
        t: u64,
        cfg: &EvictionConfig,
        starts: &[u64],
        maxima: &[(usize, f64)],
    ) -> Option<EvictionEvidence> {
        let mut best: Option<EvictionEvidence> = None;
        for (&s1, &(rival, top)) in starts.iter().zip(maxima) {
            let statistic = top - self.window(k, s1, t);
            let threshold = eviction_threshold(cfg, self.depth, t - s1);
            if statistic > threshold {
                let margin = statistic - threshold;
                if best.is_none_or(|b| margin > b.statistic - b.threshold) {
                    best = Some(EvictionEvidence {
                        bin: BinRef {
                            depth: self.depth,
                            index: k as u64,
                        },
                        rival: BinRef {
                            depth: self.depth,
                            index: rival as u64,
                        },
                        s1,
                        s2: t,
                        statistic,
                        threshold,
                    });
                }
            }
        }
        best
    }

    /// Every alive bin that satisfies the eviction rule at round `t` for
    /// some candidate start, with its strongest evidence.
    pub fn evictable(
        &self,
        t: u64,
        cfg: &EvictionConfig,
        candidate_s1: &[u64],
    ) -> Result<Vec<EvictionEvidence>> {
        let starts = self.valid_candidates(t, candidate_s1)?;
        if starts.is_empty() || self.alive_count() < 2 {
            return Ok(Vec::new());
        }
        let maxima = self.running_maxima(t, &starts);
        Ok((0..self.alive.len())
            .filter(|&k| self.alive[k])
            .filter_map(|k| self.best_evidence(k, t, cfg, &starts, &maxima))
            .collect())
    }
}

/// Single-bin form of [`GapLedger::evictable`].
pub fn eviction_check(
    ledger: &GapLedger,
    b: BinRef,
    t: u64,
    cfg: &EvictionConfig,
    candidate_s1: &[u64],
) -> Result<Option<EvictionEvidence>> {
    if b.depth != ledger.depth || !ledger.is_alive(b.index) {
        return Err(Error::Query(format!("{b} is not alive in this ledger")));
    }
    let starts = ledger.valid_candidates(t, candidate_s1)?;
    if starts.is_empty() {
        return Ok(None);
    }
    let maxima = ledger.running_maxima(t, &starts);
    Ok(ledger.best_evidence(b.index as usize, t, cfg, &starts, &maxima))
}
