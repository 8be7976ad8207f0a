//! Replay scheduling and the live set of active depths and bins.
//!
//! Every block of depth `m` draws all of its replay triggers up front: a
//! replay at depth `d < m` may start `o` rounds into the block only when
//! `8^d` divides `o`, and does so with probability `sqrt(8^d / o)`. The
//! triggers never change afterwards, so the schedule is independent of
//! anything observed during the block.

use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::partition::{bins_at, BinRef};

/// `8^d`, the length of a replay at depth `d` and of block `d`.
pub fn replay_len(depth: u32) -> u64 {
    1u64 << (3 * depth)
}

/// Probability that a depth-`d` replay starts at round `s` of the block that
/// started at `block_start`.
pub fn replay_probability(s: u64, block_start: u64, depth: u32) -> Result<f64> {
    if s <= block_start {
        return Err(Error::Input(format!(
            "round {s} is not after block start {block_start}"
        )));
    }
    let offset = s - block_start;
    let period = replay_len(depth);
    if !offset.is_multiple_of(period) {
        return Ok(0.0);
    }
    Ok((period as f64 / offset as f64).sqrt().min(1.0))
}

/// Triggers `R_{s,d} = 1` of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplaySchedule {
    block_start: u64,
    block_depth: u32,
    triggers: BTreeSet<(u64, u32)>,
}

impl ReplaySchedule {
    pub fn block_start(&self) -> u64 {
        self.block_start
    }

    pub fn block_depth(&self) -> u32 {
        self.block_depth
    }

    /// All `(round, depth)` triggers in round order.
    pub fn triggers(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.triggers.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    /// Depths whose replay starts at round `t`, shallowest first.
    pub fn triggered_at(&self, t: u64) -> impl Iterator<Item = u32> + '_ {
        self.triggers.range((t, 0)..=(t, u32::MAX)).map(|&(_, d)| d)
    }

    pub fn count_at_depth(&self, depth: u32) -> usize {
        self.triggers.iter().filter(|&&(_, d)| d == depth).count()
    }
}

/// Draws the replay triggers of block `m` starting at `block_start`.
///
/// Eligible rounds are offsets `1..8^m` (the round at offset `8^m` already
/// belongs to the next block) and depths `1..m`. Draws happen in order of
/// offset, then depth, one uniform per eligible pair.
pub fn draw_schedule<R: Rng + ?Sized>(block_start: u64, m: u32, rng: &mut R) -> ReplaySchedule {
    let mut triggers = BTreeSet::new();
    let block_len = replay_len(m);
    for depth in 1..m {
        let period = replay_len(depth);
        let mut offset = period;
        while offset < block_len {
            let p = (period as f64 / offset as f64).sqrt().min(1.0);
            if rng.random::<f64>() < p {
                triggers.insert((block_start + offset, depth));
            }
            offset += period;
        }
    }
    ReplaySchedule {
        block_start,
        block_depth: m,
        triggers,
    }
}

/// Membership flags for the bins at one depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinSet {
    flags: Vec<bool>,
    count: usize,
}

impl BinSet {
    pub fn full(depth: u32) -> Self {
        let n = bins_at(depth) as usize;
        BinSet {
            flags: vec![true; n],
            count: n,
        }
    }

    pub fn empty(depth: u32) -> Self {
        BinSet {
            flags: vec![false; bins_at(depth) as usize],
            count: 0,
        }
    }

    pub fn contains(&self, index: u64) -> bool {
        self.flags.get(index as usize).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, index: u64) {
        let f = &mut self.flags[index as usize];
        if !*f {
            *f = true;
            self.count += 1;
        }
    }

    pub fn remove(&mut self, index: u64) -> bool {
        let f = &mut self.flags[index as usize];
        let was = *f;
        if was {
            *f = false;
            self.count -= 1;
        }
        was
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn capacity(&self) -> usize {
        self.flags.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(k, _)| k as u64)
    }

    pub fn is_subset(&self, other: &BinSet) -> bool {
        self.iter().all(|k| other.contains(k))
    }
}

/// Depth changes applied by [`ActiveState::step`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub starts: Vec<u32>,
    pub ends: Vec<u32>,
}

/// Bins removed by one eviction, per depth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Removal {
    pub removed: Vec<(u32, Vec<u64>)>,
    /// Coarse depths left with no active bin; they are deactivated.
    pub emptied: Vec<u32>,
}

/// Active depths `D_t`, active bins `B_t(d)` and the MASTER set of the
/// current block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveState {
    block_depth: u32,
    bins: BTreeMap<u32, BinSet>,
    master: BinSet,
    replay_start: BTreeMap<u32, u64>,
    replay_end: BTreeMap<u32, u64>,
}

impl ActiveState {
    /// State at the first round of block `m`: only depth `m` is active and
    /// every bin at that depth is in MASTER.
    pub fn new_block(m: u32, t: u64) -> Self {
        let mut bins = BTreeMap::new();
        bins.insert(m, BinSet::full(m));
        ActiveState {
            block_depth: m,
            bins,
            master: BinSet::full(m),
            replay_start: BTreeMap::from([(m, t)]),
            replay_end: BTreeMap::from([(m, t + replay_len(m))]),
        }
    }

    pub fn block_depth(&self) -> u32 {
        self.block_depth
    }

    /// Active depths in increasing order.
    pub fn active_depths(&self) -> impl Iterator<Item = u32> + '_ {
        self.bins.keys().copied()
    }

    pub fn is_active(&self, depth: u32) -> bool {
        self.bins.contains_key(&depth)
    }

    pub fn min_depth(&self) -> Option<u32> {
        self.bins.keys().next().copied()
    }

    pub fn bins(&self, depth: u32) -> Option<&BinSet> {
        self.bins.get(&depth)
    }

    pub fn master(&self) -> &BinSet {
        &self.master
    }

    pub fn replay_start(&self, depth: u32) -> Option<u64> {
        self.replay_start.get(&depth).copied()
    }

    pub fn replay_end(&self, depth: u32) -> Option<u64> {
        self.replay_end.get(&depth).copied()
    }

    /// Starts a replay at `depth` in round `t`: all bins active, ending at
    /// `t + 8^depth`. Restarting a running replay resets it.
    pub fn start_replay(&mut self, depth: u32, t: u64) -> Result<()> {
        if depth == 0 || depth >= self.block_depth {
            return Err(Error::Input(format!(
                "replay depth {depth} outside 1..{}",
                self.block_depth
            )));
        }
        self.bins.insert(depth, BinSet::full(depth));
        self.replay_start.insert(depth, t);
        self.replay_end.insert(depth, t + replay_len(depth));
        Ok(())
    }

    fn end_replay(&mut self, depth: u32) {
        self.bins.remove(&depth);
        self.replay_start.remove(&depth);
        self.replay_end.remove(&depth);
    }

    /// Applies the triggers of round `t`, then the replays ending at `t`.
    pub fn step(&mut self, sched: &ReplaySchedule, t: u64) -> StepOutcome {
        let mut out = StepOutcome::default();
        for depth in sched.triggered_at(t) {
            if depth >= 1 && depth < self.block_depth {
                self.start_replay(depth, t).expect("depth checked");
                out.starts.push(depth);
            }
        }
        let ending: Vec<u32> = self
            .replay_end
            .iter()
            .filter(|&(&d, &end)| d != self.block_depth && end == t)
            .map(|(&d, _)| d)
            .collect();
        for depth in ending {
            self.end_replay(depth);
            out.ends.push(depth);
        }
        out
    }

    /// Removes `bin` and its descendants at every active depth in
    /// `[bin.depth, m]`, and from MASTER. Coarse depths left empty are
    /// deactivated; depth `m` stays active even when empty.
    pub fn evict_subtree(&mut self, bin: BinRef) -> Removal {
        let mut removal = Removal::default();
        let depths: Vec<u32> = self
            .bins
            .keys()
            .copied()
            .filter(|&d| d >= bin.depth && d <= self.block_depth)
            .collect();
        for d in depths {
            let set = self.bins.get_mut(&d).expect("active depth");
            let range = if d == bin.depth {
                bin.index..bin.index + 1
            } else {
                bin.children_range(d).expect("deeper depth")
            };
            let gone: Vec<u64> = range.filter(|&k| set.remove(k)).collect();
            if d == self.block_depth {
                for &k in &gone {
                    self.master.remove(k);
                }
            }
            if set.is_empty() && d != self.block_depth {
                removal.emptied.push(d);
            }
            if !gone.is_empty() {
                removal.removed.push((d, gone));
            }
        }
        for &d in &removal.emptied {
            self.end_replay(d);
        }
        removal
    }
}
