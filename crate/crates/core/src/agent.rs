//! The MDBE policy: episodes of doubling blocks, hierarchical sampling over
//! the active depths, and eviction propagation.
//!
//! A round is driven by two calls. [`Agent::select`] runs the block and
//! replay bookkeeping for round `t` and draws the arm; [`Agent::observe`]
//! feeds the reward to every active ledger, applies evictions and reports
//! what happened during the round.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{EvictionConfig, EvictionEvidence, GapLedger, IntervalMode};
use crate::partition::{bins_at, BinRef};
use crate::scheduler::{draw_schedule, replay_len, ActiveState, ReplaySchedule};

/// Anything the harness can run: MDBE or a baseline.
pub trait Agent {
    fn name(&self) -> &str;

    fn horizon(&self) -> u64;

    /// Arm to play at round `t`. Rounds start at 1 and advance by one.
    fn select(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<f64>;

    /// Reward for the arm returned by the last `select`.
    fn observe(&mut self, t: u64, x: f64, reward: f64) -> Result<Vec<Event>>;
}

/// Why a replay stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Expired,
    /// Every bin at the depth was evicted.
    Emptied,
}

/// Something that happened during one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    BlockStart {
        episode: u64,
        block: u32,
        /// Rounds the block may last, capped by the horizon.
        len: u64,
    },
    ReplayStart {
        depth: u32,
        end: u64,
    },
    ReplayEnd {
        depth: u32,
        reason: EndReason,
    },
    Eviction {
        evidence: EvictionEvidence,
        /// Bins left in MASTER after the eviction.
        master_left: usize,
    },
    EpisodeRestart {
        episode: u64,
        next_round: u64,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::BlockStart { .. } => "block_start",
            Event::ReplayStart { .. } => "replay_start",
            Event::ReplayEnd { .. } => "replay_end",
            Event::Eviction { .. } => "eviction",
            Event::EpisodeRestart { .. } => "episode_restart",
        }
    }

    /// The event body without its kind tag.
    pub fn payload(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("events serialize");
        v.get_mut("payload")
            .map(serde_json::Value::take)
            .unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub horizon: u64,
    pub eviction: EvictionConfig,
    pub seed: u64,
    #[serde(default)]
    pub interval_mode: IntervalMode,
}

impl AgentConfig {
    /// Default constants for `horizon`, concentration term scaled by
    /// `constant_scale`.
    pub fn new(horizon: u64, constant_scale: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(AgentConfig {
            horizon,
            eviction: EvictionConfig::for_horizon(horizon).with_scale(constant_scale)?,
            seed: 0,
            interval_mode: IntervalMode::default(),
        })
    }

    pub fn with_interval_mode(mut self, mode: IntervalMode) -> Self {
        self.interval_mode = mode;
        self
    }
}

/// Exact `P(x_t in B)` for every bin at every active depth, indexed by depth
/// then bin index. Inactive bins get 0.
///
/// Sampling picks a uniform active bin at the shallowest depth, then walks
/// down through the deeper active depths choosing a uniform active child,
/// stopping early when the current bin has none. Each bin's probability is
/// its parent's divided by the parent's number of active children.
pub fn bin_probabilities(active: &ActiveState) -> Result<BTreeMap<u32, Vec<f64>>> {
    let depths: Vec<u32> = active.active_depths().collect();
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let Some(&dmin) = depths.first() else {
        return Err(Error::Invariant("no active depth".into()));
    };
    let top = active.bins(dmin).expect("active depth");
    if top.is_empty() {
        return Err(Error::Invariant(format!("no active bin at depth {dmin}")));
    }
    let mut probs = vec![0.0; bins_at(dmin) as usize];
    let share = 1.0 / top.len() as f64;
    for k in top.iter() {
        probs[k as usize] = share;
    }
    out.insert(dmin, probs);
    for pair in depths.windows(2) {
        let (coarse, fine) = (pair[0], pair[1]);
        let set = active.bins(fine).expect("active depth");
        let mut probs = vec![0.0; bins_at(fine) as usize];
        for (k, &p) in out[&coarse].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let parent = BinRef {
                depth: coarse,
                index: k as u64,
            };
            let kids: Vec<u64> = parent
                .children_range(fine)
                .expect("finer depth")
                .filter(|&c| set.contains(c))
                .collect();
            for &c in &kids {
                probs[c as usize] = p / kids.len() as f64;
            }
        }
        for k in set.iter() {
            if probs[k as usize] <= 0.0 {
                return Err(Error::Invariant(format!(
                    "active bin B[{fine},{k}] is unreachable by sampling"
                )));
            }
        }
        out.insert(fine, probs);
    }
    Ok(out)
}

/// Draws an arm from the hierarchical sampling distribution of `active`.
pub fn sample_arm(active: &ActiveState, rng: &mut dyn RngCore) -> Result<f64> {
    let mut depths = active.active_depths();
    let dmin = depths
        .next()
        .ok_or_else(|| Error::Invariant("no active depth".into()))?;
    let top: Vec<u64> = active.bins(dmin).expect("active depth").iter().collect();
    if top.is_empty() {
        return Err(Error::Invariant(format!("no active bin at depth {dmin}")));
    }
    let mut bin = BinRef {
        depth: dmin,
        index: top[rng.random_range(0..top.len())],
    };
    for d in depths {
        let set = active.bins(d).expect("active depth");
        let kids: Vec<u64> = bin
            .children_range(d)
            .expect("finer depth")
            .filter(|&c| set.contains(c))
            .collect();
        if kids.is_empty() {
            break;
        }
        bin = BinRef {
            depth: d,
            index: kids[rng.random_range(0..kids.len())],
        };
    }
    Ok(bin.lo() + rng.random::<f64>() * bin.width())
}

/// State of the running episode and block.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    episode: u64,
    block: u32,
    block_start: u64,
    /// First round after the block.
    block_end: u64,
    active: ActiveState,
    ledgers: BTreeMap<u32, GapLedger>,
    schedule: ReplaySchedule,
}

impl EpisodeState {
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn block(&self) -> u32 {
        self.block
    }

    pub fn block_start(&self) -> u64 {
        self.block_start
    }

    pub fn block_end(&self) -> u64 {
        self.block_end
    }

    pub fn active(&self) -> &ActiveState {
        &self.active
    }

    pub fn ledger(&self, depth: u32) -> Option<&GapLedger> {
        self.ledgers.get(&depth)
    }

    pub fn schedule(&self) -> &ReplaySchedule {
        &self.schedule
    }
}

#[derive(Debug, Clone)]
struct Pending {
    t: u64,
    x: f64,
    probs: BTreeMap<u32, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Mdbe {
    config: AgentConfig,
    state: Option<EpisodeState>,
    next_episode: u64,
    next_round: u64,
    restart_pending: bool,
    pending: Option<Pending>,
    events: Vec<Event>,
}

impl Mdbe {
    pub fn new(config: AgentConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(Mdbe {
            config,
            state: None,
            next_episode: 1,
            next_round: 1,
            restart_pending: false,
            pending: None,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    /// `None` before the first round and between a MASTER wipe-out and the
    /// next round.
    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    /// Arm and exact bin probabilities for round `t`.
    pub fn select_arm(
        &mut self,
        t: u64,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, &BTreeMap<u32, Vec<f64>>)> {
        if t != self.next_round || self.pending.is_some() {
            return Err(Error::Sequencing(format!(
                "select at round {t}, expected {}",
                self.next_round
            )));
        }
        if t > self.config.horizon {
            return Err(Error::Sequencing(format!(
                "round {t} beyond horizon {}",
                self.config.horizon
            )));
        }
        self.begin_round(t, rng);
        let state = self.state.as_ref().expect("block running");
        let probs = bin_probabilities(&state.active)?;
        let x = sample_arm(&state.active, rng)?;
        let pending = self.pending.insert(Pending { t, x, probs });
        Ok((x, &pending.probs))
    }

    /// One full round with the reward supplied by `reward`.
    pub fn run_step(
        &mut self,
        t: u64,
        reward: impl FnOnce(f64) -> f64,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Event>> {
        let (x, _) = self.select_arm(t, rng)?;
        let y = reward(x);
        self.observe(t, x, y)
    }

    fn begin_block(&mut self, t: u64, rng: &mut dyn RngCore) {
        let (episode, block) = match &self.state {
            Some(s) if !self.restart_pending => (s.episode, s.block + 1),
            _ => {
                let e = self.next_episode;
                self.next_episode += 1;
                (e, 1)
            }
        };
        self.restart_pending = false;
        let len = replay_len(block).min(self.config.horizon - t + 1);
        let schedule = draw_schedule(t, block, rng);
        let ledgers = BTreeMap::from([(block, GapLedger::new(block, t))]);
        self.state = Some(EpisodeState {
            episode,
            block,
            block_start: t,
            block_end: t + len,
            active: ActiveState::new_block(block, t),
            ledgers,
            schedule,
        });
        self.events.push(Event::BlockStart {
            episode,
            block,
            len,
        });
    }

    fn begin_round(&mut self, t: u64, rng: &mut dyn RngCore) {
        let block_over = self.state.as_ref().is_none_or(|s| t >= s.block_end);
        if block_over || self.restart_pending {
            self.begin_block(t, rng);
        }
        let state = self.state.as_mut().expect("block running");
        let outcome = state.active.step(&state.schedule, t);
        for &d in &outcome.starts {
            state.ledgers.insert(d, GapLedger::new(d, t));
            self.events.push(Event::ReplayStart {
                depth: d,
                end: t + replay_len(d),
            });
        }
        for &d in &outcome.ends {
            state.ledgers.remove(&d);
            self.events.push(Event::ReplayEnd {
                depth: d,
                reason: EndReason::Expired,
            });
        }
    }

    fn apply_evictions(&mut self, t: u64) -> Result<()> {
        let state = self.state.as_mut().expect("block running");
        let depths: Vec<u32> = state.active.active_depths().collect();
        for d in depths {
            let Some(ledger) = state.ledgers.get(&d) else {
                continue;
            };
            let cands = self
                .config
                .interval_mode
                .candidates(d, ledger.segment_start(), t);
            let found = ledger.evictable(t, &self.config.eviction, &cands)?;
            for evidence in found {
                let removal = state.active.evict_subtree(evidence.bin);
                for (depth, gone) in &removal.removed {
                    if let Some(l) = state.ledgers.get_mut(depth) {
                        for &k in gone {
                            l.kill(k, t);
                        }
                    }
                }
                self.events.push(Event::Eviction {
                    evidence,
                    master_left: state.active.master().len(),
                });
                for &depth in &removal.emptied {
                    state.ledgers.remove(&depth);
                    self.events.push(Event::ReplayEnd {
                        depth,
                        reason: EndReason::Emptied,
                    });
                }
            }
        }
        Ok(())
    }
}

impl Agent for Mdbe {
    fn name(&self) -> &str {
        "mdbe"
    }

    fn horizon(&self) -> u64 {
        self.config.horizon
    }

    fn select(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<f64> {
        self.select_arm(t, rng).map(|(x, _)| x)
    }

    fn observe(&mut self, t: u64, x: f64, reward: f64) -> Result<Vec<Event>> {
        let pending = match self.pending.take() {
            Some(p) if p.t == t && p.x == x => p,
            other => {
                self.pending = other;
                return Err(Error::Sequencing(format!(
                    "observe at round {t} without a matching select"
                )));
            }
        };
        let state = self.state.as_mut().expect("block running");
        for (&d, ledger) in state.ledgers.iter_mut() {
            ledger.record_round(t, x, reward, &pending.probs[&d])?;
        }
        self.apply_evictions(t)?;
        let state = self.state.as_ref().expect("block running");
        if state.active.master().is_empty() {
            self.restart_pending = true;
            self.events.push(Event::EpisodeRestart {
                episode: state.episode,
                next_round: t + 1,
            });
        }
        self.next_round = t + 1;
        Ok(std::mem::take(&mut self.events))
    }
}
