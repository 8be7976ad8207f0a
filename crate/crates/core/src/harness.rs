//! Seeded runs, multi-seed sweeps and their on-disk formats.
//!
//! Every run owns two ChaCha8 generators seeded with the run's seed: stream
//! 0 drives the agent, stream 1 the reward noise. Replication `i` of a sweep
//! uses seed `base + i` for every agent, so agents face the same noise.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agent::{Agent, AgentConfig, Event, Mdbe};
use crate::baselines::BinningUcb;
use crate::env::{EnvConfig, EnvSpec};
use crate::error::{Error, Result};
use crate::estimation::{EvictionConfig, IntervalMode, C0_DEFAULT};

pub const SCHEMA_VERSION: u32 = 1;

/// Recorded in every run so results can be regenerated elsewhere.
pub const RNG_NAME: &str =
    "chacha8/rand_chacha-0.9/seed_from_u64(seed)/stream0=agent,stream1=noise";

pub const AGENT_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `max(1, T / 1000)`.
pub fn default_stride(horizon: u64) -> u64 {
    (horizon / 1000).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub agent: String,
    /// Digest of the environment config.
    pub env: String,
    pub seed: u64,
    pub rng: String,
    /// `(t, cumulative regret)`, always ending at `t = T`.
    pub checkpoints: Vec<(u64, f64)>,
    pub events: Vec<(u64, Event)>,
    /// Arm of every round, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<f64>>,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn final_regret(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub stride: u64,
    pub record_arms: bool,
}

/// Plays `agent` against `env` for the full horizon.
pub fn run(env: &EnvSpec, agent: &mut dyn Agent, seed: u64, opts: RunOptions) -> Result<RunRecord> {
    let horizon = env.horizon();
    if agent.horizon() != horizon {
        return Err(Error::Config(format!(
            "agent horizon {} differs from environment horizon {horizon}",
            agent.horizon()
        )));
    }
    if opts.stride == 0 {
        return Err(Error::Config("checkpoint stride must be positive".into()));
    }
    let started = Instant::now();
    let mut agent_rng = stream_rng(seed, AGENT_STREAM);
    let mut noise_rng = stream_rng(seed, NOISE_STREAM);
    let mut checkpoints = Vec::with_capacity((horizon / opts.stride) as usize + 1);
    let mut events = Vec::new();
    let mut arms = opts
        .record_arms
        .then(|| Vec::with_capacity(horizon as usize));
    let mut regret = 0.0;
    for t in 1..=horizon {
        let x = agent.select(t, &mut agent_rng)?;
        let y = env.sample_reward(t, x, &mut noise_rng);
        events.extend(agent.observe(t, x, y)?.into_iter().map(|e| (t, e)));
        regret += env.gap(t, x);
        if t % opts.stride == 0 || t == horizon {
            checkpoints.push((t, regret));
        }
        if let Some(a) = arms.as_mut() {
            a.push(x);
        }
    }
    let name = agent.name().to_string();
    Ok(RunRecord {
        run_id: format!("{name}-s{seed}"),
        agent: name,
        env: env.digest(),
        seed,
        rng: RNG_NAME.to_string(),
        checkpoints,
        events,
        arms,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn default_scale() -> f64 {
    1.0
}

fn default_c0() -> f64 {
    C0_DEFAULT
}

/// One agent entry of a sweep config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    Mdbe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default = "default_scale")]
        constant_scale: f64,
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        interval_mode: IntervalMode,
    },
    BinningUcbNaive {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    BinningUcbOracle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        /// Restart rounds; the environment's nominal change points if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        taus: Option<Vec<u64>>,
    },
}

impl AgentSpec {
    pub fn name(&self) -> String {
        let (label, default) = match self {
            AgentSpec::Mdbe { label, .. } => (label, "mdbe"),
            AgentSpec::BinningUcbNaive { label } => (label, "binning_ucb_naive"),
            AgentSpec::BinningUcbOracle { label, .. } => (label, "binning_ucb_oracle"),
        };
        label.clone().unwrap_or_else(|| default.to_string())
    }

    pub fn build(&self, env: &EnvSpec, seed: u64) -> Result<Box<dyn Agent + Send>> {
        let horizon = env.horizon();
        let agent: Box<dyn Agent + Send> = match self {
            AgentSpec::Mdbe {
                constant_scale,
                c0,
                interval_mode,
                ..
            } => {
                let log_t = EvictionConfig::for_horizon(horizon).log_t;
                let cfg = AgentConfig {
                    horizon,
                    eviction: EvictionConfig::new(*c0, log_t, *constant_scale)?,
                    seed,
                    interval_mode: *interval_mode,
                };
                Box::new(Named::new(Mdbe::new(cfg)?, self.name()))
            }
            AgentSpec::BinningUcbNaive { .. } => {
                Box::new(Named::new(BinningUcb::naive(horizon)?, self.name()))
            }
            AgentSpec::BinningUcbOracle { taus, .. } => {
                let taus = taus.clone().unwrap_or_else(|| env.nominal_change_points());
                Box::new(Named::new(BinningUcb::oracle(horizon, &taus)?, self.name()))
            }
        };
        Ok(agent)
    }
}

/// Agent wrapper that reports a configured name.
struct Named<A> {
    inner: A,
    name: String,
}

impl<A> Named<A> {
    fn new(inner: A, name: String) -> Self {
        Named { inner, name }
    }
}

impl<A: Agent> Agent for Named<A> {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> u64 {
        self.inner.horizon()
    }

    fn select(&mut self, t: u64, rng: &mut dyn rand::RngCore) -> Result<f64> {
        self.inner.select(t, rng)
    }

    fn observe(&mut self, t: u64, x: f64, reward: f64) -> Result<Vec<Event>> {
        self.inner.observe(t, x, reward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub base: u64,
    pub replications: u64,
}

impl Seeds {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        let base = self.base;
        (0..self.replications).map(move |i| base + i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema: u32,
    pub env: EnvConfig,
    pub agents: Vec<AgentSpec>,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_stride: Option<u64>,
    #[serde(default)]
    pub record_arms: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: SweepConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("no agents configured".into()));
        }
        if self.seeds.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.checkpoint_stride == Some(0) {
            return Err(Error::Config("checkpoint stride must be positive".into()));
        }
        let mut names: Vec<String> = self.agents.iter().map(AgentSpec::name).collect();
        for n in &names {
            if n.is_empty() || n.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("agent name {n:?} is not CSV-safe")));
            }
        }
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "agent name {:?} appears twice; set a label",
                w[0]
            )));
        }
        EnvSpec::from_config(self.env.clone())?;
        Ok(())
    }

    pub fn stride(&self) -> u64 {
        self.checkpoint_stride
            .unwrap_or_else(|| default_stride(self.env.horizon))
    }
}

/// Runs every `(agent, replication)` pair, in parallel on `jobs` threads
/// (rayon's default pool when `None`). Records come back ordered by agent,
/// then seed, whatever order they finished in.
pub fn sweep(cfg: &SweepConfig, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let env = EnvSpec::from_config(cfg.env.clone())?;
    let opts = RunOptions {
        stride: cfg.stride(),
        record_arms: cfg.record_arms,
    };
    let pairs: Vec<(&AgentSpec, u64)> = cfg
        .agents
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |s| (a, s)))
        .collect();
    let work = || {
        pairs
            .par_iter()
            .map(|&(spec, seed)| {
                let mut agent = spec.build(&env, seed)?;
                run(&env, agent.as_mut(), seed, opts)
            })
            .collect::<Result<Vec<_>>>()
    };
    match jobs {
        None => work(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Resource(format!("thread pool: {e}")))?
            .install(work),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub run_id: String,
    pub agent: String,
    pub seed: u64,
    pub t: u64,
    pub cum_regret: f64,
}

pub fn write_checkpoints<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["run_id", "agent", "seed", "t", "cum_regret"])
        .map_err(csv_err)?;
    for r in records {
        for &(t, v) in &r.checkpoints {
            w.write_record([
                r.run_id.clone(),
                r.agent.clone(),
                r.seed.to_string(),
                t.to_string(),
                v.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::Resource(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_checkpoints<R: std::io::Read>(input: R) -> Result<Vec<CheckpointRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_input_err)?.clone();
    if headers != vec!["run_id", "agent", "seed", "t", "cum_regret"] {
        return Err(Error::Input(format!("unexpected CSV header {headers:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(csv_input_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Resource(format!("csv: {e}"))
}

fn csv_input_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

#[derive(Serialize)]
struct EventLine<'a> {
    run_id: &'a str,
    t: u64,
    kind: &'static str,
    payload: serde_json::Value,
}

pub fn write_events<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    for r in records {
        for (t, e) in &r.events {
            let line = EventLine {
                run_id: &r.run_id,
                t: *t,
                kind: e.kind(),
                payload: e.payload(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")
                .map_err(|e| Error::Resource(format!("events: {e}")))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub agent: String,
    pub env: String,
    pub seed: u64,
    pub rng: String,
    pub final_regret: f64,
    pub events: usize,
    pub wall_time: f64,
}

impl From<&RunRecord> for RunMeta {
    fn from(r: &RunRecord) -> Self {
        RunMeta {
            run_id: r.run_id.clone(),
            agent: r.agent.clone(),
            env: r.env.clone(),
            seed: r.seed,
            rng: r.rng.clone(),
            final_regret: r.final_regret(),
            events: r.events.len(),
            wall_time: r.wall_time,
        }
    }
}

pub const CHECKPOINTS_FILE: &str = "checkpoints.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const RUNS_FILE: &str = "runs.json";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the effective config, checkpoints, events and run metadata into
/// `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, cfg: &SweepConfig, records: &[RunRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, cfg)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    f.flush().map_err(|e| Error::io(&path, e))?;

    write_checkpoints(records, create(&dir.join(CHECKPOINTS_FILE))?)?;
    let path = dir.join(EVENTS_FILE);
    let mut f = create(&path)?;
    write_events(records, &mut f)?;
    f.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(RUNS_FILE);
    let mut f = create(&path)?;
    let meta: Vec<RunMeta> = records.iter().map(RunMeta::from).collect();
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    f.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Mean and two-sided 95% Student-t interval of one agent at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: String,
    pub t: u64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Half-width of the interval; absent with fewer than two replications.
    pub ci95: Option<f64>,
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn ci95_half_width(n: usize, sd: f64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    Some(dist.inverse_cdf(0.975) * sd / (n as f64).sqrt())
}

/// Per-agent, per-checkpoint mean and CI, agents in order of first
/// appearance.
pub fn summarize(rows: &[CheckpointRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let a = match order.iter().position(|&n| n == r.agent) {
            Some(i) => i,
            None => {
                order.push(&r.agent);
                order.len() - 1
            }
        };
        groups.entry((a, r.t)).or_default().push(r.cum_regret);
    }
    groups
        .into_iter()
        .map(|((a, t), xs)| {
            let (mean, sd) = mean_sd(&xs);
            SummaryRow {
                agent: order[a].to_string(),
                t,
                n: xs.len(),
                mean,
                sd,
                ci95: ci95_half_width(xs.len(), sd),
            }
        })
        .collect()
}

/// Last checkpoint of each agent.
pub fn final_rows(summary: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for row in summary {
        match out.last_mut() {
            Some(last) if last.agent == row.agent => *last = row.clone(),
            _ => out.push(row.clone()),
        }
    }
    out
}

/// One-sided Welch test of `mean(a) < mean(b)`; returns the p-value.
pub fn welch_less(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return if ma < mb { 0.0 } else { 1.0 };
    }
    let t = (mb - ma) / se;
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid dof");
    1.0 - dist.cdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_custom, make_shifting_peak, Noise};
    use rand::RngCore;

    struct Fixed {
        x: f64,
        horizon: u64,
    }

    impl Agent for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn horizon(&self) -> u64 {
            self.horizon
        }
        fn select(&mut self, _t: u64, _rng: &mut dyn RngCore) -> Result<f64> {
            Ok(self.x)
        }
        fn observe(&mut self, _t: u64, _x: f64, _y: f64) -> Result<Vec<Event>> {
            Ok(Vec::new())
        }
    }

    fn tent(horizon: u64, noise: Noise) -> EnvSpec {
        make_custom(
            horizon,
            noise,
            vec![(1, horizon, vec![(0.0, 0.4), (0.6, 1.0), (1.0, 0.6)])],
        )
        .unwrap()
    }

    fn opts(stride: u64) -> RunOptions {
        RunOptions {
            stride,
            record_arms: true,
        }
    }

    #[test]
    fn best_arm_has_no_regret() {
        let env = tent(500, Noise::None);
        let mut a = Fixed {
            x: 0.6,
            horizon: 500,
        };
        let r = run(&env, &mut a, 1, opts(7)).unwrap();
        assert_eq!(r.final_regret(), 0.0);
        assert_eq!(r.checkpoints.last().unwrap().0, 500);
        assert_eq!(r.checkpoints[0].0, 7);
    }

    #[test]
    fn constant_gap_accumulates_exactly() {
        let env = tent(1000, Noise::Bernoulli);
        let mut a = Fixed {
            x: 0.0,
            horizon: 1000,
        };
        let r = run(&env, &mut a, 1, opts(1000)).unwrap();
        assert!((r.final_regret() - 0.6 * 1000.0).abs() < 1e-9);
    }

    #[test]
    fn horizon_mismatch_is_config_error() {
        let env = tent(10, Noise::None);
        let mut a = Fixed {
            x: 0.5,
            horizon: 11,
        };
        assert!(matches!(
            run(&env, &mut a, 0, opts(1)),
            Err(Error::Config(_))
        ));
    }

    fn small_config() -> SweepConfig {
        SweepConfig::from_value(serde_json::json!({
            "schema": 1,
            "env": {"kind": "shifting_peak", "horizon": 3000, "params": {"period": 300}},
            "agents": [
                {"kind": "mdbe", "constant_scale": 0.05},
                {"kind": "binning_ucb_naive"}
            ],
            "seeds": {"base": 10, "replications": 3},
            "checkpoint_stride": 100,
            "record_arms": true
        }))
        .unwrap()
    }

    #[test]
    fn sweep_orders_and_regret_matches_arms() {
        let cfg = small_config();
        let records = sweep(&cfg, Some(3)).unwrap();
        assert_eq!(records.len(), 6);
        let ids: Vec<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "mdbe-s10",
                "mdbe-s11",
                "mdbe-s12",
                "binning_ucb_naive-s10",
                "binning_ucb_naive-s11",
                "binning_ucb_naive-s12"
            ]
        );
        let env = EnvSpec::from_config(cfg.env.clone()).unwrap();
        for r in &records {
            let arms = r.arms.as_ref().unwrap();
            let mut acc = 0.0;
            let mut cps = r.checkpoints.iter();
            for (i, &x) in arms.iter().enumerate() {
                let t = i as u64 + 1;
                acc += env.best_value(t).1 - env.mean(t, x);
                if t.is_multiple_of(100) {
                    let &(ct, v) = cps.next().unwrap();
                    assert_eq!(ct, t);
                    assert!((v - acc).abs() < 1e-9);
                }
            }
            assert!(r.checkpoints.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn replication_order_does_not_matter() {
        let cfg = small_config();
        let all = sweep(&cfg, Some(1)).unwrap();
        let mut single = cfg.clone();
        single.seeds = Seeds {
            base: 12,
            replications: 1,
        };
        let one = sweep(&single, Some(2)).unwrap();
        assert_eq!(one[0].checkpoints, all[2].checkpoints);
        assert_eq!(one[0].events, all[2].events);
    }

    #[test]
    fn files_are_written_and_reread() {
        let cfg = small_config();
        let records = sweep(&cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &cfg, &records).unwrap();
        let text = fs::read_to_string(dir.path().join(CHECKPOINTS_FILE)).unwrap();
        assert!(text.starts_with("run_id,agent,seed,t,cum_regret\n"));
        assert!(!text.contains('\r'));
        let rows = read_checkpoints(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 6 * 30);
        let back: SweepConfig = serde_json::from_str(
            &fs::read_to_string(dir.path().join(EFFECTIVE_CONFIG_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(back, cfg);
        let events = fs::read_to_string(dir.path().join(EVENTS_FILE)).unwrap();
        for line in events.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
            assert_eq!(keys.len(), 4);
            assert!(v["payload"].is_object());
        }
        assert!(events.contains("\"kind\":\"block_start\""));
    }

    #[test]
    fn floats_round_trip_through_csv() {
        let rec = RunRecord {
            run_id: "a-s1".into(),
            agent: "a".into(),
            env: String::new(),
            seed: 1,
            rng: RNG_NAME.into(),
            checkpoints: vec![(1, 0.1 + 0.2), (2, 1.0 / 3.0)],
            events: Vec::new(),
            arms: None,
            wall_time: 0.0,
        };
        let mut buf = Vec::new();
        write_checkpoints(&[rec], &mut buf).unwrap();
        let rows = read_checkpoints(buf.as_slice()).unwrap();
        assert_eq!(rows[0].cum_regret, 0.1 + 0.2);
        assert_eq!(rows[1].cum_regret, 1.0 / 3.0);
    }

    #[test]
    fn summary_matches_hand_computation() {
        let rows: Vec<CheckpointRow> = [(1, 2.0), (2, 4.0), (3, 9.0)]
            .iter()
            .map(|&(s, v)| CheckpointRow {
                run_id: format!("a-s{s}"),
                agent: "a".into(),
                seed: s,
                t: 10,
                cum_regret: v,
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean - 5.0).abs() < 1e-12);
        let sd = (13.0f64).sqrt();
        assert!((s[0].sd - sd).abs() < 1e-12);
        // t_{0.975, 2} = 4.302653
        assert!((s[0].ci95.unwrap() - 4.302653 * sd / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(summarize(&rows[..1])[0].ci95, None);
    }

    #[test]
    fn welch_detects_clear_difference() {
        let a: Vec<f64> = (0..20).map(|i| 10.0 + (i % 3) as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| 20.0 + (i % 4) as f64).collect();
        assert!(welch_less(&a, &b) < 1e-6);
        assert!(welch_less(&b, &a) > 0.99);
    }

    #[test]
    fn config_validation() {
        let mut v = serde_json::to_value(small_config()).unwrap();
        v["schema"] = 2.into();
        assert!(matches!(
            SweepConfig::from_value(v.clone()),
            Err(Error::Config(_))
        ));
        v["schema"] = 1.into();
        v["agents"] = serde_json::json!([{"kind": "mdbe"}, {"kind": "mdbe"}]);
        assert!(matches!(
            SweepConfig::from_value(v.clone()),
            Err(Error::Config(_))
        ));
        v["agents"] = serde_json::json!([{"kind": "mdbe", "bogus": 1}]);
        assert!(matches!(SweepConfig::from_value(v), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_defaults_to_nominal_change_points() {
        let env = make_shifting_peak(3000, 300, 0.3, 0.7).unwrap();
        let spec = AgentSpec::BinningUcbOracle {
            label: None,
            taus: None,
        };
        let a = spec.build(&env, 0).unwrap();
        assert_eq!(a.name(), "binning_ucb_oracle");
        assert_eq!(a.horizon(), 3000);
    }
}
