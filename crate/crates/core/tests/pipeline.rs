use std::fs;

use mdbe::agent::{Agent, AgentConfig, Event, Mdbe};
use mdbe::env::make_shifting_peak;
use mdbe::harness::{self, read_checkpoints, RunOptions, SweepConfig};

fn config() -> SweepConfig {
    SweepConfig::from_json(
        r#"{
            "schema": 1,
            "env": { "kind": "shifting_peak", "horizon": 3000, "params": { "period": 600 } },
            "agents": [
                { "kind": "mdbe", "constant_scale": 0.02 },
                { "kind": "binning_ucb_naive" },
                { "kind": "binning_ucb_oracle" }
            ],
            "seeds": { "base": 40, "replications": 3 },
            "checkpoint_stride": 100,
            "record_arms": true
        }"#,
    )
    .unwrap()
}

#[test]
fn regret_recomputed_from_arms_matches_checkpoints() {
    let cfg = config();
    let env = mdbe::env::EnvSpec::from_config(cfg.env.clone()).unwrap();
    for rec in harness::sweep(&cfg, Some(1)).unwrap() {
        let arms = rec.arms.as_ref().unwrap();
        assert_eq!(arms.len(), 3000);
        let mut total = 0.0;
        let mut expected = Vec::new();
        for (i, &x) in arms.iter().enumerate() {
            let t = i as u64 + 1;
            total += env.best_value(t).1 - env.mean(t, x);
            if t.is_multiple_of(100) {
                expected.push((t, total));
            }
        }
        assert_eq!(rec.checkpoints.len(), expected.len());
        for (&(t, got), &(te, want)) in rec.checkpoints.iter().zip(&expected) {
            assert_eq!(t, te);
            assert!(
                (got - want).abs() < 1e-9,
                "{} at {t}: {got} vs {want}",
                rec.run_id
            );
        }
    }
}

#[test]
fn output_directory_round_trips() {
    let cfg = config();
    let records = harness::sweep(&cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::write_outputs(dir.path(), &cfg, &records).unwrap();

    let eff = fs::read_to_string(dir.path().join(harness::EFFECTIVE_CONFIG_FILE)).unwrap();
    assert_eq!(SweepConfig::from_json(&eff).unwrap(), cfg);

    let rows =
        read_checkpoints(fs::File::open(dir.path().join(harness::CHECKPOINTS_FILE)).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 9 * 30);
    for (row, (rec, &(t, r))) in rows.iter().zip(
        records
            .iter()
            .flat_map(|rec| rec.checkpoints.iter().map(move |c| (rec, c))),
    ) {
        assert_eq!((&row.run_id, row.seed, row.t), (&rec.run_id, rec.seed, t));
        assert_eq!(row.cum_regret, r);
    }

    let kinds = [
        "replay_start",
        "replay_end",
        "eviction",
        "block_start",
        "episode_restart",
    ];
    let text = fs::read_to_string(dir.path().join(harness::EVENTS_FILE)).unwrap();
    let total: usize = records.iter().map(|r| r.events.len()).sum();
    assert_eq!(text.lines().count(), total);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert!(kinds.contains(&v["kind"].as_str().unwrap()));
        assert!(v["t"].as_u64().unwrap() <= 3000);
    }
}

#[test]
fn blocks_reset_depths_and_restarts_chain() {
    let horizon = 40_000;
    let env = make_shifting_peak(horizon, 2_000, 0.2, 0.8).unwrap();
    let mut agent = Mdbe::new(AgentConfig::new(horizon, 0.01).unwrap()).unwrap();
    let mut rng = harness::stream_rng(9, harness::AGENT_STREAM);
    let mut noise = harness::stream_rng(9, harness::NOISE_STREAM);
    let mut pending_restart: Option<(u64, u64)> = None;
    let mut restarts = 0;
    for t in 1..=horizon {
        let x = agent.select(t, &mut rng).unwrap();
        let state = agent.state().unwrap();
        if state.block_start() == t {
            // A fresh block plays only its own depth.
            let m = state.block();
            assert_eq!(state.active().active_depths().collect::<Vec<_>>(), vec![m]);
            assert_eq!(state.active().master().len() as u64, 1 << m);
        }
        let y = env.sample_reward(t, x, &mut noise);
        for e in agent.observe(t, x, y).unwrap() {
            match e {
                Event::EpisodeRestart {
                    episode,
                    next_round,
                } => {
                    assert_eq!(next_round, t + 1);
                    pending_restart = Some((episode, next_round));
                    restarts += 1;
                }
                Event::BlockStart {
                    episode,
                    block,
                    len,
                } => {
                    if let Some((prev, at)) = pending_restart.take() {
                        assert_eq!((episode, block, t), (prev + 1, 1, at));
                    }
                    assert!(len <= 8u64.pow(block));
                }
                _ => {}
            }
        }
    }
    assert!(
        restarts > 0,
        "aggressive constants should restart at least once"
    );
}

#[test]
fn baselines_and_agent_share_the_run_contract() {
    let env = make_shifting_peak(500, 100, 0.3, 0.7).unwrap();
    let mut a = mdbe::BinningUcb::naive(400).unwrap();
    let err = harness::run(
        &env,
        &mut a,
        0,
        RunOptions {
            stride: 10,
            record_arms: false,
        },
    );
    assert!(matches!(err, Err(mdbe::Error::Config(_))));

    let mut b = mdbe::BinningUcb::oracle(500, &env.nominal_change_points()).unwrap();
    let rec = harness::run(
        &env,
        &mut b,
        0,
        RunOptions {
            stride: 500,
            record_arms: false,
        },
    )
    .unwrap();
    assert_eq!(rec.checkpoints.len(), 1);
    assert!(rec.events.is_empty());
    assert_eq!(rec.agent, b.name());
}
