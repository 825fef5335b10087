use obsearch_core::channels::{default_groups, preset, ChannelRegistry, ObservationSpace};
use obsearch_core::envs::make_env;
use obsearch_core::learner::{train, TrainConfig};
use obsearch_core::permtest::{prune, report_from_model, run_permtest, ImportanceReport, PermTestConfig, Verdict};
use obsearch_core::search::{run_search, CandidateTrainer, Grouping, SearchConfig};
use obsearch_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores drawn from a seeded generator; occasionally fails, and prunes a
/// random subset.
struct Stub {
    rng: ChaCha8Rng,
    fail_rate: f64,
    prune_rate: f64,
}

impl CandidateTrainer for Stub {
    fn score(&mut self, _: &ObservationSpace, _: u64) -> Result<f64> {
        if self.rng.random::<f64>() < self.fail_rate {
            return Err(Error::NonFiniteLoss { step: 0, what: "stub".into() });
        }
        Ok(self.rng.random_range(-10.0..10.0))
    }

    fn prune(&mut self, space: &ObservationSpace, _: u64) -> Result<(ObservationSpace, Option<ImportanceReport>)> {
        let mut out = space.clone();
        let keep_first = out.channels[0].name.clone();
        let rate = self.prune_rate;
        let rng = &mut self.rng;
        out.channels.retain(|c| c.name == keep_first || rng.random::<f64>() >= rate);
        Ok((out, None))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn search_terminates_with_monotone_acceptance(
        seed in any::<u64>(),
        patience in 1usize..6,
        max_iterations in prop::option::of(0usize..30),
        hopper in any::<bool>(),
        random_groups in any::<bool>(),
        fail_rate in 0.0f64..0.5,
        prune_rate in 0.0f64..0.6,
    ) {
        let env = make_env(if hopper { "hopper" } else { "diagnostic" }).unwrap();
        let registry = ChannelRegistry::for_env(env.spec());
        let config = SearchConfig {
            candidate_groups: default_groups(env.spec()),
            patience,
            max_iterations,
            grouping: if random_groups { Grouping::Random } else { Grouping::Semantic },
            ..SearchConfig::default()
        };
        let init = preset("RS", env.spec()).unwrap();
        let mut stub = Stub { rng: ChaCha8Rng::seed_from_u64(seed), fail_rate, prune_rate };
        let (best, state) = run_search(&mut stub, &registry, &init, &config, seed).unwrap();

        prop_assert!(state.trace.len() <= 1 + config.iteration_limit());
        let accepted = state.accepted_scores();
        prop_assert!(accepted.windows(2).all(|w| w[1] > w[0]), "{:?}", accepted);
        prop_assert_eq!(best.channel_names(), state.best_obs.channel_names());
        prop_assert_eq!(state.best_score.to_bits(), accepted.last().unwrap().to_bits());
        // the trailing rejections never exceed the patience
        let tail = state.trace.iter().rev().take_while(|e| !e.accepted).count();
        prop_assert!(tail <= patience);
        for (k, e) in state.trace.iter().enumerate() {
            prop_assert_eq!(e.iter, k);
            if e.score == f64::NEG_INFINITY && k > 0 {
                prop_assert!(!e.accepted);
            }
            prop_assert!(e.pruned.iter().all(|p| e.candidate_channels.contains(p)));
        }
    }

    #[test]
    fn prune_is_idempotent(
        importances in prop::collection::vec(-1.0f64..1.0, 1..12),
        threshold in 0.0f64..0.3,
    ) {
        let env = make_env("hopper").unwrap();
        let registry = ChannelRegistry::for_env(env.spec());
        let channels: Vec<_> = registry.channels().iter().take(importances.len()).cloned().collect();
        let space = ObservationSpace::new("p", channels, env.spec().action_dim).unwrap();
        // base score 1 makes each channel's importance equal score - 1
        let scores: Vec<(String, f64)> = space.channel_names().into_iter().zip(importances.iter().map(|i| 1.0 + i)).collect();
        let report = ImportanceReport::from_scores(1.0, &scores, 0.1, threshold, 0);
        let once = prune(&space, &report).unwrap();
        let twice = prune(&once, &report).unwrap();
        prop_assert_eq!(once.channel_names(), twice.channel_names());
        prop_assert!(!once.channels.is_empty());
        for c in &once.channels {
            let e = report.get(&c.name).unwrap();
            prop_assert!(e.verdict == Verdict::Essential || once.channels.len() == 1);
        }
    }
}

#[test]
fn report_covers_every_channel_once() {
    let mut env = make_env("diagnostic").unwrap();
    let space = preset("Ours+x", env.spec()).unwrap();
    let train_cfg = TrainConfig {
        hidden: vec![16, 16],
        warmup_steps: 200,
        ..TrainConfig::for_env("diagnostic")
    };
    let cfg = PermTestConfig {
        eval_episodes: 5,
        ..PermTestConfig::default()
    };
    let (report, model) = run_permtest(env.as_mut(), &space, &train_cfg, &cfg, 600, 4).unwrap();
    assert_eq!(model.dropout_rate, 0.1);
    let names: Vec<&str> = report.channels.iter().map(|c| c.channel.as_str()).collect();
    assert_eq!(names, space.channel_names());
}

#[test]
fn ignored_channel_has_zero_importance() {
    let mut env = make_env("diagnostic").unwrap();
    let space = preset("Ours+x", env.spec()).unwrap();
    let cfg = TrainConfig {
        hidden: vec![16, 16],
        warmup_steps: 200,
        ..TrainConfig::for_env("diagnostic")
    };
    let mut model = train(env.as_mut(), &space, 800, &cfg, 0.0, 9).unwrap();
    let ignored = model.space.observation_indices("deceptive").unwrap();
    let width = model.agent.actor.sizes()[1];
    for i in ignored {
        model.agent.actor.params_mut()[i * width..(i + 1) * width].fill(0.0);
    }
    let pcfg = PermTestConfig::default();
    let report = report_from_model(&model, env.as_mut(), &pcfg, 17).unwrap();
    let imp = report.get("deceptive").unwrap().importance;
    assert!(imp.abs() < 0.02, "{imp}");
    assert_eq!(report.channels.len(), space.channels.len());
}

#[test]
fn search_on_diagnostic_env_is_reproducible() {
    let run = || {
        let env = make_env("diagnostic").unwrap();
        let registry = ChannelRegistry::for_env(env.spec());
        let search = SearchConfig {
            k_steps: 400,
            max_iterations: Some(2),
            test_episodes: 3,
            candidate_groups: default_groups(env.spec()),
            ..SearchConfig::default()
        };
        let train_cfg = TrainConfig {
            hidden: vec![8],
            warmup_steps: 100,
            ..TrainConfig::for_env("diagnostic")
        };
        let permtest = PermTestConfig {
            eval_episodes: 3,
            ..PermTestConfig::default()
        };
        let init = preset("RS", env.spec()).unwrap();
        let mut trainer = obsearch_core::search::SacTrainer::new(env, train_cfg, permtest, &search);
        run_search(&mut trainer, &registry, &init, &search, 5).unwrap().1
    };
    let (a, b) = (run(), run());
    assert_eq!(a.trace_jsonl().unwrap(), b.trace_jsonl().unwrap());
    assert_eq!(a.trace.len(), 3);
}
