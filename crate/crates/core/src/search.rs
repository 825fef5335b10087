//! Iterative observation-space search.
//!
//! Starting from an initial space, each iteration adds one candidate group,
//! trains a fresh model for K steps and scores it. Candidates that strictly
//! beat the best score are accepted and then pruned with the
//! dropout-permutation test; the pruned space is what later proposals extend.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelRegistry, ChannelSpec, ObservationSpace, SensorGroup, SpaceDoc};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::learner::{evaluate, train, TrainConfig};
use crate::permtest::{prune, pruned_channels, run_permtest, ImportanceReport, PermTestConfig};
use crate::rng::{derive, rng_for, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Mean return of fresh deterministic episodes after training.
    Test,
    /// Mean of every training episode return.
    #[default]
    All,
    /// Mean of the training episode returns in the second half of training.
    Half,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Semantic,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub metric: Metric,
    pub grouping: Grouping,
    /// Training steps per candidate.
    pub k_steps: usize,
    /// Defaults to three times the number of groups.
    pub max_iterations: Option<usize>,
    /// Consecutive rejections before stopping.
    pub patience: usize,
    /// Empty means the environment's default semantic groups.
    pub candidate_groups: Vec<SensorGroup>,
    /// Episodes of the `Test` metric.
    pub test_episodes: usize,
    pub prune: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            metric: Metric::All,
            grouping: Grouping::Semantic,
            k_steps: 200_000,
            max_iterations: None,
            patience: 5,
            candidate_groups: Vec::new(),
            test_episodes: 20,
            prune: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_steps == 0 || self.patience == 0 || self.candidate_groups.is_empty() || self.test_episodes == 0 {
            return Err(Error::InvalidArgument(
                "search needs k_steps, patience and test_episodes >= 1 and at least one group".into(),
            ));
        }
        if let Some(g) = self.candidate_groups.iter().find(|g| g.members.is_empty()) {
            return Err(Error::InvalidArgument(format!("group `{}` is empty", g.name)));
        }
        Ok(())
    }

    pub fn iteration_limit(&self) -> usize {
        self.max_iterations.unwrap_or(3 * self.candidate_groups.len())
    }
}

/// Scores a reward history; an empty window scores `-inf`.
pub fn score_history(history: &[(usize, f64)], metric: Metric, k_steps: usize) -> f64 {
    let window: Vec<f64> = match metric {
        Metric::Half => history
            .iter()
            .filter(|(s, _)| 2 * s >= k_steps)
            .map(|(_, r)| *r)
            .collect(),
        _ => history.iter().map(|(_, r)| *r).collect(),
    };
    if window.is_empty() {
        f64::NEG_INFINITY
    } else {
        window.iter().sum::<f64>() / window.len() as f64
    }
}

pub fn accept(candidate_score: f64, best_score: f64) -> bool {
    candidate_score > best_score
}

/// Trains and scores candidate spaces for [`run_search`].
pub trait CandidateTrainer {
    /// Trains a fresh model on `space` and scores it. Errors count as `-inf`.
    fn score(&mut self, space: &ObservationSpace, seed: u64) -> Result<f64>;

    /// Prunes an accepted candidate. The result must be a subset of `space`.
    fn prune(&mut self, space: &ObservationSpace, seed: u64) -> Result<(ObservationSpace, Option<ImportanceReport>)>;
}

/// The SAC learner plus the dropout-permutation test.
pub struct SacTrainer {
    pub env: Box<dyn Env>,
    pub train: TrainConfig,
    pub permtest: PermTestConfig,
    pub k_steps: usize,
    pub metric: Metric,
    pub test_episodes: usize,
    /// Reward history of the most recent scored candidate.
    pub last_history: Vec<(usize, f64)>,
}

impl SacTrainer {
    pub fn new(env: Box<dyn Env>, train: TrainConfig, permtest: PermTestConfig, search: &SearchConfig) -> Self {
        SacTrainer {
            env,
            train,
            permtest,
            k_steps: search.k_steps,
            metric: search.metric,
            test_episodes: search.test_episodes,
            last_history: Vec::new(),
        }
    }
}

impl CandidateTrainer for SacTrainer {
    fn score(&mut self, space: &ObservationSpace, seed: u64) -> Result<f64> {
        let mut space = space.clone();
        space.clear_ranges();
        self.last_history.clear();
        let model = train(self.env.as_mut(), &space, self.k_steps, &self.train, 0.0, seed)?;
        self.last_history = model.reward_history.clone();
        match self.metric {
            Metric::Test => evaluate(
                &model,
                self.env.as_mut(),
                self.test_episodes,
                None,
                derive(seed, Stream::Eval, 1),
            ),
            m => Ok(score_history(&model.reward_history, m, self.k_steps)),
        }
    }

    fn prune(&mut self, space: &ObservationSpace, seed: u64) -> Result<(ObservationSpace, Option<ImportanceReport>)> {
        let (report, _) = run_permtest(self.env.as_mut(), space, &self.train, &self.permtest, self.k_steps, seed)?;
        Ok((prune(space, &report)?, Some(report)))
    }
}

mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// One search iteration. Iteration 0 is the initial space. Failed trainings
/// are recorded with a `null` score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub group: String,
    pub candidate_channels: Vec<String>,
    #[serde(with = "score_serde")]
    pub score: f64,
    pub accepted: bool,
    pub pruned: Vec<String>,
    #[serde(with = "score_serde")]
    pub best_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ImportanceReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub best_obs: ObservationSpace,
    pub best_score: f64,
    pub trace: Vec<TraceEntry>,
}

impl SearchState {
    pub fn accepted_scores(&self) -> Vec<f64> {
        self.trace.iter().filter(|e| e.accepted).map(|e| e.score).collect()
    }

    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn best_doc(&self) -> SpaceDoc {
        self.best_obs.to_doc()
    }
}

/// Remaining proposals of the current pass over the groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProposalBag {
    pending: Vec<usize>,
}

fn contained(space: &ObservationSpace, group: &SensorGroup) -> bool {
    group.members.iter().all(|m| space.contains(m))
}

fn group_channels(registry: &ChannelRegistry, names: &[String]) -> Result<Vec<ChannelSpec>> {
    names.iter().map(|n| registry.get(n).cloned()).collect()
}

/// Proposes `best` extended by one group not yet fully contained in it.
///
/// Semantic grouping draws groups without replacement within a pass, so each
/// available group is tried once before any repeats. Random grouping adds a
/// random subset of unused candidate channels, sized like an average group.
pub fn propose<R: Rng + ?Sized>(
    best: &ObservationSpace,
    groups: &[SensorGroup],
    grouping: Grouping,
    bag: &mut ProposalBag,
    registry: &ChannelRegistry,
    rng: &mut R,
) -> Result<(ObservationSpace, String)> {
    let available: Vec<usize> = (0..groups.len()).filter(|&i| !contained(best, &groups[i])).collect();
    if available.is_empty() {
        return Err(Error::GroupsExhausted);
    }
    let (label, members) = match grouping {
        Grouping::Semantic => {
            bag.pending.retain(|i| available.contains(i));
            if bag.pending.is_empty() {
                bag.pending = available;
                bag.pending.shuffle(rng);
            }
            let g = &groups[bag.pending.pop().expect("non-empty bag")];
            (g.name.clone(), g.members.clone())
        }
        Grouping::Random => {
            let mut pool: Vec<&String> = Vec::new();
            for m in groups.iter().flat_map(|g| &g.members) {
                if !best.contains(m) && !pool.contains(&m) {
                    pool.push(m);
                }
            }
            let total: usize = groups.iter().map(|g| g.members.len()).sum();
            let size = ((total as f64 / groups.len() as f64).round() as usize).clamp(1, pool.len());
            let members: Vec<String> = pool.choose_multiple(rng, size).map(|s| s.to_string()).collect();
            (format!("random[{}]", members.join(",")), members)
        }
    };
    let extra = group_channels(registry, &members)?;
    let mut candidate = best.union(&extra, registry);
    candidate.name = format!("{}+{}", best.name, label);
    Ok((candidate, label))
}

/// Runs the search from `init` and returns the best space and the state.
pub fn run_search(
    trainer: &mut dyn CandidateTrainer,
    registry: &ChannelRegistry,
    init: &ObservationSpace,
    config: &SearchConfig,
    seed: u64,
) -> Result<(ObservationSpace, SearchState)> {
    config.validate()?;
    let scored = |trainer: &mut dyn CandidateTrainer, space: &ObservationSpace, iter: usize| {
        match trainer.score(space, derive(seed, Stream::Seed, iter as u64)) {
            Ok(s) if !s.is_nan() => s,
            Ok(_) => f64::NEG_INFINITY,
            Err(e) => {
                log::warn!("training {} failed: {e}", space.name);
                f64::NEG_INFINITY
            }
        }
    };
    let base = scored(trainer, init, 0);
    let mut state = SearchState {
        best_obs: init.clone(),
        best_score: base,
        trace: vec![TraceEntry {
            iter: 0,
            group: "initial".into(),
            candidate_channels: init.channel_names(),
            score: base,
            accepted: true,
            pruned: Vec::new(),
            best_score: base,
            report: None,
        }],
    };
    let mut rng = rng_for(seed, Stream::Search, 0);
    let mut bag = ProposalBag::default();
    let mut rejections = 0;
    for iter in 1..=config.iteration_limit() {
        let (candidate, group) =
            match propose(&state.best_obs, &config.candidate_groups, config.grouping, &mut bag, registry, &mut rng) {
                Ok(c) => c,
                Err(Error::GroupsExhausted) => break,
                Err(e) => return Err(e),
            };
        let score = scored(trainer, &candidate, iter);
        let accepted = accept(score, state.best_score);
        let mut pruned = Vec::new();
        let mut report = None;
        if accepted {
            let mut kept = candidate.clone();
            if config.prune {
                match trainer.prune(&candidate, derive(seed, Stream::Permtest, iter as u64)) {
                    Ok((space, r)) if space.channels.iter().all(|c| candidate.contains(&c.name)) => {
                        kept = space;
                        report = r;
                    }
                    Ok(_) => log::warn!("pruning returned channels outside the candidate; ignored"),
                    Err(e) => log::warn!("pruning {} failed: {e}", candidate.name),
                }
            }
            pruned = pruned_channels(&candidate, &kept);
            kept.clear_ranges();
            state.best_obs = kept;
            state.best_score = score;
            rejections = 0;
        } else {
            rejections += 1;
        }
        state.trace.push(TraceEntry {
            iter,
            group,
            candidate_channels: candidate.channel_names(),
            score,
            accepted,
            pruned,
            best_score: state.best_score,
            report,
        });
        if rejections >= config.patience {
            break;
        }
    }
    Ok((state.best_obs.clone(), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{default_groups, preset};
    use crate::envs::make_env;

    struct Scripted {
        scores: Vec<f64>,
        calls: usize,
    }

    impl CandidateTrainer for Scripted {
        fn score(&mut self, _: &ObservationSpace, _: u64) -> Result<f64> {
            let s = self.scores[self.calls.min(self.scores.len() - 1)];
            self.calls += 1;
            if s.is_nan() {
                Err(Error::NonFiniteLoss { step: 0, what: "scripted".into() })
            } else {
                Ok(s)
            }
        }

        fn prune(&mut self, space: &ObservationSpace, _: u64) -> Result<(ObservationSpace, Option<ImportanceReport>)> {
            Ok((space.clone(), None))
        }
    }

    fn setup() -> (ChannelRegistry, ObservationSpace, SearchConfig) {
        let env = make_env("planar-hopper").unwrap();
        let config = SearchConfig {
            candidate_groups: default_groups(env.spec()),
            ..SearchConfig::default()
        };
        (ChannelRegistry::for_env(env.spec()), preset("RS", env.spec()).unwrap(), config)
    }

    #[test]
    fn history_metrics() {
        let h = [(50, 10.0), (150, 20.0), (250, 30.0), (350, 40.0)];
        assert_eq!(score_history(&h, Metric::All, 400), 25.0);
        assert_eq!(score_history(&h, Metric::Half, 400), 35.0);
        assert_eq!(score_history(&[], Metric::All, 400), f64::NEG_INFINITY);
        assert_eq!(Metric::default(), Metric::All);
    }

    #[test]
    fn strict_acceptance() {
        assert!(!accept(10.0, 10.0));
        assert!(accept(10.1, 10.0));
        assert!(!accept(f64::NEG_INFINITY, 3.0));
    }

    #[test]
    fn all_rejected_returns_initial_space() {
        let (reg, rs, config) = setup();
        let mut t = Scripted { scores: vec![10.0, 5.0], calls: 0 };
        let (best, state) = run_search(&mut t, &reg, &rs, &config, 1).unwrap();
        assert_eq!(best, rs);
        assert_eq!(state.trace.len(), 1 + config.patience);
        assert!(state.trace[1..].iter().all(|e| !e.accepted));
    }

    #[test]
    fn proposals_add_one_group() {
        let (reg, rs, config) = setup();
        let mut rng = rand::rng();
        let mut bag = ProposalBag::default();
        let mut seen = Vec::new();
        for _ in 0..config.candidate_groups.len() {
            let (cand, label) = propose(&rs, &config.candidate_groups, Grouping::Semantic, &mut bag, &reg, &mut rng).unwrap();
            let g = config.candidate_groups.iter().find(|g| g.name == label).unwrap();
            let group_dim: usize = g.members.iter().map(|m| reg.get(m).unwrap().dim).sum();
            assert_eq!(cand.total_dim(), rs.total_dim() + group_dim);
            assert!(rs.channels.iter().all(|c| cand.contains(&c.name)));
            seen.push(label);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), config.candidate_groups.len(), "a pass tries every group once");

        let mut full = rs.clone();
        for g in &config.candidate_groups {
            full = full.union(&group_channels(&reg, &g.members).unwrap(), &reg);
        }
        let err = propose(&full, &config.candidate_groups, Grouping::Semantic, &mut bag, &reg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::GroupsExhausted));
    }

    #[test]
    fn failures_are_never_accepted() {
        let (reg, rs, config) = setup();
        let mut t = Scripted { scores: vec![1.0, f64::NAN, 2.0, f64::NAN, 3.0], calls: 0 };
        let (_, state) = run_search(&mut t, &reg, &rs, &config, 3).unwrap();
        for e in &state.trace {
            if e.score == f64::NEG_INFINITY {
                assert!(!e.accepted);
            }
        }
        assert_eq!(state.accepted_scores(), [1.0, 2.0, 3.0]);
        let jsonl = state.trace_jsonl().unwrap();
        let back: TraceEntry = serde_json::from_str(jsonl.lines().nth(1).unwrap()).unwrap();
        assert_eq!(back.score, f64::NEG_INFINITY);
    }
}
