//! Off-policy actor-critic learner (SAC with automatic entropy tuning).

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ObservationBuilder, ObservationSpace};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::rng::{derive, rng_for, Stream};

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod sac;

pub use mlp::Mlp;
pub use replay::ReplayBuffer;
pub use sac::{apply_input_dropout, target_entropy, SacAgent, UpdateParams};

/// Learner hyperparameters.
///
/// Batch size, discount, target smoothing and buffer capacity are free
/// choices; the learning rate and widths follow the published setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Environment steps between gradient updates.
    pub train_freq: usize,
    pub gradient_steps: usize,
    /// Initial steps collected with uniform random actions, without updates.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub init_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            hidden: vec![256, 256],
            batch_size: 256,
            gamma: 0.99,
            tau: 0.005,
            train_freq: 1,
            gradient_steps: 1,
            warmup_steps: 1000,
            buffer_capacity: 100_000,
            init_alpha: 1.0,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned per environment id.
    pub fn for_env(id: &str) -> Self {
        match id {
            "cart-double-pendulum" | "pendulum" => TrainConfig {
                hidden: vec![64, 64],
                gradient_steps: 2,
                ..TrainConfig::default()
            },
            "diagnostic" | "diagnostic-clean" => TrainConfig {
                hidden: vec![32, 32],
                batch_size: 64,
                warmup_steps: 500,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.train_freq > 0
            && self.gradient_steps > 0
            && self.buffer_capacity > 0
            && self.init_alpha > 0.0
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0);
        if !positive || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// A trained policy together with what it saw during training.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub agent: SacAgent,
    /// The training space with value ranges recorded from every observed frame.
    pub space: ObservationSpace,
    pub config: TrainConfig,
    /// `(environment step at episode end, episodic return)`.
    pub reward_history: Vec<(usize, f64)>,
    pub dropout_rate: f64,
    pub seed: u64,
    pub steps: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub buffer: Option<ReplayBuffer>,
}

fn to_env_action(a: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(low.iter().zip(high))
        .map(|(v, (lo, hi))| lo + 0.5 * (v + 1.0) * (hi - lo))
        .collect()
}

impl TrainedModel {
    pub fn alpha(&self) -> f64 {
        self.agent.alpha()
    }

    /// Policy action in environment units.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        if obs.len() != self.agent.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.agent.obs_dim,
                got: obs.len(),
            });
        }
        let a = self.agent.act(obs, deterministic, rng);
        Ok(to_env_action(&a, &self.action_low, &self.action_high))
    }

    /// Mean of the last `n` training episode returns.
    pub fn final_return(&self, n: usize) -> Option<f64> {
        let tail = &self.reward_history[self.reward_history.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|(_, r)| r).sum::<f64>() / tail.len() as f64)
    }

    pub fn write_reward_csv(&self, path: &Path) -> Result<()> {
        write_reward_csv(&self.reward_history, path)
    }
}

pub fn write_reward_csv(history: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("step,return\n");
    for (step, ret) in history {
        out.push_str(&format!("{step},{ret}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains a fresh agent on `space` for `steps` environment steps.
///
/// With `dropout > 0`, every actor and critic forward pass of a gradient
/// update zeroes each observation coordinate independently with that
/// probability and rescales the rest. Data collection and the critic targets
/// never drop.
pub fn train(
    env: &mut dyn Env,
    space: &ObservationSpace,
    steps: usize,
    config: &TrainConfig,
    dropout: f64,
    seed: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidArgument(format!("dropout rate {dropout} outside [0, 1)")));
    }
    let spec = env.spec().clone();
    if space.action_dim != spec.action_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.action_dim,
            got: space.action_dim,
        });
    }
    let (obs_dim, act_dim) = (space.total_dim(), spec.action_dim);
    let mut rng = rng_for(seed, Stream::Learner, 0);
    let mut agent = SacAgent::new(obs_dim, act_dim, &config.hidden, config.learning_rate, config.init_alpha, &mut rng);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity.min(steps.max(1)), obs_dim, act_dim);
    let mut space = space.clone();
    let mut builder = ObservationBuilder::new(space.clone());
    let params = UpdateParams {
        gamma: config.gamma,
        tau: config.tau,
        dropout,
    };
    let mut batch = replay::Batch::default();
    let mut history = Vec::new();
    let mut episode = 0u64;
    let mut state = env.reset(derive(seed, Stream::Env, episode));
    let mut current = builder.observe(&state)?;
    space.update_ranges(&current.frame)?;
    let mut ep_return = 0.0;

    for step in 0..steps {
        let a: Vec<f64> = if step < config.warmup_steps {
            (0..act_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.act(&current.vector, false, &mut rng)
        };
        let tr = env.step(&to_env_action(&a, &spec.action_low, &spec.action_high));
        builder.record(current.frame.clone(), tr.action.clone());
        let next = builder.observe(&tr.next_state)?;
        space.update_ranges(&next.frame)?;
        buffer.push(&current.vector, &a, tr.reward, &next.vector, tr.is_terminal());
        ep_return += tr.reward;
        if tr.done {
            history.push((step + 1, ep_return));
            ep_return = 0.0;
            episode += 1;
            state = env.reset(derive(seed, Stream::Env, episode));
            builder.reset();
            current = builder.observe(&state)?;
            space.update_ranges(&current.frame)?;
        } else {
            current = next;
        }

        if step >= config.warmup_steps && step % config.train_freq == 0 {
            for _ in 0..config.gradient_steps {
                buffer.sample(config.batch_size, &mut rng, &mut batch);
                let stats = agent.update(&batch, params, &mut rng);
                if !(stats.critic_loss.is_finite() && stats.actor_loss.is_finite() && stats.alpha.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        step,
                        what: format!("{stats:?}"),
                    });
                }
            }
        }
    }
    if !agent.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: steps,
            what: "non-finite parameters".into(),
        });
    }
    log::debug!(
        "trained {} on {} for {steps} steps: {} episodes, alpha {:.4}",
        space.name,
        spec.id,
        history.len(),
        agent.alpha()
    );
    Ok(TrainedModel {
        agent,
        space,
        config: config.clone(),
        reward_history: history,
        dropout_rate: dropout,
        seed,
        steps,
        action_low: spec.action_low,
        action_high: spec.action_high,
        buffer: Some(buffer),
    })
}

/// Replaces one channel of every newest frame by independent uniform draws
/// from its recorded range.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelOverride {
    pub channel: String,
}

/// Returns of `episodes` deterministic-policy episodes. Episode `k` resets
/// the environment from `derive(eval_seed, Eval, k)`, so calls with the same
/// `eval_seed` share initial states and environment noise.
pub fn evaluate_returns(
    model: &TrainedModel,
    env: &mut dyn Env,
    episodes: usize,
    channel_override: Option<&ChannelOverride>,
    eval_seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()));
    }
    let space = &model.space;
    let target = match channel_override {
        Some(o) => {
            let spec = space.channel(&o.channel)?;
            Some((space.frame_offset(&o.channel)?, spec))
        }
        None => None,
    };
    let mut builder = ObservationBuilder::new(space.clone());
    let mut policy_rng = rng_for(eval_seed, Stream::Learner, 0);
    let mut returns = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        let mut sampler = rng_for(eval_seed, Stream::Permtest, ep);
        let mut state = env.reset(derive(eval_seed, Stream::Eval, ep));
        builder.reset();
        let mut total = 0.0;
        loop {
            let obs = builder.observe_with(&state, |frame| {
                if let Some((offset, spec)) = target {
                    let values = spec.sample_uniform(&mut sampler);
                    frame[offset..offset + spec.dim].copy_from_slice(&values);
                }
            })?;
            let action = model.act(&obs.vector, true, &mut policy_rng)?;
            let tr = env.step(&action);
            total += tr.reward;
            if tr.done {
                break;
            }
            builder.record(obs.frame, tr.action);
            state = tr.next_state;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Mean deterministic-policy return; see [`evaluate_returns`].
pub fn evaluate(
    model: &TrainedModel,
    env: &mut dyn Env,
    episodes: usize,
    channel_override: Option<&ChannelOverride>,
    eval_seed: u64,
) -> Result<f64> {
    let r = evaluate_returns(model, env, episodes, channel_override, eval_seed)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}
