//! Diagnostic environment with known channel relevance.
//!
//! A hidden linear core `p` (one coordinate per relevant channel) evolves as
//! `p' = lambda p + step_gain g_i a_i + w` with `lambda > 1`, so it drifts away
//! from the origin unless the policy knows where it is. The reward
//! `exp(-|p|^2)` is a fixed smooth function of the core.
//!
//! Channels:
//! * `core_rate` (base): finite-difference rate of the core.
//! * `signal_k` (relevant): the k-th core coordinate.
//! * `noise_k` (noise): white uniform noise in `[-1, 1]`.
//! * `deceptive` (optional): for the first `deceptive_steps` steps of an
//!   episode it equals the discounted return the unactuated, noise-free core
//!   would collect over the rest of the episode; afterwards it follows a
//!   random walk with a per-episode drift, unrelated to the core.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::multibody::BodyKinematics;
use super::{DoneReason, Env, EnvSpec, EnvState, ExtraChannel, ExtraRole, Transition};
use crate::error::{Error, Result};

pub const BASE_CHANNEL: &str = "core_rate";
pub const DECEPTIVE_CHANNEL: &str = "deceptive";

pub fn signal_channel(k: usize) -> String {
    format!("signal_{}", k + 1)
}

pub fn noise_channel(k: usize) -> String {
    format!("noise_{}", k + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticParams {
    pub relevant_dims: usize,
    pub noise_dims: usize,
    pub deceptive: bool,
    /// Seeds the per-dimension input gains.
    pub seed: u64,
    pub growth: f64,
    pub step_gain: f64,
    pub process_noise: f64,
    pub init_range: f64,
    /// The episode fails once any core coordinate leaves `[-bound, bound]`.
    pub bound: f64,
    pub deceptive_steps: usize,
    pub deceptive_discount: f64,
    pub deceptive_drift: f64,
    pub deceptive_walk: f64,
    pub horizon: usize,
}

impl Default for DiagnosticParams {
    fn default() -> Self {
        DiagnosticParams {
            relevant_dims: 2,
            noise_dims: 2,
            deceptive: true,
            seed: 0,
            growth: 1.03,
            step_gain: 0.2,
            process_noise: 0.02,
            init_range: 1.0,
            bound: 2.5,
            deceptive_steps: 10,
            deceptive_discount: 0.99,
            deceptive_drift: 1.0,
            deceptive_walk: 0.2,
            horizon: 50,
        }
    }
}

pub struct DiagnosticEnv {
    pub params: DiagnosticParams,
    gains: Vec<f64>,
    spec: EnvSpec,
    state: EnvState,
    rng: ChaCha8Rng,
    drift: f64,
}

/// Builds a diagnostic environment; `relevant_dims` is raised to at least 1.
pub fn make_diagnostic_env(relevant_dims: usize, noise_dims: usize, deceptive: bool, seed: u64) -> DiagnosticEnv {
    DiagnosticEnv::new(DiagnosticParams {
        relevant_dims: relevant_dims.max(1),
        noise_dims,
        deceptive,
        seed,
        ..DiagnosticParams::default()
    })
}

impl DiagnosticEnv {
    pub fn new(params: DiagnosticParams) -> Self {
        let m = params.relevant_dims.max(1);
        let mut gain_rng = ChaCha8Rng::seed_from_u64(params.seed);
        let gains = (0..m).map(|_| gain_rng.random_range(0.8..1.2)).collect();
        let mut extra_channels = vec![ExtraChannel {
            name: BASE_CHANNEL.into(),
            dim: m,
            role: ExtraRole::Base,
        }];
        extra_channels.extend((0..m).map(|k| ExtraChannel {
            name: signal_channel(k),
            dim: 1,
            role: ExtraRole::Relevant,
        }));
        extra_channels.extend((0..params.noise_dims).map(|k| ExtraChannel {
            name: noise_channel(k),
            dim: 1,
            role: ExtraRole::Noise,
        }));
        if params.deceptive {
            extra_channels.push(ExtraChannel {
                name: DECEPTIVE_CHANNEL.into(),
                dim: 1,
                role: ExtraRole::Deceptive,
            });
        }
        let id = if params.deceptive { "diagnostic" } else { "diagnostic-clean" };
        let spec = EnvSpec {
            id: id.into(),
            action_dim: m,
            joint_count: 0,
            body_count: 0,
            contact_site_count: 0,
            dt: params.step_gain,
            horizon: params.horizon,
            reward: "exp(-|p|^2) of the hidden core".into(),
            action_low: vec![-1.0; m],
            action_high: vec![1.0; m],
            articulated: false,
            extra_channels,
        };
        let mut env = DiagnosticEnv {
            params,
            gains,
            spec,
            state: EnvState::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            drift: 0.0,
        };
        env.reset(0);
        env
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn reward_of(p: &[f64]) -> f64 {
        (-p.iter().map(|v| v * v).sum::<f64>()).exp()
    }

    fn out_of_bounds(&self, p: &[f64]) -> bool {
        p.iter().any(|v| v.abs() > self.params.bound)
    }

    /// Discounted return of the unactuated, noise-free core from `p` at
    /// time `t` until the horizon (or until it leaves the bounds).
    pub fn unactuated_value(&self, p: &[f64], t: usize) -> f64 {
        let mut p = p.to_vec();
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in t..self.params.horizon {
            p.iter_mut().for_each(|v| *v *= self.params.growth);
            if self.out_of_bounds(&p) {
                break;
            }
            total += discount * Self::reward_of(&p);
            discount *= self.params.deceptive_discount;
        }
        total
    }

    fn make_state(&mut self, p: Vec<f64>, rate: Vec<f64>, t: usize, prev_deceptive: Option<f64>) -> EnvState {
        let mut extras = BTreeMap::new();
        extras.insert(BASE_CHANNEL.to_string(), rate.clone());
        for (k, v) in p.iter().enumerate() {
            extras.insert(signal_channel(k), vec![*v]);
        }
        for k in 0..self.params.noise_dims {
            extras.insert(noise_channel(k), vec![self.rng.random_range(-1.0..=1.0)]);
        }
        if self.params.deceptive {
            let value = if t < self.params.deceptive_steps {
                self.unactuated_value(&p, t)
            } else {
                let z: f64 = self.rng.sample(StandardNormal);
                prev_deceptive.unwrap_or(0.0) + self.drift + self.params.deceptive_walk * z
            };
            extras.insert(DECEPTIVE_CHANNEL.to_string(), vec![value]);
        }
        EnvState {
            q: p,
            qdot: rate,
            t,
            extras,
            ..EnvState::default()
        }
    }
}

impl Env for DiagnosticEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.params.init_range;
        let p: Vec<f64> = (0..self.gains.len()).map(|_| self.rng.random_range(-r..=r)).collect();
        let d = self.params.deceptive_drift;
        self.drift = self.rng.random_range(-d..=d);
        let rate = vec![0.0; p.len()];
        self.state = self.make_state(p, rate, 0, None);
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let action = self.spec.clamp_action(action);
        let prev = self.state.clone();
        let par = &self.params;
        let mut p = prev.q.clone();
        for (i, v) in p.iter_mut().enumerate() {
            let w: f64 = self.rng.sample(StandardNormal);
            *v = par.growth * *v + par.step_gain * self.gains[i] * action[i] + par.process_noise * w;
        }
        let rate: Vec<f64> = p
            .iter()
            .zip(&prev.q)
            .map(|(a, b)| (a - b) / par.step_gain)
            .collect();
        let t = prev.t + 1;
        let failed = self.out_of_bounds(&p) || p.iter().any(|v| !v.is_finite());
        let reward = if p.iter().all(|v| v.is_finite()) { Self::reward_of(&p) } else { 0.0 };
        let prev_d = prev.extras.get(DECEPTIVE_CHANNEL).map(|v| v[0]);
        let next = if p.iter().all(|v| v.is_finite()) {
            self.make_state(p, rate, t, prev_d)
        } else {
            let mut s = prev.clone();
            s.t = t;
            s
        };
        let done_reason = if failed {
            Some(DoneReason::Failure)
        } else if t >= self.params.horizon {
            Some(DoneReason::Horizon)
        } else {
            None
        };
        self.state = next.clone();
        Transition {
            state: prev,
            action,
            reward,
            next_state: next,
            done: done_reason.is_some(),
            done_reason,
        }
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn body_kinematics(&self, _q: &[f64], _qdot: &[f64]) -> Result<BodyKinematics> {
        Err(Error::InvalidArgument(format!(
            "{} has no rigid bodies",
            self.spec.id
        )))
    }
}
