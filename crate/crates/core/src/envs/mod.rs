//! Environment contract and the built-in planar environments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod diagnostic;
pub mod hopper;
pub mod multibody;
pub mod pendulum;

pub use diagnostic::{make_diagnostic_env, DiagnosticEnv};
pub use hopper::PlanarHopper;
pub use multibody::{BodyKinematics, PlanarChain};
pub use pendulum::CartDoublePendulum;

/// Number of root coordinates of every planar environment: `[x, z, pitch]`.
pub const ROOT_DOF: usize = 3;

/// Snapshot of an environment at one timestep.
///
/// `q = [x, z, pitch, joint angles...]`. Body quantities are stored in world
/// frame; `com_pos_rel` holds the same positions with the root horizontal
/// coordinate removed, computed directly from the forward kinematics so that
/// translated states produce bitwise-identical relative positions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub com_pos: Vec<[f64; 2]>,
    pub com_pos_rel: Vec<[f64; 2]>,
    pub com_vel: Vec<[f64; 2]>,
    pub body_rot: Vec<f64>,
    pub root_acc: [f64; 2],
    pub contacts: Vec<f64>,
    pub t: usize,
    /// Values of environment-specific channels, keyed by channel name.
    pub extras: BTreeMap<String, Vec<f64>>,
}

impl EnvState {
    pub fn is_finite(&self) -> bool {
        let flat = self
            .q
            .iter()
            .chain(&self.qdot)
            .chain(self.com_pos.iter().flatten())
            .chain(self.com_vel.iter().flatten())
            .chain(&self.body_rot)
            .chain(&self.root_acc)
            .chain(self.extras.values().flatten());
        flat.into_iter().all(|v| v.is_finite())
    }

    pub fn joint_count(&self) -> usize {
        self.q.len().saturating_sub(ROOT_DOF)
    }
}

/// Role of an environment-specific channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtraRole {
    /// Part of the environment's raw-sensor set.
    Base,
    /// Carries information the reward depends on.
    Relevant,
    /// Reward-independent noise.
    Noise,
    /// Informative early in an episode, unrelated afterwards.
    Deceptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraChannel {
    pub name: String,
    pub dim: usize,
    pub role: ExtraRole,
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub action_dim: usize,
    pub joint_count: usize,
    pub body_count: usize,
    pub contact_site_count: usize,
    pub dt: f64,
    pub horizon: usize,
    pub reward: String,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// `true` for rigid-body environments exposing the kinematic channels.
    pub articulated: bool,
    pub extra_channels: Vec<ExtraChannel>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let bounds_ok = self.action_low.len() == self.action_dim
            && self.action_high.len() == self.action_dim
            && self
                .action_low
                .iter()
                .zip(&self.action_high)
                .all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi);
        if !bounds_ok {
            return Err(Error::InvalidArgument(format!(
                "{}: action bounds must be finite and non-empty",
                self.id
            )));
        }
        if !(self.dt > 0.0) || self.horizon == 0 || self.action_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: dt, horizon and action_dim must be positive",
                self.id
            )));
        }
        Ok(())
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| if a.is_nan() { 0.0 } else { a.clamp(*lo, *hi) })
            .collect()
    }

    pub fn extras_with_role(&self, role: ExtraRole) -> impl Iterator<Item = &ExtraChannel> {
        self.extra_channels.iter().filter(move |c| c.role == role)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoneReason {
    Horizon,
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

impl Transition {
    /// True when the episode ended in a terminal (non-bootstrapped) state.
    pub fn is_terminal(&self) -> bool {
        self.done_reason == Some(DoneReason::Failure)
    }
}

/// A single-threaded environment state machine.
pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Samples an initial state; the same seed always yields the same state.
    fn reset(&mut self, seed: u64) -> EnvState;

    /// Advances one control step from the current state. Out-of-range actions
    /// are clamped to the action bounds.
    fn step(&mut self, action: &[f64]) -> Transition;

    fn state(&self) -> &EnvState;

    /// Forward kinematics of every body for generalized coordinates
    /// `q` and velocities `qdot`.
    fn body_kinematics(&self, q: &[f64], qdot: &[f64]) -> Result<BodyKinematics>;
}

/// Builds an environment from its string id.
///
/// Known ids: `cart-double-pendulum`, `planar-hopper`, `diagnostic`
/// (2 relevant, 2 noise, one deceptive channel) and `diagnostic-clean`
/// (same without the deceptive channel).
pub fn make_env(id: &str) -> Result<Box<dyn Env>> {
    match id {
        "cart-double-pendulum" | "pendulum" => Ok(Box::new(CartDoublePendulum::default())),
        "planar-hopper" | "hopper" => Ok(Box::new(PlanarHopper::default())),
        "diagnostic" => Ok(Box::new(make_diagnostic_env(2, 2, true, 0))),
        "diagnostic-clean" => Ok(Box::new(make_diagnostic_env(2, 2, false, 0))),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

/// Canonical id for aliases accepted by [`make_env`].
pub fn canonical_env_id(id: &str) -> Result<&'static str> {
    match id {
        "cart-double-pendulum" | "pendulum" => Ok("cart-double-pendulum"),
        "planar-hopper" | "hopper" => Ok("planar-hopper"),
        "diagnostic" => Ok("diagnostic"),
        "diagnostic-clean" => Ok("diagnostic-clean"),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}
