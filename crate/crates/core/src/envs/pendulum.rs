//! Cart with a two-link pendulum balanced upright by a horizontal force.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::multibody::{articulated_state, BodyKinematics, Link, PlanarChain};
use super::{DoneReason, Env, EnvSpec, EnvState, Transition, ROOT_DOF};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub cart_mass: f64,
    pub link_mass: [f64; 2],
    pub link_length: [f64; 2],
    /// Force in newtons produced by a unit action.
    pub gear: f64,
    pub joint_damping: f64,
    pub alive_bonus: f64,
    /// The episode fails once the tip drops below this fraction of the
    /// total pendulum length.
    pub fall_fraction: f64,
    /// Half-width of the uniform perturbation applied at reset.
    pub reset_noise: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            cart_mass: 1.0,
            link_mass: [0.5, 0.5],
            link_length: [0.6, 0.6],
            gear: 20.0,
            joint_damping: 0.01,
            alive_bonus: 1.0,
            fall_fraction: 0.8,
            reset_noise: 0.005,
            dt: 0.01,
            horizon: 500,
        }
    }
}

pub struct CartDoublePendulum {
    pub params: PendulumParams,
    chain: PlanarChain,
    spec: EnvSpec,
    state: EnvState,
}

impl Default for CartDoublePendulum {
    fn default() -> Self {
        Self::new(PendulumParams::default())
    }
}

impl CartDoublePendulum {
    pub fn new(params: PendulumParams) -> Self {
        let [l1, l2] = params.link_length;
        let chain = PlanarChain {
            root_mass: params.cart_mass,
            root_inertia: 0.0,
            links: vec![
                Link::rod(params.link_mass[0], l1, [0.0, 0.0], [0.0, 1.0]),
                Link::rod(params.link_mass[1], l2, [0.0, l1 / 2.0], [0.0, 1.0]),
            ],
            gravity: 9.81,
            active_root: [true, false, false],
        };
        let spec = EnvSpec {
            id: "cart-double-pendulum".into(),
            action_dim: 1,
            joint_count: 2,
            body_count: 3,
            contact_site_count: 0,
            dt: params.dt,
            horizon: params.horizon,
            reward: format!(
                "{} alive bonus minus squared tip-height error",
                params.alive_bonus
            ),
            action_low: vec![-1.0],
            action_high: vec![1.0],
            articulated: true,
            extra_channels: Vec::new(),
        };
        let mut env = CartDoublePendulum {
            params,
            chain,
            spec,
            state: EnvState::default(),
        };
        env.state = env.upright();
        env
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    /// The exact upright equilibrium with the cart at the origin.
    pub fn upright(&self) -> EnvState {
        self.state_from(vec![0.0; 5], vec![0.0; 5], None, 0)
    }

    pub fn set_state(&mut self, q: Vec<f64>, qdot: Vec<f64>) {
        self.state = self.state_from(q, qdot, None, 0);
    }

    fn state_from(&self, q: Vec<f64>, qdot: Vec<f64>, prev: Option<[f64; 2]>, t: usize) -> EnvState {
        articulated_state(&self.chain, q, qdot, prev, self.params.dt, Vec::new(), t)
    }

    pub fn total_length(&self) -> f64 {
        self.params.link_length[0] + self.params.link_length[1]
    }

    /// Height of the pendulum tip above the cart.
    pub fn tip_height(&self, q: &[f64]) -> f64 {
        let tip = [0.0, self.params.link_length[1] / 2.0];
        self.chain.point_rel(q, 2, tip)[1] - q[1]
    }

    /// Horizontal tip offset from the cart.
    pub fn tip_offset(&self, q: &[f64]) -> f64 {
        let tip = [0.0, self.params.link_length[1] / 2.0];
        self.chain.point_rel(q, 2, tip)[0]
    }

    pub fn energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        self.chain.energy(q, qdot)
    }

    fn generalized_force(&self, action: &[f64], qdot: &[f64]) -> Vec<f64> {
        let mut tau = vec![0.0; self.chain.dof()];
        tau[0] = self.params.gear * action[0];
        for j in ROOT_DOF..tau.len() {
            tau[j] = -self.params.joint_damping * qdot[j];
        }
        tau
    }
}

impl Env for CartDoublePendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.params.reset_noise;
        let mut q = vec![0.0; 5];
        let mut qd = vec![0.0; 5];
        for i in [0, 3, 4] {
            q[i] = rng.random_range(-w..=w);
            qd[i] = rng.random_range(-w..=w);
        }
        self.state = self.state_from(q, qd, None, 0);
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let action = self.spec.clamp_action(action);
        let prev = self.state.clone();
        let dt = self.params.dt;
        let tau = self.generalized_force(&action, &prev.qdot);
        let qdd = self.chain.forward_dynamics(&prev.q, &prev.qdot, &tau);
        let qdot: Vec<f64> = prev.qdot.iter().zip(&qdd).map(|(v, a)| v + dt * a).collect();
        let q: Vec<f64> = prev.q.iter().zip(&qdot).map(|(p, v)| p + dt * v).collect();
        let t = prev.t + 1;

        let finite = q.iter().chain(&qdot).all(|v| v.is_finite());
        let (next, reward, failed) = if finite {
            let next = self.state_from(q, qdot, Some(prev.com_vel[0]), t);
            let tip = self.tip_height(&next.q);
            let err = self.total_length() - tip;
            let reward = self.params.alive_bonus - err * err;
            let failed = !next.is_finite() || tip <= self.params.fall_fraction * self.total_length();
            (next, reward, failed)
        } else {
            let mut next = prev.clone();
            next.t = t;
            (next, 0.0, true)
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

    fn body_kinematics(&self, q: &[f64], qdot: &[f64]) -> Result<BodyKinematics> {
        self.chain.kinematics(q, qdot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let mut env = CartDoublePendulum::default();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        assert_ne!(a, env.reset(8));
    }

    #[test]
    fn out_of_bounds_action_matches_clamped() {
        let mut env = CartDoublePendulum::default();
        env.reset(3);
        let a = env.step(&[5.0]);
        env.reset(3);
        let b = env.step(&[1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn upright_equilibrium_stays_put() {
        let mut env = CartDoublePendulum::default();
        env.state = env.upright();
        for _ in 0..10 {
            env.step(&[0.0]);
        }
        let dev = env.tip_offset(&env.state.q).abs();
        assert!(dev < 1e-3, "tip deviation {dev}");
    }

    #[test]
    fn horizon_ends_the_episode() {
        let mut params = PendulumParams::default();
        params.horizon = 3;
        let mut env = CartDoublePendulum::new(params);
        env.reset(0);
        assert!(!env.step(&[0.0]).done);
        assert!(!env.step(&[0.0]).done);
        let last = env.step(&[0.0]);
        assert!(last.done);
        assert_eq!(last.done_reason, Some(DoneReason::Horizon));
    }
}
