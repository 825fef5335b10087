//! One-legged planar hopper on flat ground.
//!
//! Four bodies (torso, thigh, leg, foot) and three actuated hinges. Ground
//! contact acts on the heel and toe of the foot through a penalty
//! spring-damper with capped viscous friction. The contact model is stiff, so
//! each control step integrates `substeps` semi-implicit Euler steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::multibody::{articulated_state, BodyKinematics, Link, PlanarChain, Vec2};
use super::{DoneReason, Env, EnvSpec, EnvState, Transition, ROOT_DOF};
use crate::error::Result;

const FOOT: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopperParams {
    pub masses: [f64; 4],
    pub lengths: [f64; 4],
    pub gear: f64,
    /// Passive joint spring towards the nominal pose (N m / rad).
    pub joint_stiffness: f64,
    pub joint_damping: f64,
    /// Normal penalty stiffness per contact point (N / m).
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coeff: f64,
    pub friction_damping: f64,
    /// A contact flag fires when the lowest foot point is at or below this
    /// height (m).
    pub contact_threshold: f64,
    pub alive_bonus: f64,
    pub ctrl_cost: f64,
    pub min_height: f64,
    pub max_pitch: f64,
    pub reset_noise: f64,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
}

impl Default for HopperParams {
    fn default() -> Self {
        HopperParams {
            masses: [3.5, 4.0, 2.7, 5.0],
            lengths: [0.4, 0.45, 0.5, 0.39],
            gear: 200.0,
            joint_stiffness: 150.0,
            joint_damping: 5.0,
            contact_stiffness: 2.0e4,
            contact_damping: 300.0,
            friction_coeff: 0.9,
            friction_damping: 2000.0,
            contact_threshold: 0.002,
            alive_bonus: 1.0,
            ctrl_cost: 0.001,
            min_height: 0.7,
            max_pitch: 0.2,
            reset_noise: 0.005,
            dt: 0.01,
            substeps: 10,
            horizon: 1000,
        }
    }
}

pub struct PlanarHopper {
    pub params: HopperParams,
    chain: PlanarChain,
    spec: EnvSpec,
    state: EnvState,
    foot_points: [Vec2; 2],
}

impl Default for PlanarHopper {
    fn default() -> Self {
        Self::new(HopperParams::default())
    }
}

impl PlanarHopper {
    pub fn new(params: HopperParams) -> Self {
        let [lt, lth, ll, lf] = params.lengths;
        let [mt, mth, ml, mf] = params.masses;
        // the foot extends from 1/3 behind the ankle to 2/3 in front of it
        let foot_com = lf / 2.0 - lf / 3.0;
        let chain = PlanarChain {
            root_mass: mt,
            root_inertia: mt * lt * lt / 12.0,
            links: vec![
                Link::rod(mth, lth, [0.0, -lt / 2.0], [0.0, -1.0]),
                Link::rod(ml, ll, [0.0, -lth / 2.0], [0.0, -1.0]),
                Link {
                    mass: mf,
                    inertia: mf * lf * lf / 12.0,
                    joint_offset: [0.0, -ll / 2.0],
                    com_offset: [foot_com, 0.0],
                },
            ],
            gravity: 9.81,
            active_root: [true, true, true],
        };
        let spec = EnvSpec {
            id: "planar-hopper".into(),
            action_dim: 3,
            joint_count: 3,
            body_count: 4,
            contact_site_count: 1,
            dt: params.dt,
            horizon: params.horizon,
            reward: format!(
                "forward velocity + {} alive bonus - {} * |a|^2",
                params.alive_bonus, params.ctrl_cost
            ),
            action_low: vec![-1.0; 3],
            action_high: vec![1.0; 3],
            articulated: true,
            extra_channels: Vec::new(),
        };
        let mut env = PlanarHopper {
            params,
            chain,
            spec,
            state: EnvState::default(),
            foot_points: [[-lf / 2.0, 0.0], [lf / 2.0, 0.0]],
        };
        env.state = env.nominal();
        env
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    /// Torso COM height at which the standing hopper's weight is carried by
    /// the static contact penetration.
    pub fn nominal_height(&self) -> f64 {
        let [lt, lth, ll, _] = self.params.lengths;
        let weight: f64 = self.params.masses.iter().sum::<f64>() * self.chain.gravity;
        let sink = weight / (2.0 * self.params.contact_stiffness);
        lt / 2.0 + lth + ll - sink
    }

    pub fn nominal(&self) -> EnvState {
        let mut q = vec![0.0; self.chain.dof()];
        q[1] = self.nominal_height();
        self.state_from(q, vec![0.0; self.chain.dof()], None, 0)
    }

    pub fn set_state(&mut self, q: Vec<f64>, qdot: Vec<f64>) {
        self.state = self.state_from(q, qdot, None, 0);
    }

    /// Lowest height among the foot contact points.
    pub fn foot_height(&self, q: &[f64]) -> f64 {
        self.foot_points
            .iter()
            .map(|&p| self.chain.point_rel(q, FOOT, p)[1])
            .fold(f64::INFINITY, f64::min)
    }

    fn contact_flags(&self, q: &[f64]) -> Vec<f64> {
        let touching = self.foot_height(q) <= self.params.contact_threshold;
        vec![if touching { 1.0 } else { 0.0 }]
    }

    fn state_from(&self, q: Vec<f64>, qdot: Vec<f64>, prev: Option<Vec2>, t: usize) -> EnvState {
        let contacts = self.contact_flags(&q);
        articulated_state(&self.chain, q, qdot, prev, self.params.dt, contacts, t)
    }

    fn generalized_force(&self, action: &[f64], q: &[f64], qdot: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let mut tau = vec![0.0; self.chain.dof()];
        for (j, a) in action.iter().enumerate() {
            let i = ROOT_DOF + j;
            tau[i] = p.gear * a - p.joint_stiffness * q[i] - p.joint_damping * qdot[i];
        }
        for &point in &self.foot_points {
            let pos = self.chain.point_rel(q, FOOT, point);
            if pos[1] >= 0.0 {
                continue;
            }
            let vel = self.chain.point_velocity(q, qdot, FOOT, point);
            let normal = (-p.contact_stiffness * pos[1] - p.contact_damping * vel[1]).max(0.0);
            let cap = p.friction_coeff * normal;
            let tangent = (-p.friction_damping * vel[0]).clamp(-cap, cap);
            let gen = self.chain.point_force(q, FOOT, point, [tangent, normal]);
            for (t, g) in tau.iter_mut().zip(gen) {
                *t += g;
            }
        }
        tau
    }
}

impl Env for PlanarHopper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.params.reset_noise;
        let mut q = vec![0.0; self.chain.dof()];
        q[1] = self.nominal_height();
        let mut qd = vec![0.0; self.chain.dof()];
        for i in ROOT_DOF..q.len() {
            q[i] = rng.random_range(-w..=w);
        }
        for v in qd.iter_mut() {
            *v = rng.random_range(-w..=w);
        }
        self.state = self.state_from(q, qd, None, 0);
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Transition {
        let action = self.spec.clamp_action(action);
        let prev = self.state.clone();
        let p = &self.params;
        let h = p.dt / p.substeps as f64;
        let mut q = prev.q.clone();
        let mut qd = prev.qdot.clone();
        for _ in 0..p.substeps {
            let tau = self.generalized_force(&action, &q, &qd);
            let qdd = self.chain.forward_dynamics(&q, &qd, &tau);
            for i in 0..q.len() {
                qd[i] += h * qdd[i];
                q[i] += h * qd[i];
            }
        }
        let t = prev.t + 1;
        let finite = q.iter().chain(&qd).all(|v| v.is_finite());
        let (next, reward, failed) = if finite {
            let next = self.state_from(q, qd, Some(prev.com_vel[0]), t);
            let forward = (next.q[0] - prev.q[0]) / p.dt;
            let ctrl: f64 = action.iter().map(|a| a * a).sum();
            let reward = forward + p.alive_bonus - p.ctrl_cost * ctrl;
            let failed = !next.is_finite()
                || next.q[1] < p.min_height
                || next.q[2].abs() > p.max_pitch;
            (next, reward, failed)
        } else {
            let mut next = prev.clone();
            next.t = t;
            (next, 0.0, true)
        };
        let done_reason = if failed {
            Some(DoneReason::Failure)
        } else if t >= p.horizon {
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
    fn standing_start_touches_ground() {
        let mut env = PlanarHopper::default();
        let s = env.reset(1);
        assert_eq!(s.contacts, vec![1.0]);
    }

    #[test]
    fn rest_with_zero_action_is_static() {
        let mut env = PlanarHopper::default();
        env.state = env.nominal();
        let mut forward = 0.0f64;
        for _ in 0..300 {
            let tr = env.step(&[0.0; 3]);
            assert_eq!(tr.next_state.contacts, vec![1.0]);
            assert!(!tr.done, "hopper fell at t={}", tr.next_state.t);
            forward = forward.max(((tr.reward - 1.0) as f64).abs());
        }
        assert!(forward < 0.05, "forward reward drifted: {forward}");
    }

    #[test]
    fn flags_follow_foot_height() {
        let mut env = PlanarHopper::default();
        let mut q = env.nominal().q;
        q[1] += 0.3;
        env.set_state(q, vec![0.0; 6]);
        assert_eq!(env.state().contacts, vec![0.0]);
        let mut airborne = 0;
        for _ in 0..40 {
            let tr = env.step(&[0.0; 3]);
            let h = env.foot_height(&tr.next_state.q);
            let flag = tr.next_state.contacts[0];
            assert_eq!(flag == 1.0, h <= env.params.contact_threshold);
            if flag == 0.0 {
                airborne += 1;
            }
        }
        assert!(airborne > 5 && airborne < 40);
    }
}
