//! Planar floating-base serial chains.
//!
//! Generalized coordinates are `q = [x, z, pitch, j_1, ..., j_n]`. Body 0 is
//! the root; body `k` hangs off body `k - 1` through revolute joint `j_k`.
//! Absolute body angles accumulate: `phi_k = pitch + j_1 + ... + j_k`.
//!
//! Rotations act on `(x, z)` vectors as `R(phi) (a, b) = (a cos + b sin,
//! -a sin + b cos)`, i.e. a body-frame "up" vector `(0, 1)` tilts towards +x
//! for positive angles.
//!
//! Dynamics use the projected Newton-Euler form `M(q) qdd + h(q, qd) = tau`
//! with `M = sum m J^T J + I Jw^T Jw` and `h = sum m J^T (Jd qd + g e_z)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::ROOT_DOF;
use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

pub fn rotate(phi: f64, v: Vec2) -> Vec2 {
    let (s, c) = phi.sin_cos();
    [v[0] * c + v[1] * s, -v[0] * s + v[1] * c]
}

/// Derivative of `R(phi) s` with respect to `phi`, given `v = R(phi) s`.
fn perp(v: Vec2) -> Vec2 {
    [v[1], -v[0]]
}

pub fn rotation_matrix(phi: f64) -> [[f64; 2]; 2] {
    let (s, c) = phi.sin_cos();
    [[c, s], [-s, c]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    /// Rotational inertia about the link's centre of mass.
    pub inertia: f64,
    /// Joint location in the parent's frame, relative to the parent's COM.
    pub joint_offset: Vec2,
    /// COM location in this link's frame, relative to its joint.
    pub com_offset: Vec2,
}

impl Link {
    /// Uniform rod of `length` along the body-frame direction `dir` (unit).
    pub fn rod(mass: f64, length: f64, joint_offset: Vec2, dir: Vec2) -> Self {
        Link {
            mass,
            inertia: mass * length * length / 12.0,
            joint_offset,
            com_offset: [dir[0] * length / 2.0, dir[1] * length / 2.0],
        }
    }
}

/// Forward-kinematics result for all bodies.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyKinematics {
    pub com_pos: Vec<Vec2>,
    pub com_pos_rel: Vec<Vec2>,
    pub com_vel: Vec<Vec2>,
    pub body_rot: Vec<f64>,
    pub rot_mat: Vec<[[f64; 2]; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarChain {
    pub root_mass: f64,
    pub root_inertia: f64,
    pub links: Vec<Link>,
    pub gravity: f64,
    /// Which of `[x, z, pitch]` are free; locked root coordinates keep their
    /// value and have zero velocity.
    pub active_root: [bool; 3],
}

impl PlanarChain {
    pub fn dof(&self) -> usize {
        ROOT_DOF + self.links.len()
    }

    pub fn body_count(&self) -> usize {
        1 + self.links.len()
    }

    fn mass(&self, body: usize) -> f64 {
        if body == 0 {
            self.root_mass
        } else {
            self.links[body - 1].mass
        }
    }

    fn inertia(&self, body: usize) -> f64 {
        if body == 0 {
            self.root_inertia
        } else {
            self.links[body - 1].inertia
        }
    }

    /// Indices of the free generalized coordinates.
    pub fn active_dofs(&self) -> Vec<usize> {
        (0..self.dof())
            .filter(|&i| i >= ROOT_DOF || self.active_root[i])
            .collect()
    }

    pub fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Absolute angle of every body.
    pub fn angles(&self, q: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.body_count());
        let mut phi = q[2];
        out.push(phi);
        for j in &q[ROOT_DOF..] {
            phi += j;
            out.push(phi);
        }
        out
    }

    /// World-frame vectors whose sum is the offset of a body point from the
    /// root COM, tagged with the body whose angle rotates each vector.
    fn segments(&self, angles: &[f64], body: usize, offset: Vec2) -> Vec<(usize, Vec2)> {
        let mut segs = Vec::with_capacity(2 * body + 1);
        for k in 1..=body {
            let link = &self.links[k - 1];
            segs.push((k - 1, rotate(angles[k - 1], link.joint_offset)));
            segs.push((k, rotate(angles[k], link.com_offset)));
        }
        segs.push((body, rotate(angles[body], offset)));
        segs
    }

    /// Position of a body point relative to `(x, 0)`.
    pub fn point_rel(&self, q: &[f64], body: usize, offset: Vec2) -> Vec2 {
        let angles = self.angles(q);
        let mut p = [0.0, q[1]];
        for (_, v) in self.segments(&angles, body, offset) {
            p[0] += v[0];
            p[1] += v[1];
        }
        p
    }

    /// Translational Jacobian of a body point, one column per coordinate.
    pub fn point_jacobian(&self, q: &[f64], body: usize, offset: Vec2) -> Vec<Vec2> {
        let angles = self.angles(q);
        let mut jac = vec![[0.0; 2]; self.dof()];
        jac[0] = [1.0, 0.0];
        jac[1] = [0.0, 1.0];
        for (k, v) in self.segments(&angles, body, offset) {
            let d = perp(v);
            // pitch rotates every segment; joint m rotates bodies k >= m
            for col in std::iter::once(2).chain((1..=k).map(|m| ROOT_DOF + m - 1)) {
                jac[col][0] += d[0];
                jac[col][1] += d[1];
            }
        }
        jac
    }

    /// `Jd qd` for a body point: its acceleration when `qdd = 0`.
    fn point_bias_acc(&self, q: &[f64], qdot: &[f64], body: usize, offset: Vec2) -> Vec2 {
        let angles = self.angles(q);
        let rates = self.angles(qdot);
        let mut a = [0.0; 2];
        for (k, v) in self.segments(&angles, body, offset) {
            let w2 = rates[k] * rates[k];
            a[0] -= w2 * v[0];
            a[1] -= w2 * v[1];
        }
        a
    }

    pub fn point_velocity(&self, q: &[f64], qdot: &[f64], body: usize, offset: Vec2) -> Vec2 {
        let jac = self.point_jacobian(q, body, offset);
        let mut v = [0.0; 2];
        for (col, qd) in jac.iter().zip(qdot) {
            v[0] += col[0] * qd;
            v[1] += col[1] * qd;
        }
        v
    }

    pub fn kinematics(&self, q: &[f64], qdot: &[f64]) -> Result<BodyKinematics> {
        self.check_dim(q)?;
        self.check_dim(qdot)?;
        let angles = self.angles(q);
        let n = self.body_count();
        let mut out = BodyKinematics {
            com_pos: Vec::with_capacity(n),
            com_pos_rel: Vec::with_capacity(n),
            com_vel: Vec::with_capacity(n),
            body_rot: angles.clone(),
            rot_mat: angles.iter().map(|&a| rotation_matrix(a)).collect(),
        };
        for b in 0..n {
            let rel = self.point_rel(q, b, [0.0, 0.0]);
            out.com_pos.push([q[0] + rel[0], rel[1]]);
            out.com_pos_rel.push(rel);
            out.com_vel.push(self.point_velocity(q, qdot, b, [0.0, 0.0]));
        }
        Ok(out)
    }

    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        for b in 0..self.body_count() {
            let jac = self.point_jacobian(q, b, [0.0, 0.0]);
            let mass = self.mass(b);
            let inertia = self.inertia(b);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += mass * (jac[i][0] * jac[j][0] + jac[i][1] * jac[j][1]);
                }
            }
            // angular Jacobian: 1 for pitch and joints 1..=b
            let ang: Vec<usize> = std::iter::once(2)
                .chain((1..=b).map(|m| ROOT_DOF + m - 1))
                .collect();
            for &i in &ang {
                for &j in &ang {
                    m[(i, j)] += inertia;
                }
            }
        }
        m
    }

    /// Velocity-product and gravity terms `h(q, qd)`.
    pub fn bias(&self, q: &[f64], qdot: &[f64]) -> DVector<f64> {
        let n = self.dof();
        let mut h = DVector::zeros(n);
        for b in 0..self.body_count() {
            let jac = self.point_jacobian(q, b, [0.0, 0.0]);
            let acc = self.point_bias_acc(q, qdot, b, [0.0, 0.0]);
            let mass = self.mass(b);
            let f = [mass * acc[0], mass * (acc[1] + self.gravity)];
            for i in 0..n {
                h[i] += jac[i][0] * f[0] + jac[i][1] * f[1];
            }
        }
        h
    }

    /// Generalized accelerations for generalized forces `tau`. Locked root
    /// coordinates get zero acceleration.
    pub fn forward_dynamics(&self, q: &[f64], qdot: &[f64], tau: &[f64]) -> Vec<f64> {
        let active = self.active_dofs();
        let m = self.mass_matrix(q);
        let h = self.bias(q, qdot);
        let k = active.len();
        let mut ma = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for (r, &i) in active.iter().enumerate() {
            rhs[r] = tau[i] - h[i];
            for (c, &j) in active.iter().enumerate() {
                ma[(r, c)] = m[(i, j)];
            }
        }
        let sol = match ma.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => ma
                .lu()
                .solve(&rhs)
                .unwrap_or_else(|| DVector::from_element(k, f64::NAN)),
        };
        let mut qdd = vec![0.0; self.dof()];
        for (r, &i) in active.iter().enumerate() {
            qdd[i] = sol[r];
        }
        qdd
    }

    /// Kinetic plus gravitational potential energy (zero potential at z = 0).
    pub fn energy(&self, q: &[f64], qdot: &[f64]) -> f64 {
        let m = self.mass_matrix(q);
        let qd = DVector::from_column_slice(qdot);
        let kinetic = 0.5 * (qd.transpose() * &m * &qd)[(0, 0)];
        let potential: f64 = (0..self.body_count())
            .map(|b| self.mass(b) * self.gravity * self.point_rel(q, b, [0.0, 0.0])[1])
            .sum();
        kinetic + potential
    }

    /// Generalized force of a world-frame force applied at a body point.
    pub fn point_force(&self, q: &[f64], body: usize, offset: Vec2, force: Vec2) -> Vec<f64> {
        self.point_jacobian(q, body, offset)
            .iter()
            .map(|col| col[0] * force[0] + col[1] * force[1])
            .collect()
    }
}

/// Builds an [`EnvState`] for an articulated environment from its
/// generalized state. `root_acc` comes from finite-differencing the root COM
/// velocity against `prev_root_vel`.
pub fn articulated_state(
    chain: &PlanarChain,
    q: Vec<f64>,
    qdot: Vec<f64>,
    prev_root_vel: Option<Vec2>,
    dt: f64,
    contacts: Vec<f64>,
    t: usize,
) -> crate::envs::EnvState {
    let kin = chain
        .kinematics(&q, &qdot)
        .expect("articulated state has chain dimension");
    let root_vel = kin.com_vel[0];
    let root_acc = match prev_root_vel {
        Some(prev) => [(root_vel[0] - prev[0]) / dt, (root_vel[1] - prev[1]) / dt],
        None => [0.0, 0.0],
    };
    crate::envs::EnvState {
        q,
        qdot,
        com_pos: kin.com_pos,
        com_pos_rel: kin.com_pos_rel,
        com_vel: kin.com_vel,
        body_rot: kin.body_rot,
        root_acc,
        contacts,
        t,
        extras: Default::default(),
    }
}
