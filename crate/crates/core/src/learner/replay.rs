//! Fixed-capacity ring buffer of transitions with uniform sampling.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    next_obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: Vec<f64>,
    len: usize,
    pos: usize,
}

/// A sampled minibatch in row-major layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// 1.0 where the next state is terminal (no bootstrap).
    pub terminal: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            obs_dim,
            action_dim,
            obs: vec![0.0; capacity * obs_dim],
            next_obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            terminal: vec![0.0; capacity],
            len: 0,
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores a transition, evicting the oldest one when full.
    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], terminal: bool) {
        let (o, a, i) = (self.obs_dim, self.action_dim, self.pos);
        self.obs[i * o..(i + 1) * o].copy_from_slice(obs);
        self.next_obs[i * o..(i + 1) * o].copy_from_slice(next_obs);
        self.actions[i * a..(i + 1) * a].copy_from_slice(action);
        self.rewards[i] = reward;
        self.terminal[i] = if terminal { 1.0 } else { 0.0 };
        self.pos = (self.pos + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// The `k`-th oldest stored transition.
    pub fn get(&self, k: usize) -> Option<(&[f64], &[f64], f64, &[f64], bool)> {
        if k >= self.len {
            return None;
        }
        let start = if self.len == self.capacity { self.pos } else { 0 };
        let i = (start + k) % self.capacity;
        let (o, a) = (self.obs_dim, self.action_dim);
        Some((
            &self.obs[i * o..(i + 1) * o],
            &self.actions[i * a..(i + 1) * a],
            self.rewards[i],
            &self.next_obs[i * o..(i + 1) * o],
            self.terminal[i] != 0.0,
        ))
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R, out: &mut Batch) {
        assert!(self.len > 0, "sampling from an empty buffer");
        let (o, a) = (self.obs_dim, self.action_dim);
        out.size = size;
        out.obs.clear();
        out.next_obs.clear();
        out.actions.clear();
        out.rewards.clear();
        out.terminal.clear();
        for _ in 0..size {
            let i = rng.random_range(0..self.len);
            out.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            out.next_obs.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            out.actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            out.rewards.push(self.rewards[i]);
            out.terminal.push(self.terminal[i]);
        }
    }
}
