//! Soft actor-critic with automatic entropy tuning.
//!
//! The actor outputs `[mean, log_std]` of a Gaussian squashed by `tanh`.
//! Each update adjusts the entropy coefficient first, then the twin critics,
//! then the actor against the freshly updated critics, then the target copies.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::Mlp;
use super::replay::Batch;

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// SAC target entropy for an action space of `action_dim` dimensions.
pub fn target_entropy(action_dim: usize) -> f64 {
    -(action_dim as f64)
}

/// Zeroes each entry with probability `rate` and rescales survivors by
/// `1 / (1 - rate)`.
pub fn apply_input_dropout<R: Rng + ?Sized>(values: &mut [f64], rate: f64, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    let keep = 1.0 / (1.0 - rate);
    for v in values {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        } else {
            *v *= keep;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt_actor: Adam,
    opt_critics: [Adam; 2],
    opt_alpha: Adam,
}

/// Hyperparameters consumed by [`SacAgent::update`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateParams {
    pub gamma: f64,
    pub tau: f64,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Mean of `-log pi(a|s)` over the batch.
    pub entropy: f64,
}

struct Squashed {
    log_std: Array2<f64>,
    /// Whether `log_std` was clamped (no gradient there).
    clamped: Array2<bool>,
    noise: Array2<f64>,
    action: Array2<f64>,
    log_prob: Vec<f64>,
}

fn squash<R: Rng + ?Sized>(out: &Array2<f64>, a: usize, rng: &mut R) -> Squashed {
    let noise = Array2::from_shape_fn((out.nrows(), a), |_| rng.sample::<f64, _>(StandardNormal));
    squash_with_noise(out, a, noise)
}

fn squash_with_noise(out: &Array2<f64>, a: usize, noise: Array2<f64>) -> Squashed {
    let n = out.nrows();
    let mean = out.slice(s![.., ..a]);
    let raw = out.slice(s![.., a..]);
    let clamped = raw.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let action = Array2::from_shape_fn((n, a), |(i, j)| {
        (mean[[i, j]] + log_std[[i, j]].exp() * noise[[i, j]]).tanh()
    });
    let log_prob = (0..n)
        .map(|i| {
            (0..a)
                .map(|j| {
                    let e = noise[[i, j]];
                    let t = action[[i, j]];
                    -0.5 * e * e - log_std[[i, j]] - HALF_LOG_2PI - (1.0 - t * t + SQUASH_EPS).ln()
                })
                .sum()
        })
        .collect();
    Squashed {
        log_std,
        clamped,
        noise,
        action,
        log_prob,
    }
}

/// Gradient of `mean(alpha * log_prob) + (critic term)` with respect to the
/// actor outputs `[mean, log_std]`, given `dq_da = dL/da` of the critic term.
fn policy_output_grad(pi: &Squashed, dq_da: &Array2<f64>, alpha: f64, nb: f64) -> Array2<f64> {
    let (b, a) = pi.action.dim();
    let mut d_out = Array2::zeros((b, 2 * a));
    for i in 0..b {
        for j in 0..a {
            let g = dq_da[[i, j]];
            let t = pi.action[[i, j]];
            let sech2 = 1.0 - t * t;
            let sigma = pi.log_std[[i, j]].exp();
            let e = pi.noise[[i, j]];
            // d log_prob / du of the tanh correction
            let k_u = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
            d_out[[i, j]] = alpha * k_u / nb + g * sech2;
            if !pi.clamped[[i, j]] {
                d_out[[i, a + j]] = alpha * (-1.0 + k_u * sigma * e) / nb + g * sech2 * sigma * e;
            }
        }
    }
    d_out
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        init_alpha: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            s
        };
        let actor = Mlp::new(&sizes(obs_dim, 2 * action_dim), rng);
        let critic_sizes = sizes(obs_dim + action_dim, 1);
        let critics = [Mlp::new(&critic_sizes, rng), Mlp::new(&critic_sizes, rng)];
        let targets = critics.clone();
        let n_actor = actor.params().len();
        let n_critic = critics[0].params().len();
        SacAgent {
            obs_dim,
            action_dim,
            opt_actor: Adam::new(n_actor, lr),
            opt_critics: [Adam::new(n_critic, lr), Adam::new(n_critic, lr)],
            opt_alpha: Adam::new(1, lr),
            actor,
            critics,
            targets,
            log_alpha: init_alpha.ln(),
            target_entropy: target_entropy(action_dim),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Action in `[-1, 1]^A` for one observation. Never applies dropout.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row");
        let out = self.actor.forward(x);
        let a = self.action_dim;
        if deterministic {
            (0..a).map(|j| out[[0, j]].tanh()).collect()
        } else {
            squash(&out, a, rng).action.row(0).to_vec()
        }
    }

    fn dropped<R: Rng + ?Sized>(obs: &Array2<f64>, rate: f64, rng: &mut R) -> Array2<f64> {
        let mut x = obs.clone();
        apply_input_dropout(x.as_slice_mut().unwrap(), rate, rng);
        x
    }

    /// Gradient of the critic loss `0.5 * mean((Q(x) - y)^2)` for one critic.
    pub fn critic_loss_grad(critic: &Mlp, input: ArrayView2<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let n = input.nrows() as f64;
        let (q, cache) = critic.forward_cached(input);
        let mut loss = 0.0;
        let dq = Array2::from_shape_fn((q.nrows(), 1), |(i, _)| {
            let e = q[[i, 0]] - y[i];
            loss += 0.5 * e * e / n;
            e / n
        });
        let (grad, _) = critic.backward(&cache, dq);
        (loss, grad)
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, p: UpdateParams, rng: &mut R) -> UpdateStats {
        let (b, o, a) = (batch.size, self.obs_dim, self.action_dim);
        let nb = b as f64;
        let obs = Array2::from_shape_vec((b, o), batch.obs.clone()).unwrap();
        let next_obs = Array2::from_shape_vec((b, o), batch.next_obs.clone()).unwrap();
        let actions = Array2::from_shape_vec((b, a), batch.actions.clone()).unwrap();
        let alpha = self.alpha();

        // policy sample on the current observations
        let actor_in = Self::dropped(&obs, p.dropout, rng);
        let (actor_out, actor_cache) = self.actor.forward_cached(actor_in.view());
        let pi = squash(&actor_out, a, rng);

        // entropy coefficient
        let mean_lp = pi.log_prob.iter().sum::<f64>() / nb;
        let g_alpha = -(mean_lp + self.target_entropy);
        let mut la = [self.log_alpha];
        self.opt_alpha.step(&mut la, &[g_alpha]);
        self.log_alpha = la[0];

        // critic targets
        let next_out = self.actor.forward(next_obs.view());
        let next_pi = squash(&next_out, a, rng);
        let target_in = concatenate![Axis(1), next_obs, next_pi.action];
        let qt1 = self.targets[0].forward(target_in.view());
        let qt2 = self.targets[1].forward(target_in.view());
        let y: Vec<f64> = (0..b)
            .map(|i| {
                let next_v = qt1[[i, 0]].min(qt2[[i, 0]]) - alpha * next_pi.log_prob[i];
                batch.rewards[i] + (1.0 - batch.terminal[i]) * p.gamma * next_v
            })
            .collect();

        let mut critic_loss = 0.0;
        for k in 0..2 {
            let input = concatenate![Axis(1), Self::dropped(&obs, p.dropout, rng), actions];
            let (loss, grad) = Self::critic_loss_grad(&self.critics[k], input.view(), &y);
            critic_loss += loss;
            self.opt_critics[k].step(self.critics[k].params_mut(), &grad);
        }

        // actor against the updated critics
        let q_in = concatenate![Axis(1), Self::dropped(&obs, p.dropout, rng), pi.action];
        let (q1, c1) = self.critics[0].forward_cached(q_in.view());
        let (q2, c2) = self.critics[1].forward_cached(q_in.view());
        let mut d1 = Array2::zeros((b, 1));
        let mut d2 = Array2::zeros((b, 1));
        let mut actor_loss = 0.0;
        for i in 0..b {
            let (qa, qb) = (q1[[i, 0]], q2[[i, 0]]);
            actor_loss += (alpha * pi.log_prob[i] - qa.min(qb)) / nb;
            if qa <= qb {
                d1[[i, 0]] = -1.0 / nb;
            } else {
                d2[[i, 0]] = -1.0 / nb;
            }
        }
        let dx1 = self.critics[0].backward_input(&c1, d1);
        let dx2 = self.critics[1].backward_input(&c2, d2);
        let dq_da = &dx1.slice(s![.., o..]) + &dx2.slice(s![.., o..]);
        let d_out = policy_output_grad(&pi, &dq_da, alpha, nb);
        let (g_actor, _) = self.actor.backward(&actor_cache, d_out);
        self.opt_actor.step(self.actor.params_mut(), &g_actor);

        self.soft_update(p.tau);
        UpdateStats {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            entropy: -mean_lp,
        }
    }

    /// `target = tau * online + (1 - tau) * target`.
    pub fn soft_update(&mut self, tau: f64) {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            for (tp, cp) in t.params_mut().iter_mut().zip(c.params()) {
                *tp = tau * cp + (1.0 - tau) * *tp;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_alpha.is_finite()
            && self.actor.params().iter().all(|v| v.is_finite())
            && self.critics.iter().all(|c| c.params().iter().all(|v| v.is_finite()))
    }

    /// Rebuilds an agent around loaded weights with fresh optimizer state.
    pub fn from_parts(actor: Mlp, critics: [Mlp; 2], targets: [Mlp; 2], log_alpha: f64, lr: f64) -> Self {
        let obs_dim = actor.input_dim();
        let action_dim = actor.output_dim() / 2;
        let n_critic = critics[0].params().len();
        SacAgent {
            obs_dim,
            action_dim,
            opt_actor: Adam::new(actor.params().len(), lr),
            opt_critics: [Adam::new(n_critic, lr), Adam::new(n_critic, lr)],
            opt_alpha: Adam::new(1, lr),
            actor,
            critics,
            targets,
            log_alpha,
            target_entropy: target_entropy(action_dim),
        }
    }
}
