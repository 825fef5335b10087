use obsearch_core::envs::diagnostic::{signal_channel, DiagnosticEnv, DiagnosticParams, DECEPTIVE_CHANNEL};
use obsearch_core::envs::pendulum::PendulumParams;
use obsearch_core::envs::{make_env, CartDoublePendulum, DoneReason, Env, EnvState, PlanarHopper};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-form cart double pendulum in absolute angles `phi1 = j1`,
/// `phi2 = j1 + j2` (tilt towards +x). Returns `(xdd, j1dd, j2dd)`.
fn closed_form_accel(p: &PendulumParams, q: &[f64], qd: &[f64], force: f64) -> [f64; 3] {
    let (m0, m1, m2) = (p.cart_mass, p.link_mass[0], p.link_mass[1]);
    let (l1, l2) = (p.link_length[0], p.link_length[1]);
    let (a1, a2) = (l1 / 2.0, l2 / 2.0);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    let g = 9.81;
    let (f1, f2) = (q[3], q[3] + q[4]);
    let (w1, w2) = (qd[3], qd[3] + qd[4]);
    let k1 = m1 * a1 + m2 * l1;
    let k2 = m2 * a2;
    let c12 = m2 * l1 * a2;
    let m = [
        [m0 + m1 + m2, k1 * f1.cos(), k2 * f2.cos()],
        [k1 * f1.cos(), m1 * a1 * a1 + i1 + m2 * l1 * l1, c12 * (f1 - f2).cos()],
        [k2 * f2.cos(), c12 * (f1 - f2).cos(), m2 * a2 * a2 + i2],
    ];
    let rhs = [
        force + k1 * f1.sin() * w1 * w1 + k2 * f2.sin() * w2 * w2,
        -c12 * (f1 - f2).sin() * w2 * w2 + k1 * g * f1.sin(),
        c12 * (f1 - f2).sin() * w1 * w1 + k2 * g * f2.sin(),
    ];
    let s = solve3(m, rhs);
    [s[0], s[1], s[2] - s[1]]
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut a = m;
        for r in 0..3 {
            a[r][c] = b[r];
        }
        *o = det(a) / d;
    }
    out
}

#[test]
fn pendulum_dynamics_match_closed_form() {
    let params = PendulumParams {
        joint_damping: 0.0,
        ..PendulumParams::default()
    };
    let env = CartDoublePendulum::new(params.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let q = vec![rng.random_range(-1.0..1.0), 0.0, 0.0, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let qd = vec![rng.random_range(-2.0..2.0), 0.0, 0.0, rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let force = rng.random_range(-20.0..20.0);
        let qdd = env.chain().forward_dynamics(&q, &qd, &[force, 0.0, 0.0, 0.0, 0.0]);
        let oracle = closed_form_accel(&params, &q, &qd, force);
        for (got, want) in [qdd[0], qdd[3], qdd[4]].iter().zip(oracle) {
            assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        }
        assert_eq!((qdd[1], qdd[2]), (0.0, 0.0));
    }
}

#[test]
fn unactuated_frictionless_pendulum_conserves_energy() {
    let mut env = CartDoublePendulum::new(PendulumParams {
        joint_damping: 0.0,
        ..PendulumParams::default()
    });
    // swings about the hanging configuration
    let pi = std::f64::consts::PI;
    for (j1, j2) in [(pi + 0.5, 0.0), (pi - 0.3, 0.4), (pi + 0.2, -0.3)] {
        env.set_state(vec![0.0, 0.0, 0.0, j1, j2], vec![0.0; 5]);
        let e0 = env.energy(&env.state().q, &env.state().qdot);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let tr = env.step(&[0.0]);
            let s = &tr.next_state;
            worst = worst.max((env.energy(&s.q, &s.qdot) - e0).abs());
        }
        assert!(worst <= 0.01 * e0.abs(), "drift {worst} of {e0} from ({j1}, {j2})");
    }
}

/// RK4 at dt/10 on the closed-form dynamics.
fn fine_oracle(params: &PendulumParams, mut q: [f64; 3], mut v: [f64; 3], steps: usize) -> [f64; 3] {
    let h = params.dt / 10.0;
    let acc = |q: [f64; 3], v: [f64; 3]| {
        let qq = [q[0], 0.0, 0.0, q[1], q[2]];
        let vv = [v[0], 0.0, 0.0, v[1], v[2]];
        closed_form_accel(params, &qq, &vv, -0.0)
    };
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for _ in 0..steps * 10 {
        let (k1q, k1v) = (v, acc(q, v));
        let (k2q, k2v) = (add(v, k1v, h / 2.0), acc(add(q, k1q, h / 2.0), add(v, k1v, h / 2.0)));
        let (k3q, k3v) = (add(v, k2v, h / 2.0), acc(add(q, k2q, h / 2.0), add(v, k2v, h / 2.0)));
        let (k4q, k4v) = (add(v, k3v, h), acc(add(q, k3q, h), add(v, k3v, h)));
        for i in 0..3 {
            q[i] += h / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    q
}

#[test]
fn near_upright_drift_is_small_and_matches_fine_integration() {
    let params = PendulumParams {
        joint_damping: 0.0,
        ..PendulumParams::default()
    };
    let mut env = CartDoublePendulum::new(params.clone());
    let state = env.upright();
    env.set_state(state.q.clone(), state.qdot.clone());
    let tip0 = (env.tip_offset(&state.q), env.tip_height(&state.q));
    for _ in 0..10 {
        env.step(&[0.0]);
    }
    let q = env.state().q.clone();
    let dev = (env.tip_offset(&q) - tip0.0).hypot(env.tip_height(&q) - tip0.1);
    assert!(dev < 1e-3, "{dev}");

    // same check from the edge of the reset distribution
    let q0 = [0.005, 0.005, -0.005];
    env.set_state(vec![q0[0], 0.0, 0.0, q0[1], q0[2]], vec![0.0; 5]);
    for _ in 0..10 {
        env.step(&[0.0]);
    }
    let fine = fine_oracle(&params, q0, [0.0; 3], 10);
    let q = &env.state().q;
    for (got, want) in [q[0], q[3], q[4]].iter().zip(fine) {
        assert!((got - want).abs() <= 0.05 * want.abs() + 1e-6, "{got} vs {want}");
    }
}

#[test]
fn zero_policy_survives_reset_noise() {
    let mut env = CartDoublePendulum::default();
    for seed in 0..50 {
        env.reset(seed);
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&[0.0]).done {
                break;
            }
        }
        assert!(steps >= 20, "seed {seed} fell after {steps} steps");
    }
}

#[test]
fn recomputed_kinematics_match_stored_state() {
    let mut env = PlanarHopper::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    env.reset(4);
    for _ in 0..300 {
        let a: Vec<f64> = (0..env.spec().action_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tr = env.step(&a);
        check_kinematics(&env, &tr.next_state);
        if tr.done {
            env.reset(rng.random());
        }
    }
}

fn check_kinematics(env: &dyn Env, s: &EnvState) {
    let kin = env.body_kinematics(&s.q, &s.qdot).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    for (a, b) in kin.com_pos.iter().flatten().zip(s.com_pos.iter().flatten()) {
        assert!(close(*a, *b));
    }
    for (a, b) in kin.body_rot.iter().zip(&s.body_rot) {
        assert!(close(*a, *b));
    }
    assert!(s.contacts.iter().all(|&c| c == 0.0 || c == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kinematic_consistency_on_random_rollouts(seed in any::<u64>(), hopper in any::<bool>(), len in 1usize..40) {
        let mut env: Box<dyn Env> = if hopper { Box::new(PlanarHopper::default()) } else { Box::new(CartDoublePendulum::default()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(seed);
        for _ in 0..len {
            let a: Vec<f64> = (0..env.spec().action_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
            let tr = env.step(&a);
            prop_assert!(tr.reward.is_finite());
            check_kinematics(env.as_ref(), &tr.next_state);
            if tr.done {
                break;
            }
        }
    }

    #[test]
    fn contact_flag_matches_penetration(seed in any::<u64>(), len in 1usize..60) {
        let mut env = PlanarHopper::default();
        let threshold = env.params.contact_threshold;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(seed);
        for _ in 0..len {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tr = env.step(&a);
            let s = &tr.next_state;
            let touching = env.foot_height(&s.q) <= threshold;
            prop_assert_eq!(s.contacts[0] == 1.0, touching);
            if tr.done {
                break;
            }
        }
    }
}

#[test]
fn episodes_are_reproducible_bitwise() {
    for id in ["pendulum", "hopper", "diagnostic"] {
        let run = || {
            let mut env = make_env(id).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut rewards = Vec::new();
            let mut s = env.reset(21);
            for _ in 0..120 {
                let a: Vec<f64> = (0..env.spec().action_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let tr = env.step(&a);
                rewards.push(tr.reward.to_bits());
                s = tr.next_state;
                if tr.done {
                    s = env.reset(22);
                }
            }
            (rewards, s)
        };
        assert_eq!(run(), run(), "{id}");
    }
}

#[test]
fn horizon_always_ends_episodes() {
    let mut env = make_env("diagnostic").unwrap();
    let horizon = env.spec().horizon;
    env.reset(0);
    let mut t = 0;
    loop {
        t += 1;
        let tr = env.step(&[0.0, 0.0]);
        if tr.done {
            assert!(t <= horizon);
            if t == horizon {
                assert_eq!(tr.done_reason, Some(DoneReason::Horizon));
            }
            break;
        }
    }
}

/// Deadbeat controller driving each core coordinate towards zero.
fn competent_action(env: &DiagnosticEnv, signals: &[f64]) -> Vec<f64> {
    let p = &env.params;
    signals
        .iter()
        .zip(env.gains())
        .map(|(s, g)| (-p.growth * s / (p.step_gain * g)).clamp(-1.0, 1.0))
        .collect()
}

/// Mean return of the competent policy, with `edit` applied to the state it
/// observes.
fn mc_return(deceptive: bool, episodes: u64, edit: impl Fn(&mut EnvState, &mut ChaCha8Rng)) -> f64 {
    let mut env = DiagnosticEnv::new(DiagnosticParams {
        deceptive,
        ..DiagnosticParams::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let m = env.params.relevant_dims;
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut s = env.reset(1000 + ep);
        loop {
            edit(&mut s, &mut rng);
            let signals: Vec<f64> = (0..m).map(|k| s.extras[&signal_channel(k)][0]).collect();
            let a = competent_action(&env, &signals);
            let tr = env.step(&a);
            total += tr.reward;
            if tr.done {
                break;
            }
            s = tr.next_state;
        }
    }
    total / episodes as f64
}

#[test]
fn diagnostic_oracle_noise_and_relevance() {
    let base = mc_return(false, 100, |_, _| {});
    // the competent policy reads signals only, so permuting noise changes nothing
    let noise = mc_return(false, 100, |s, rng| {
        s.extras.insert("noise_1".into(), vec![rng.random_range(-1.0..=1.0)]);
    });
    assert!((noise - base).abs() < 0.02 * base, "{noise} vs {base}");
    let zeroed = mc_return(false, 100, |s, _| {
        s.extras.insert(signal_channel(0), vec![0.0]);
    });
    assert!(zeroed < 0.5 * base, "{zeroed} vs {base}");
}

#[test]
fn deceptive_channel_tracks_value_then_decorrelates() {
    let mut env = DiagnosticEnv::new(DiagnosticParams::default());
    let steps = env.params.deceptive_steps;
    let mut early = Vec::new();
    let mut late = Vec::new();
    let mut prev: Option<(f64, f64)>;
    for ep in 0..200 {
        let mut s = env.reset(ep);
        prev = None;
        loop {
            // unactuated core: the channel should equal the realised future value
            let d = s.extras[DECEPTIVE_CHANNEL][0];
            let value = env.unactuated_value(&s.q, s.t);
            if s.t < steps {
                early.push((d, value));
            } else if let Some((pd, pv)) = prev {
                late.push((d - pd, value - pv));
            }
            prev = Some((d, value));
            let tr = env.step(&[0.0, 0.0]);
            if tr.done {
                break;
            }
            s = tr.next_state;
        }
    }
    assert!(early.iter().all(|(d, v)| (d - v).abs() < 1e-12));
    // after the switch its increments carry no information about the core
    let corr = correlation(&late);
    assert!(corr.abs() < 0.05, "late increment correlation {corr}");
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}
