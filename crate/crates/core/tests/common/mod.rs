#![allow(dead_code)]

use ndarray::Array2;
use obsearch_core::learner::Mlp;
use rand::Rng;

/// Largest relative error between the analytic parameter gradient of
/// `sum(w * mlp(x))` and central finite differences.
pub fn gradient_check<R: Rng>(rng: &mut R) -> f64 {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=8));
    }
    sizes.push(rng.random_range(1..=4));
    let mut mlp = Mlp::new(&sizes, rng);
    let batch = rng.random_range(1..=4);
    let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(-2.0..2.0));
    let w = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.random_range(-1.0..1.0));
    let (_, cache) = mlp.forward_cached(x.view());
    let (grad, _) = mlp.backward(&cache, w.clone());
    let loss = |m: &Mlp| (m.forward(x.view()) * &w).sum();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = mlp.params()[i];
        mlp.params_mut()[i] = orig + h;
        let up = loss(&mlp);
        mlp.params_mut()[i] = orig - h;
        let down = loss(&mlp);
        mlp.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs());
        // both gradients vanish: relative error is undefined, absolute is tiny
        let err = if scale < 1e-7 { 0.0 } else { (grad[i] - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}
