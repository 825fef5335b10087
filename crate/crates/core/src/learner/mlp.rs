//! Fully connected network with tanh hidden layers over a flat parameter
//! vector, with explicit backpropagation.
//!
//! Parameters are stored layer by layer as `W (in x out, row-major)` then
//! `b (out)`, so a batch `X (B x in)` maps to `X W + b`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
}

/// `tanh` through a single `exp`; `f64::tanh` is the main cost of small
/// networks and this is about twice as fast. Absolute error below `1e-15`.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1e-4 {
        // 1 - e cancels near zero
        return x * (1.0 - x * x / 3.0);
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`, at least two entries.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of weights
    /// and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        let net = Self::zeros(sizes);
        (params.len() == net.params.len()).then(|| Mlp {
            sizes: net.sizes,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, ArrayView1<'_, f64>)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let (i, o) = (w[0], w[1]);
            let wv = ArrayView2::from_shape((i, o), &self.params[offset..offset + i * o]).unwrap();
            let bv = ArrayView1::from(&self.params[offset + i * o..offset + i * o + o]);
            offset += i * o + o;
            (wv, bv)
        })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.run(x, None)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, Cache) {
        let mut cache = Cache { inputs: Vec::new() };
        let y = self.run(x, Some(&mut cache));
        (y, cache)
    }

    fn run(&self, x: ArrayView2<f64>, mut cache: Option<&mut Cache>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "input width");
        let n = self.sizes.len() - 1;
        let mut h = x.to_owned();
        for (k, (w, b)) in self.layers().enumerate() {
            let mut z = h.dot(&w);
            z += &b;
            if k + 1 < n {
                z.mapv_inplace(fast_tanh);
            }
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
            }
            h = z;
        }
        h
    }

    /// `dL/dx` only, skipping the parameter gradient.
    pub fn backward_input(&self, cache: &Cache, dy: Array2<f64>) -> Array2<f64> {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = dy;
        for k in (0..layers.len()).rev() {
            let mut dx = delta.dot(&layers[k].0.t());
            if k > 0 {
                ndarray::Zip::from(&mut dx)
                    .and(&cache.inputs[k])
                    .for_each(|d, &h| *d *= 1.0 - h * h);
            }
            delta = dx;
        }
        delta
    }

    /// Backpropagates `dy = dL/dy` through a cached forward pass. Returns the
    /// flat parameter gradient and `dL/dx`.
    pub fn backward(&self, cache: &Cache, dy: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = dy;
        for k in (0..layers.len()).rev() {
            let (w, _) = layers[k];
            let input = &cache.inputs[k];
            let (i, o) = w.dim();
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let off = offsets[k];
            // logical (row-major) order regardless of memory layout
            for (g, v) in grad[off..off + i * o].iter_mut().zip(gw.iter()) {
                *g = *v;
            }
            for (g, v) in grad[off + i * o..off + i * o + o].iter_mut().zip(gb.iter()) {
                *g = *v;
            }
            let mut dx = delta.dot(&w.t());
            if k > 0 {
                // input of layer k is tanh output of layer k-1
                ndarray::Zip::from(&mut dx)
                    .and(input)
                    .for_each(|d, &h| *d *= 1.0 - h * h);
            }
            delta = dx;
        }
        (grad, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_tanh_accuracy() {
        for i in -40000..=40000 {
            let x = i as f64 * 7.3e-4 + 1e-9;
            let (a, b) = (fast_tanh(x), x.tanh());
            assert!((a - b).abs() <= 1e-15, "{x}: {a} vs {b}");
        }
        assert_eq!(fast_tanh(800.0), 1.0);
        assert_eq!(fast_tanh(-800.0), -1.0);
    }

    #[test]
    fn input_gradient_matches_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[4, 6, 3], &mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let (y, cache) = net.forward_cached(x.view());
        let (_, dx) = net.backward(&cache, y.clone());
        assert_eq!(net.backward_input(&cache, y), dx);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]);
        let y = net.forward(Array2::from_elem((5, 3), 1.7).view());
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &Mlp| n.forward(x.view()).mapv(|v| v * v).sum() * 0.5;
        let (y, cache) = net.forward_cached(x.view());
        let (grad, _) = net.backward(&cache, y);
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
