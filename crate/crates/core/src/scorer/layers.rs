//! Dense layers and activations with explicit backward passes.

use rand::Rng;

use crate::scalar::Scalar;

/// `y = W·x + b`, weights row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![T::zero(); n_in * n_out],
            bias: vec![T::zero(); n_out],
        }
    }

    /// Uniform in `[−k, k]`, `k = 1/√fan_in`, for weights and biases.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let k = 1.0 / (n_in as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-k..=k));
        let weight = (0..n_in * n_out).map(|_| draw()).collect();
        let bias = (0..n_out).map(|_| draw()).collect();
        Self {
            n_in,
            n_out,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|o| {
                let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
                row.iter().zip(x).fold(self.bias[o], |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let g = dy[o];
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.n_in;
            for i in 0..self.n_in {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Gradient through ReLU given its *input*.
pub fn relu_backward<T: Scalar>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
        .collect()
}

fn gelu_inner<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let half = T::lit(0.5);
    let value = half * x * (T::one() + th);
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    let deriv = half * (T::one() + th) + half * x * (T::one() - th * th) * dinner;
    (value, deriv)
}

pub fn gelu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| gelu_inner(v).0).collect()
}

pub fn gelu_backward<T: Scalar>(pre: &[T], dy: &[T]) -> Vec<T> {
    pre.iter().zip(dy).map(|(&p, &g)| g * gelu_inner(p).1).collect()
}

/// Three affine layers with ReLU between: `FC(ReLU(FC(ReLU(FC(x)))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck<T> {
    pub layers: [Linear<T>; 3],
}

pub struct BottleneckCache<T> {
    input: Vec<T>,
    pre1: Vec<T>,
    act1: Vec<T>,
    pre2: Vec<T>,
    act2: Vec<T>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            layers: [
                Linear::zeros(n_in, hidden),
                Linear::zeros(hidden, hidden),
                Linear::zeros(hidden, n_out),
            ],
        }
    }

    pub fn init<R: Rng + ?Sized>(n_in: usize, hidden: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::init(n_in, hidden, rng),
                Linear::init(hidden, hidden, rng),
                Linear::init(hidden, n_out, rng),
            ],
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, BottleneckCache<T>) {
        let pre1 = self.layers[0].forward(x);
        let act1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&act1);
        let act2 = relu(&pre2);
        let out = self.layers[2].forward(&act2);
        (
            out,
            BottleneckCache {
                input: x.to_vec(),
                pre1,
                act1,
                pre2,
                act2,
            },
        )
    }

    pub fn backward(&self, cache: &BottleneckCache<T>, dy: &[T], grad: &mut Bottleneck<T>) -> Vec<T> {
        let [g0, g1, g2] = &mut grad.layers;
        let d_act2 = self.layers[2].backward(&cache.act2, dy, g2);
        let d_pre2 = relu_backward(&cache.pre2, &d_act2);
        let d_act1 = self.layers[1].backward(&cache.act1, &d_pre2, g1);
        let d_pre1 = relu_backward(&cache.pre1, &d_act1);
        self.layers[0].backward(&cache.input, &d_pre1, g0)
    }
}
