use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::Scalar;

/// `sign(x) * sqrt(|x|)`, the factorized-noise transform.
pub fn noise_transform<T: Scalar>(x: T) -> T {
    x.signum() * x.abs().sqrt()
}

/// Independent standard-normal input/output noise of one factorized noisy layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseVectors<T> {
    pub eps_in: Vec<T>,
    pub eps_out: Vec<T>,
}

impl<T: Scalar> NoiseVectors<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            eps_in: vec![T::zero(); fan_in],
            eps_out: vec![T::zero(); fan_out],
        }
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for e in self.eps_in.iter_mut().chain(self.eps_out.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *e = T::of(z);
        }
    }

    /// Rank-one weight noise `f(eps_in) f(eps_out)^T`, shaped `[in, out]`.
    pub fn weight_noise(&self) -> Tensor<T> {
        let (n_in, n_out) = (self.eps_in.len(), self.eps_out.len());
        let fo: Vec<T> = self.eps_out.iter().map(|&e| noise_transform(e)).collect();
        let mut data = Vec::with_capacity(n_in * n_out);
        for &ei in &self.eps_in {
            let fi = noise_transform(ei);
            data.extend(fo.iter().map(|&o| fi * o));
        }
        Tensor::from_vec(&[n_in, n_out], data)
    }

    pub fn bias_noise(&self) -> Tensor<T> {
        Tensor::vector(self.eps_out.iter().map(|&e| noise_transform(e)).collect())
    }
}

/// A standalone factorized noisy linear layer, `y = x W + b` with
/// `W = mu_w + sigma_w * (f(eps_in) f(eps_out)^T)` and `b = mu_b + sigma_b * f(eps_out)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyLinear<T> {
    pub mu_w: Tensor<T>,
    pub sigma_w: Tensor<T>,
    pub mu_b: Tensor<T>,
    pub sigma_b: Tensor<T>,
    pub noise: NoiseVectors<T>,
}

impl<T: Scalar> NoisyLinear<T> {
    /// `mu ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, `sigma = 0.5 / sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect() };
        let mu_w = Tensor::from_vec(&[fan_in, fan_out], uniform(fan_in * fan_out));
        let mu_b = Tensor::vector(uniform(fan_out));
        let sigma = T::of(0.5 * bound);
        let mut layer = Self {
            mu_w,
            sigma_w: Tensor::full(&[fan_in, fan_out], sigma),
            mu_b,
            sigma_b: Tensor::full(&[fan_out], sigma),
            noise: NoiseVectors::zeros(fan_in, fan_out),
        };
        layer.reset_noise(rng);
        layer
    }

    pub fn reset_noise<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.noise.resample(rng);
    }

    pub fn effective_weight(&self) -> Tensor<T> {
        let n = self.noise.weight_noise();
        let sn = self.sigma_w.zip_map(&n, |s, e| s * e);
        self.mu_w.zip_map(&sn, |m, x| m + x)
    }

    pub fn effective_bias(&self) -> Tensor<T> {
        let n = self.noise.bias_noise();
        let sn = self.sigma_b.zip_map(&n, |s, e| s * e);
        self.mu_b.zip_map(&sn, |m, x| m + x)
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        linear(x, &self.effective_weight(), &self.effective_bias())
    }

    /// Forward pass with the noise switched off.
    pub fn forward_mean(&self, x: &[T]) -> Vec<T> {
        linear(x, &self.mu_w, &self.mu_b)
    }
}

fn linear<T: Scalar>(x: &[T], w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), n_in, "contract violation: noisy layer input width");
    (0..n_out)
        .map(|o| b.data()[o] + (0..n_in).map(|i| x[i] * w.data()[i * n_out + o]).sum::<T>())
        .collect()
}
