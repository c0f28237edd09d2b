use rand::Rng;

use super::{Scalar, Tensor};

/// Uniform on `±1/√fan_in`, drawn in f64 so f32 and f64 models get the same values.
pub fn fan_in_uniform<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)))
}

pub fn zeros<F: Scalar>(shape: &[usize]) -> Tensor<F> {
    Tensor::zeros(shape)
}

pub fn ones<F: Scalar>(shape: &[usize]) -> Tensor<F> {
    Tensor::full(shape, F::one())
}
