//! Weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Real, Tensor};

/// Tensor of independent `N(mean, std^2)` samples.
pub fn normal<T: Real, R: Rng + ?Sized>(shape: [usize; 4], mean: f64, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("finite, non-negative std");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::lit(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
