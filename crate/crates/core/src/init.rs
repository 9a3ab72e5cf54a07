//! Seeded parameter initializers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Matrix;
use crate::rng::Rng;

/// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rows, cols, a, rng)
}

pub fn uniform(rows: usize, cols: usize, a: f64, rng: &mut Rng) -> Matrix {
    let values = (0..rows * cols)
        .map(|_| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 })
        .collect();
    Matrix::from_vec(rows, cols, values).expect("sized")
}

/// Bias vector uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn bias_uniform(cols: usize, fan_in: usize, rng: &mut Rng) -> Matrix {
    uniform(1, cols, 1.0 / (fan_in as f64).sqrt(), rng)
}

pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, values).expect("sized")
}
