//! Seeded parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Mat;

pub fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Mat {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Mat::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn zeros(rows: usize, cols: usize) -> Mat {
    Mat::zeros((rows, cols))
}

pub fn ones(rows: usize, cols: usize) -> Mat {
    Mat::ones((rows, cols))
}
