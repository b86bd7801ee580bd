//! Shared fixtures for the benchmarks.

use levaudit_core::diff_models::{fit, Activation, Architecture, DiffModel, LossKind, TrainConfig};
use levaudit_core::nalgebra::DMatrix;
use levaudit_core::rng::normals;
use levaudit_core::Dataset;

pub fn gaussian_design(seed: u64, n: usize, d: usize, m: usize) -> Dataset {
    let mut g = normals(seed, "bench.design", 0);
    let x = DMatrix::from_fn(n, d, |_, _| g.next());
    let y = DMatrix::from_fn(n, m, |_, _| g.next());
    Dataset::new(x, y).unwrap()
}

/// Three Gaussian blobs in `d` dimensions with one-hot labels.
pub fn blobs(seed: u64, n: usize, d: usize) -> Dataset {
    let mut g = normals(seed, "bench.blobs", 0);
    let mut x = DMatrix::from_fn(n, d, |_, _| g.next());
    let y = DMatrix::from_fn(n, 3, |i, c| if i % 3 == c { 1.0 } else { 0.0 });
    for i in 0..n {
        x[(i, i % 3 % d)] += 2.0;
    }
    Dataset::new(x, y).unwrap()
}

pub fn trained_mlp(data: &Dataset, hidden: &[usize]) -> DiffModel {
    let mut widths = vec![data.d()];
    widths.extend_from_slice(hidden);
    widths.push(data.m());
    let arch = Architecture::Mlp {
        widths,
        activation: Activation::Tanh,
    };
    let cfg = TrainConfig {
        tolerance: 1e-6,
        max_epochs: 2000,
        ..TrainConfig::default()
    };
    fit(arch, LossKind::CrossEntropy, data, &cfg).unwrap()
}
