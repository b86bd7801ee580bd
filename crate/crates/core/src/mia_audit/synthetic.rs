use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Gaussian class blobs in the first two coordinates, low-variance nuisance
/// coordinates elsewhere, and a fraction of far outliers: each outlier has one
/// nuisance coordinate set to `±radius` and a uniformly random label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOutlierConfig {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub outlier_fraction: f64,
    pub radius: f64,
    pub class_separation: f64,
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for PlantedOutlierConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 40,
            classes: 3,
            outlier_fraction: 0.05,
            radius: 6.0,
            class_separation: 2.0,
            nuisance_scale: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedOutliers {
    /// One-hot labels.
    pub data: Dataset,
    pub labels: Vec<usize>,
    pub outlier: Vec<bool>,
}

pub fn planted_outliers(cfg: &PlantedOutlierConfig) -> Result<PlantedOutliers> {
    if cfg.d < 3 || cfg.classes < 2 || cfg.n < cfg.d || !(0.0..1.0).contains(&cfg.outlier_fraction) {
        return Err(Error::InvalidArgument(format!("invalid planted-outlier config {cfg:?}")));
    }
    let mut g = rng::normals(cfg.seed, "mia_audit.synthetic", 0);
    let mut u = rng::stream(cfg.seed, "mia_audit.synthetic", 1);
    let n_out = (cfg.outlier_fraction * cfg.n as f64).round() as usize;
    let mut outlier = vec![false; cfg.n];
    for i in sample(&mut u, cfg.n, n_out) {
        outlier[i] = true;
    }
    let mut x = DMatrix::zeros(cfg.n, cfg.d);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let blob = i % cfg.classes;
        let angle = 2.0 * std::f64::consts::PI * blob as f64 / cfg.classes as f64;
        x[(i, 0)] = cfg.class_separation * angle.cos() + g.next();
        x[(i, 1)] = cfg.class_separation * angle.sin() + g.next();
        for c in 2..cfg.d {
            x[(i, c)] = cfg.nuisance_scale * g.next();
        }
        if outlier[i] {
            let c = u.random_range(2..cfg.d);
            let sign = if u.random_bool(0.5) { 1.0 } else { -1.0 };
            x[(i, c)] = sign * cfg.radius;
            labels.push(u.random_range(0..cfg.classes));
        } else {
            labels.push(blob);
        }
    }
    let y = DMatrix::from_fn(cfg.n, cfg.classes, |i, k| if labels[i] == k { 1.0 } else { 0.0 });
    Ok(PlantedOutliers {
        data: Dataset::new(x, y)?,
        labels,
        outlier,
    })
}
