use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    #[default]
    Trace,
    Frobenius,
    Spectral,
}

impl FromStr for Scalarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "trace" => Ok(Self::Trace),
            "frobenius" => Ok(Self::Frobenius),
            "spectral" => Ok(Self::Spectral),
            _ => Err(Error::InvalidArgument(format!("unknown scalarization {s:?}"))),
        }
    }
}

impl fmt::Display for Scalarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Trace => "trace",
            Self::Frobenius => "frobenius",
            Self::Spectral => "spectral",
        })
    }
}

pub fn trace(a: &DMatrix<f64>) -> f64 {
    a.diagonal().iter().sum()
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let mut v = DVector::from_fn(n, |k, _| 1.0 + 0.1 * k as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = &ata * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

pub fn scalarize_matrix(a: &DMatrix<f64>, op: Scalarization) -> f64 {
    match op {
        Scalarization::Trace => trace(a),
        Scalarization::Frobenius => frobenius(a),
        Scalarization::Spectral => spectral(a),
    }
}
