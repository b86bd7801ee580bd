//! GLS against its definition: retrain with one perturbed label and difference
//! the refitted prediction at that sample.

use levaudit_core::diff_models::{train_report, Activation, Architecture, DiffModel, LossKind, TrainConfig};
use levaudit_core::gls_engine::{gls_dense, CgConfig, LayerMask, Space};
use levaudit_core::nalgebra::DMatrix;
use levaudit_core::rng::normals;
use levaudit_core::Dataset;

const EPS: f64 = 1e-3;

fn gaussian(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut g = normals(seed, "refit.tests", 0);
    DMatrix::from_fn(rows, cols, |_, _| g.next())
}

fn tight(l2: Option<f64>) -> TrainConfig {
    TrainConfig {
        tolerance: 1e-10,
        max_epochs: 50_000,
        l2,
        ..TrainConfig::default()
    }
}

fn one_hot(x: &DMatrix<f64>, m: usize, seed: u64) -> DMatrix<f64> {
    let w = gaussian(seed, x.ncols(), m);
    let s = x * w + gaussian(seed + 1, x.nrows(), m) * 0.8;
    DMatrix::from_fn(x.nrows(), m, |i, c| {
        let best = (0..m).max_by(|a, b| s[(i, *a)].total_cmp(&s[(i, *b)])).unwrap();
        if best == c {
            1.0
        } else {
            0.0
        }
    })
}

/// Relative Frobenius gap between finite-difference refits and the GLS matrix
/// of the undamped objective, over `targets`.
fn refit_gap(arch: Architecture, loss: LossKind, data: &Dataset, space: Space, targets: &[usize]) -> f64 {
    let init = DiffModel::init(arch, 3).unwrap();
    let out = train_report(&init, loss, data, &tight(None)).unwrap();
    assert!(out.converged);
    let model = out.model;
    let cfg = CgConfig {
        damping: 0.0,
        ..CgConfig::default()
    };
    let gls = gls_dense(&model, loss, data, targets, &LayerMask::Full, space, &cfg).unwrap();
    let m = model.m();
    let mut worst: f64 = 0.0;
    for (g, &i) in gls.iter().zip(targets) {
        let mut fd = DMatrix::zeros(m, m);
        for v in 0..m {
            let at = |delta: f64| {
                let mut y = data.y().clone();
                y[(i, v)] += delta;
                let r = train_report(&model, loss, &data.with_y(y).unwrap(), &tight(Some(model.meta.l2))).unwrap();
                assert!(r.converged, "refit for sample {i} did not converge");
                let x = data.x_row(i);
                match space {
                    Space::Logit => r.model.predict(&x).unwrap(),
                    Space::Probability => r.model.probabilities(&x).unwrap(),
                }
            };
            let (up, dn) = (at(EPS), at(-EPS));
            for u in 0..m {
                fd[(u, v)] = (up[u] - dn[u]) / (2.0 * EPS);
            }
        }
        worst = worst.max((&fd - &g.matrix).norm() / g.matrix.norm());
    }
    worst
}

#[test]
fn linear_quadratic_refit() {
    let x = gaussian(1, 30, 3);
    let y = gaussian(2, 30, 2);
    let data = Dataset::new(x, y).unwrap();
    let gap = refit_gap(
        Architecture::Linear { d: 3, m: 2, bias: true },
        LossKind::Quadratic,
        &data,
        Space::Logit,
        &[0, 11, 29],
    );
    assert!(gap < 2e-2, "{gap}");
}

#[test]
fn multiclass_logistic_refit() {
    let x = gaussian(3, 50, 2);
    let data = Dataset::new(x.clone(), one_hot(&x, 3, 4)).unwrap();
    let arch = Architecture::Logistic { d: 2, m: 3 };
    for space in [Space::Logit, Space::Probability] {
        let gap = refit_gap(arch.clone(), LossKind::CrossEntropy, &data, space, &[1, 20, 44]);
        assert!(gap < 2e-2, "{space}: {gap}");
    }
}

#[test]
fn mlp_cross_entropy_refit() {
    let x = gaussian(5, 40, 2);
    let data = Dataset::new(x.clone(), one_hot(&x, 2, 6)).unwrap();
    let arch = Architecture::Mlp {
        widths: vec![2, 4, 2],
        activation: Activation::Tanh,
    };
    let gap = refit_gap(arch, LossKind::CrossEntropy, &data, Space::Probability, &[0, 17]);
    assert!(gap < 2e-2, "{gap}");
}

#[test]
fn mlp_quadratic_refit() {
    let x = gaussian(7, 40, 2);
    let y = x.map(|v| (1.3 * v).sin()).column_sum() * 0.5 + gaussian(8, 40, 1) * 0.1;
    let data = Dataset::new(x, DMatrix::from_column_slice(40, 1, y.as_slice())).unwrap();
    let arch = Architecture::Mlp {
        widths: vec![2, 5, 1],
        activation: Activation::Tanh,
    };
    let gap = refit_gap(arch, LossKind::Quadratic, &data, Space::Logit, &[3, 25]);
    assert!(gap < 2e-2, "{gap}");
}

#[test]
fn softplus_mlp_cross_entropy_refit() {
    let x = gaussian(9, 40, 2);
    let data = Dataset::new(x.clone(), one_hot(&x, 3, 10)).unwrap();
    let arch = Architecture::Mlp {
        widths: vec![2, 3, 3],
        activation: Activation::SoftplusRelu,
    };
    let gap = refit_gap(arch, LossKind::CrossEntropy, &data, Space::Logit, &[2, 33]);
    assert!(gap < 2e-2, "{gap}");
}
