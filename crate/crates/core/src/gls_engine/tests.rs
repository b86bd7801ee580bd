use nalgebra::DMatrix;

use super::*;
use crate::diff_models::{fit, Activation, Architecture, TrainConfig};
use crate::linear_gaussian::fit_ols;

fn normals(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut g = crate::rng::normals(seed, "gls-test", 0);
    DMatrix::from_fn(n, d, |_, _| g.next())
}

fn tight() -> CgConfig {
    CgConfig {
        damping: 0.0,
        max_iters: 500,
        residual_tol: 1e-12,
        ..CgConfig::default()
    }
}

fn linear_model(d: usize, m: usize) -> DiffModel {
    let mut model = DiffModel::init(Architecture::Linear { d, m, bias: false }, 1).unwrap();
    model.meta.l2 = 0.0;
    model
}

fn labelled(n: usize, d: usize, m: usize, seed: u64) -> Dataset {
    let x = normals(n, d, seed);
    let y = DMatrix::from_fn(n, m, |i, k| {
        let c = if x[(i, 0)] > 0.3 * (k as f64 - 0.5) { 1 } else { 0 };
        if m == 1 {
            c as f64
        } else if (i + c) % m == k {
            1.0
        } else {
            0.0
        }
    });
    Dataset::new(x, y).unwrap()
}

#[test]
fn layer_mask_parsing() {
    assert_eq!("full".parse::<LayerMask>().unwrap(), LayerMask::Full);
    assert_eq!("last:2".parse::<LayerMask>().unwrap(), LayerMask::Last(2));
    assert!("last:x".parse::<LayerMask>().is_err());
    assert_eq!(LayerMask::Last(3).to_string(), "last:3");
    let model = DiffModel::init(
        Architecture::Mlp {
            widths: vec![2, 3, 4, 2],
            activation: Activation::Tanh,
        },
        0,
    )
    .unwrap();
    assert_eq!(LayerMask::Last(1).p_sub(&model).unwrap(), 10);
    assert_eq!(LayerMask::Full.p_sub(&model).unwrap(), model.p());
    assert!(LayerMask::Last(4).layers(&model).is_err());
}

#[test]
fn zero_operator_with_unit_damping_returns_rhs() {
    let zero = DenseOperator(DMatrix::zeros(4, 4));
    let op = Damped { op: &zero, damping: 1.0 };
    let jt = normals(4, 2, 3);
    let sol = cg_solve_operator(&op, &jt, &tight()).unwrap();
    assert!((sol.z - jt).amax() < 1e-15);
}

#[test]
fn cg_matches_dense_solve_on_linear_model() {
    let data = Dataset::new(normals(40, 5, 4), normals(40, 1, 5)).unwrap();
    let model = linear_model(5, 1);
    let jt = normals(5, 1, 6);
    let sol = cg_solve(&model, LossKind::Quadratic, &data, &jt, &tight(), &LayerMask::Full).unwrap();
    let h = data.x().transpose() * data.x() * (2.0 / 40.0);
    let oracle = h.lu().solve(&jt).unwrap();
    assert!((sol.z - oracle).amax() < 1e-8);
}

#[test]
fn heavy_damping_scales_rhs() {
    let data = Dataset::new(normals(20, 3, 7), normals(20, 1, 8)).unwrap();
    let model = linear_model(3, 1);
    let cfg = CgConfig {
        damping: 1e6,
        ..tight()
    };
    let jt = normals(3, 1, 9);
    let sol = cg_solve(&model, LossKind::Quadratic, &data, &jt, &cfg, &LayerMask::Full).unwrap();
    let h = data.x().transpose() * data.x() * (2.0 / 20.0);
    let bound = h.norm() / 1e6;
    let rel = (&sol.z - &jt / 1e6).norm() / (jt.norm() / 1e6);
    assert!(rel <= bound.max(1e-3));
}

#[test]
fn indefinite_operator_is_reported() {
    let op = DenseOperator(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0])));
    let rhs = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    assert!(matches!(cg_solve_operator(&op, &rhs, &tight()), Err(Error::IndefiniteCurvature { .. })));
}

#[test]
fn non_convergence_carries_partial_solution() {
    let op = DenseOperator(DMatrix::from_diagonal(&nalgebra::DVector::from_fn(30, |k, _| 1.0 + k as f64)));
    let rhs = DMatrix::from_element(30, 2, 1.0);
    let cfg = CgConfig {
        max_iters: 3,
        ..tight()
    };
    match cg_solve_operator(&op, &rhs, &cfg) {
        Err(Error::CgNonConvergence { iterations, residuals, partial, .. }) => {
            assert_eq!(iterations, 3);
            assert_eq!(residuals.len(), 2);
            assert_eq!(partial.len(), 2);
            assert!(residuals.iter().all(|r| *r > 1e-12));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn linear_gls_is_hat_diagonal() {
    let data = Dataset::new(normals(30, 4, 10), normals(30, 2, 11)).unwrap();
    let model = linear_model(4, 2);
    let targets: Vec<usize> = (0..30).collect();
    let cg = gls_compute(&model, LossKind::Quadratic, &data, &targets, &tight(), &LayerMask::Full, Space::Logit).unwrap();
    let dense = gls_dense(&model, LossKind::Quadratic, &data, &targets, &LayerMask::Full, Space::Logit, &tight()).unwrap();
    let ols = fit_ols(&data).unwrap();
    for (i, (c, d)) in cg.iter().zip(&dense).enumerate() {
        let c = c.as_ref().unwrap();
        let expect = DMatrix::identity(2, 2) * ols.leverage[i];
        assert!((&c.matrix - &expect).amax() < 1e-8);
        assert!((&d.matrix - &expect).amax() < 1e-8);
        assert!((c.trace / 2.0 - ols.leverage[i]).abs() < 1e-8);
    }
}

#[test]
fn single_point_interpolation() {
    let data = Dataset::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)).unwrap();
    let model = linear_model(1, 1);
    let g = gls_compute(&model, LossKind::Quadratic, &data, &[0], &tight(), &LayerMask::Full, Space::Logit).unwrap();
    assert!((g[0].as_ref().unwrap().trace - 1.0).abs() < 1e-12);
}

#[test]
fn identity_hessian_stub() {
    let h = DMatrix::identity(3, 3);
    let j = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let g = dense::gls_from_hessian(&h, &j, LossKind::CrossEntropy, 7).unwrap();
    assert!((g[(0, 0)] - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn probability_space_needs_cross_entropy() {
    let data = Dataset::new(normals(10, 2, 1), normals(10, 1, 2)).unwrap();
    let model = linear_model(2, 1);
    let r = gls_compute(&model, LossKind::Quadratic, &data, &[0], &tight(), &LayerMask::Full, Space::Probability);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn empty_targets_give_empty_report() {
    let data = Dataset::new(normals(10, 2, 1), normals(10, 1, 2)).unwrap();
    let model = linear_model(2, 1);
    let r = gls_compute(&model, LossKind::Quadratic, &data, &[], &tight(), &LayerMask::Full, Space::Logit).unwrap();
    assert!(r.is_empty());
    assert!(gls_dense(&model, LossKind::Quadratic, &data, &[], &LayerMask::Full, Space::Logit, &tight()).unwrap().is_empty());
}

#[test]
fn scalarization_examples() {
    let h = 0.3;
    let g = GlsMatrix::new(0, DMatrix::identity(4, 4) * h, Space::Logit);
    assert!((scalarize(&g, Scalarization::Trace) - 4.0 * h).abs() < 1e-15);
    assert!((scalarize(&g, Scalarization::Trace) / 4.0 - h).abs() < 1e-15);
    let z = GlsMatrix::new(0, DMatrix::zeros(3, 3), Space::Logit);
    for op in [Scalarization::Trace, Scalarization::Frobenius, Scalarization::Spectral] {
        assert_eq!(scalarize(&z, op), 0.0);
    }
    let a = normals(3, 3, 12);
    let svd_max = a.clone().singular_values().max();
    assert!((spectral(&a) - svd_max).abs() < 1e-8);
    assert!((frobenius(&a) - a.norm()).abs() < 1e-14);
}

#[test]
fn binary_logistic_closed_form_matches_engine() {
    let data = labelled(40, 2, 1, 13);
    let cfg = TrainConfig {
        tolerance: 1e-10,
        ..TrainConfig::default()
    };
    let model = fit(Architecture::Logistic { d: 2, m: 1 }, LossKind::CrossEntropy, &data, &cfg).unwrap();
    let cg_cfg = CgConfig {
        damping: 1e-3,
        residual_tol: 1e-12,
        max_iters: 200,
        ..CgConfig::default()
    };
    let ridge = model.meta.l2 + cg_cfg.damping;
    let closed = binary_logistic_gls(&model, data.x(), ridge).unwrap();
    let targets: Vec<usize> = (0..40).collect();
    let eng = gls_compute(&model, LossKind::CrossEntropy, &data, &targets, &cg_cfg, &LayerMask::Full, Space::Probability).unwrap();
    for (c, e) in closed.iter().zip(&eng) {
        let e = e.as_ref().unwrap().trace;
        assert!((c - e).abs() < 1e-6, "{c} vs {e}");
        assert!((-1e-9..=1.0 + 1e-9).contains(c));
    }
}

#[test]
fn symmetric_pair_has_equal_scores() {
    let data = Dataset::from_rows(&[vec![1.0], vec![-1.0]], &[vec![1.0], vec![0.0]]).unwrap();
    let cfg = TrainConfig {
        tolerance: 1e-12,
        l2: Some(1e-6),
        ..TrainConfig::default()
    };
    let model = fit(Architecture::Logistic { d: 1, m: 1 }, LossKind::CrossEntropy, &data, &cfg).unwrap();
    let s = binary_logistic_gls(&model, data.x(), 1e-6).unwrap();
    assert!((s[0] - s[1]).abs() < 1e-9);
}

#[test]
fn probability_columns_sum_to_zero() {
    let data = labelled(30, 2, 3, 14);
    let cfg = TrainConfig {
        tolerance: 1e-8,
        ..TrainConfig::default()
    };
    let model = fit(Architecture::Logistic { d: 2, m: 3 }, LossKind::CrossEntropy, &data, &cfg).unwrap();
    let g = gls_compute(&model, LossKind::CrossEntropy, &data, &[0, 5, 9], &CgConfig::default(), &LayerMask::Full, Space::Probability).unwrap();
    for r in g {
        let m = r.unwrap().matrix;
        for c in m.column_iter() {
            assert!(c.sum().abs() < 1e-10);
        }
    }
}

#[test]
fn last_layer_quadratic_examples() {
    let id = DMatrix::identity(5, 4);
    // Augmenting I_5's first four columns with ones gives a square full-rank G̃.
    let s = gls_last_layer_quadratic(&id, &[0, 1, 2, 3, 4], 0.0).unwrap();
    assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let f = normals(25, 3, 15);
    let all: Vec<usize> = (0..25).collect();
    let s = gls_last_layer_quadratic(&f, &all, 0.0).unwrap();
    assert!((s.iter().sum::<f64>() - 4.0).abs() < 1e-10);
    let rank_def = DMatrix::from_element(6, 1, 2.0);
    assert!(matches!(gls_last_layer_quadratic(&rank_def, &[0], 0.0), Err(Error::RankDeficient { .. })));
}

#[test]
fn last_layer_cross_entropy_one_hot_is_pure_damping() {
    let f = normals(8, 2, 16);
    let probs = DMatrix::from_fn(8, 3, |i, k| if i % 3 == k { 1.0 } else { 0.0 });
    let lambda = 0.1;
    let g = gls_last_layer_crossentropy(&f, &probs, &[0, 3], lambda, Space::Logit).unwrap();
    for r in g {
        let gt = [f[(r.index, 0)], f[(r.index, 1)], 1.0];
        let norm2: f64 = gt.iter().map(|v| v * v).sum();
        let expect = DMatrix::identity(3, 3) * (norm2 / (8.0 * lambda));
        assert!((r.matrix - expect).amax() < 1e-12);
    }
}

#[test]
fn two_class_cross_entropy_reduces_to_binary() {
    let f = normals(20, 2, 17);
    let mut pr = crate::rng::normals(17, "p", 0);
    let probs = DMatrix::from_fn(20, 2, |_, _| 0.0);
    let mut probs = probs;
    for i in 0..20 {
        let p = 1.0 / (1.0 + (-pr.next()).exp());
        probs[(i, 0)] = p;
        probs[(i, 1)] = 1.0 - p;
    }
    let rho = 1e-2;
    let all: Vec<usize> = (0..20).collect();
    let multi = gls_last_layer_crossentropy(&f, &probs, &all, rho, Space::Probability).unwrap();
    let w: Vec<f64> = (0..20).map(|i| probs[(i, 0)] * probs[(i, 1)]).collect();
    let binary = pregibon_leverage(&f, &w, rho / 2.0, &all).unwrap();
    for (g, b) in multi.iter().zip(&binary) {
        assert!((g.trace - b).abs() < 1e-6);
        assert!((g.matrix[(0, 0)] - g.matrix[(0, 1)] - b).abs() < 1e-6);
    }
}

#[test]
fn dense_guard_and_dense_quadratic_two_outputs() {
    let data = Dataset::new(normals(12, 3, 18), normals(12, 2, 19)).unwrap();
    let model = linear_model(3, 2);
    let ols = fit_ols(&data).unwrap();
    let d = gls_dense(&model, LossKind::Quadratic, &data, &[2, 7], &LayerMask::Full, Space::Logit, &tight()).unwrap();
    for g in d {
        assert!((g.matrix - DMatrix::identity(2, 2) * ols.leverage[g.index]).amax() < 1e-10);
    }
}

#[test]
fn singular_hessian_is_reported() {
    let f = normals(6, 2, 20);
    let probs = DMatrix::from_fn(6, 2, |i, k| if i % 2 == k { 1.0 } else { 0.0 });
    let r = gls_last_layer_crossentropy(&f, &probs, &[0], 0.0, Space::Logit);
    assert!(matches!(r, Err(Error::SingularHessian { .. })));
}
