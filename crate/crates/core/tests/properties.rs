use levaudit_core::diff_models::{fit, Architecture, DiffModel, LossKind, TrainConfig};
use levaudit_core::gls_engine::{gls_compute, gls_dense, CgConfig, LayerMask, Space};
use levaudit_core::linear_gaussian::fit_ols;
use levaudit_core::mc_sim::{simulate_residual_pairs, single_leverage_design, SimConfig};
use levaudit_core::mia_audit::{permutation_pvalue, simulator_attack, spearman, ObservationScale};
use levaudit_core::nalgebra::DMatrix;
use levaudit_core::rng::normals;
use levaudit_core::{Dataset, Error, GenerativeConfig};
use proptest::prelude::*;

fn gaussian(seed: u64, name: &str, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut g = normals(seed, name, 0);
    DMatrix::from_fn(rows, cols, |_, _| g.next())
}

fn binary_logistic(seed: u64, n: usize) -> (DiffModel, Dataset) {
    let x = gaussian(seed, "properties.logistic.x", n, 2);
    let noise = gaussian(seed, "properties.logistic.noise", n, 1);
    let y = DMatrix::from_fn(n, 1, |i, _| {
        if x[(i, 0)] - 0.5 * x[(i, 1)] + noise[(i, 0)] > 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let data = Dataset::new(x, y).unwrap();
    let cfg = TrainConfig {
        tolerance: 1e-10,
        max_epochs: 10_000,
        ..TrainConfig::default()
    };
    let model = fit(Architecture::Logistic { d: 2, m: 1 }, LossKind::CrossEntropy, &data, &cfg).unwrap();
    (model, data)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_gls_is_leverage_with_intercept(d in 1usize..5, extra in 3usize..30, m in 1usize..4, seed in 0u64..1000) {
        let n = d + 1 + extra;
        let data = match Dataset::new(gaussian(seed, "properties.ols.x", n, d), gaussian(seed, "properties.ols.y", n, m)) {
            Ok(v) => v,
            Err(Error::RankDeficient { .. }) => return Err(TestCaseError::reject("rank deficient")),
            Err(e) => panic!("{e}"),
        };
        let lev = fit_ols(&data.with_intercept().unwrap()).unwrap().leverage;
        let model = DiffModel::init(Architecture::Linear { d, m, bias: true }, seed).unwrap();
        let cfg = CgConfig { damping: 0.0, ..CgConfig::default() };
        let targets: Vec<usize> = (0..n).collect();
        let gls = gls_dense(&model, LossKind::Quadratic, &data, &targets, &LayerMask::Full, Space::Logit, &cfg).unwrap();
        for g in &gls {
            let expect = DMatrix::identity(m, m) * lev[g.index];
            prop_assert!((&g.matrix - expect).abs().max() < 1e-8, "sample {}", g.index);
        }
    }

    #[test]
    fn spearman_ignores_monotone_transforms(v in prop::collection::vec(-50.0f64..50.0, 5..40), seed in 0u64..100) {
        let mut g = normals(seed, "properties.spearman", 0);
        let w: Vec<f64> = v.iter().map(|x| x + g.next()).collect();
        let base = spearman(&v, &w).unwrap();
        let squashed: Vec<f64> = v.iter().map(|x| x.tanh() * 3.0 + x.powi(3)).collect();
        prop_assert!((spearman(&squashed, &w).unwrap() - base).abs() < 1e-12);
        prop_assert!((spearman(&w, &v).unwrap() - base).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn permutation_pvalue_is_a_valid_probability(n in 3usize..30, seed in 0u64..1000) {
        let a = gaussian(seed, "properties.perm.a", n, 1);
        let b = gaussian(seed, "properties.perm.b", n, 1);
        let p = permutation_pvalue(a.as_slice(), b.as_slice(), 1000, seed).unwrap();
        prop_assert!((1.0 / 1001.0..=1.0).contains(&p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn damping_vanishes_continuously(seed in 0u64..1000) {
        let (model, data) = binary_logistic(seed, 80);
        let targets = [0, 13, 79];
        let at = |lambda: f64| {
            let cfg = CgConfig { damping: lambda, ..CgConfig::default() };
            gls_dense(&model, LossKind::CrossEntropy, &data, &targets, &LayerMask::Full, Space::Logit, &cfg).unwrap()
        };
        let exact = at(0.0);
        let mut previous = f64::INFINITY;
        for lambda in [1e-1, 1e-2, 1e-4, 1e-6, 1e-8] {
            let gap = at(lambda).iter().zip(&exact).map(|(a, b)| (&a.matrix - &b.matrix).abs().max()).fold(0.0, f64::max);
            prop_assert!(gap < previous, "lambda {lambda}: {gap} >= {previous}");
            previous = gap;
        }
        prop_assert!(previous < 1e-6);
    }
}

#[test]
fn permutation_pvalues_are_calibrated_under_independence() {
    let reps = 400;
    let mut small = 0;
    for r in 0..reps {
        let a = gaussian(r, "calibration.a", 25, 1);
        let b = gaussian(r, "calibration.b", 25, 1);
        if permutation_pvalue(a.as_slice(), b.as_slice(), 1000, r).unwrap() <= 0.05 {
            small += 1;
        }
    }
    // Binomial(400, 0.05): mean 20, sd 4.4.
    assert!((7..=33).contains(&small), "{small}/{reps}");
}

#[test]
fn permutation_detects_strong_dependence() {
    let a = gaussian(1, "dependence", 60, 1);
    let b = a.map(|v| v + 0.1);
    assert!(permutation_pvalue(a.as_slice(), b.as_slice(), 1000, 2).unwrap() <= 1.0 / 1001.0);
}

#[test]
fn gls_is_identical_across_thread_pools() {
    let (model, data) = binary_logistic(3, 120);
    let targets: Vec<usize> = (0..120).step_by(7).collect();
    let cfg = CgConfig::default();
    let run = || {
        gls_compute(&model, LossKind::CrossEntropy, &data, &targets, &cfg, &LayerMask::Full, Space::Probability)
            .unwrap()
            .into_iter()
            .map(|g| g.unwrap().row_major().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let one = in_pool(1, run);
    assert_eq!(one, in_pool(4, run));
    assert_eq!(one, in_pool(7, run));
}

#[test]
fn simulation_is_identical_across_thread_pools() {
    let cfg = SimConfig {
        design: single_leverage_design(0.4, 12).unwrap(),
        gen: GenerativeConfig::new(vec![vec![1.0, -1.0, 0.5]], 1.3, 0).unwrap(),
        trials: 5000,
        target_index: 0,
        seed: 11,
    };
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let one = in_pool(1, || simulate_residual_pairs(&cfg).unwrap());
    let many = in_pool(6, || simulate_residual_pairs(&cfg).unwrap());
    assert_eq!(bits(&one.member_norms), bits(&many.member_norms));
    assert_eq!(bits(&one.nonmember_norms), bits(&many.nonmember_norms));
}

#[test]
fn simulator_lira_ranks_like_the_optimal_statistic() {
    for h in [0.3, 0.7] {
        for m in [1usize, 5] {
            let cfg = SimConfig {
                design: single_leverage_design(h, 10).unwrap(),
                gen: GenerativeConfig::new(vec![vec![1.0; m]], 1.0, 0).unwrap(),
                trials: 10_000,
                target_index: 0,
                seed: 21,
            };
            let att = simulator_attack(&cfg, 10_000, ObservationScale::Log).unwrap();
            let lira: Vec<f64> = att.member_lira.iter().chain(&att.nonmember_lira).copied().collect();
            let opt: Vec<f64> = att.member_optimal.iter().chain(&att.nonmember_optimal).copied().collect();
            let rho = spearman(&lira, &opt).unwrap();
            assert!(rho >= 0.9, "h={h} m={m}: {rho}");
        }
    }
}
