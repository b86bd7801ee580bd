use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

pub const SIMPLEX_TOL: f64 = 1e-9;

/// Per-sample loss. The training objective is the mean over samples.
///
/// `CrossEntropy` with `m >= 2` is `lse(f) − yᵀf`, which agrees with the usual
/// `−Σ y_k log softmax(f)_k` on the simplex. With `m == 1` the single output
/// is a logit and the loss is the binary form `softplus(f) − y f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Quadratic,
    CrossEntropy,
}

impl LossKind {
    /// Loss value; writes `∂ℓ/∂f` into `grad`.
    pub fn value_and_grad<T: Real>(self, f: &[T], y: &[f64], grad: &mut [T]) -> T {
        match self {
            LossKind::Quadratic => {
                let mut total = T::zero();
                for k in 0..f.len() {
                    let r = f[k] - T::cst(y[k]);
                    grad[k] = r.scale(2.0);
                    total += r * r;
                }
                total
            }
            LossKind::CrossEntropy if f.len() == 1 => {
                grad[0] = f[0].sigmoid() - T::cst(y[0]);
                f[0].softplus() - f[0].scale(y[0])
            }
            LossKind::CrossEntropy => {
                let (lse, p) = log_softmax_parts(f);
                let mut total = lse;
                for k in 0..f.len() {
                    grad[k] = p[k] - T::cst(y[k]);
                    total = total - f[k].scale(y[k]);
                }
                total
            }
        }
    }

    pub fn value(self, f: &[f64], y: &[f64]) -> f64 {
        let mut g = vec![0.0; f.len()];
        self.value_and_grad(f, y, &mut g)
    }

    /// `∂²ℓ/∂y∂f`, constant in `(f, y)`.
    pub fn mixed_second_derivative(self, m: usize) -> DMatrix<f64> {
        match self {
            LossKind::Quadratic => DMatrix::identity(m, m) * -2.0,
            LossKind::CrossEntropy => -DMatrix::identity(m, m),
        }
    }

    /// `∂²ℓ/∂f²` at output `f`.
    pub fn output_hessian(self, f: &[f64]) -> DMatrix<f64> {
        let m = f.len();
        match self {
            LossKind::Quadratic => DMatrix::identity(m, m) * 2.0,
            LossKind::CrossEntropy if m == 1 => {
                let p = Real::sigmoid(f[0]);
                DMatrix::from_element(1, 1, p * (1.0 - p))
            }
            LossKind::CrossEntropy => {
                let p = softmax(f);
                DMatrix::from_fn(m, m, |k, l| if k == l { p[k] - p[k] * p[l] } else { -p[k] * p[l] })
            }
        }
    }

    /// Targets must be finite; cross-entropy targets must lie on the simplex
    /// (or in `[0, 1]` for a single logit).
    pub fn check_targets(self, y: &DMatrix<f64>) -> Result<()> {
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Malformed("non-finite target".into()));
        }
        if self == LossKind::CrossEntropy {
            let lo = -SIMPLEX_TOL;
            let hi = 1.0 + SIMPLEX_TOL;
            if !y.iter().all(|v| (lo..=hi).contains(v)) {
                return Err(Error::InvalidArgument("cross-entropy targets must lie in [0, 1]".into()));
            }
            if y.ncols() > 1 {
                for row in y.row_iter() {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::NotASimplex { sum: s });
                    }
                }
            }
        }
        Ok(())
    }
}

fn log_softmax_parts<T: Real>(f: &[T]) -> (T, Vec<T>) {
    let mx = f.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<T> = f.iter().map(|v| (*v - T::cst(mx)).exp()).collect();
    let mut sum = T::zero();
    for e in &shifted {
        sum += *e;
    }
    let lse = T::cst(mx) + sum.ln();
    let p = shifted.into_iter().map(|e| e / sum).collect();
    (lse, p)
}

/// Softmax for `m >= 2`, sigmoid for a single logit.
pub fn softmax(f: &[f64]) -> Vec<f64> {
    if f.len() == 1 {
        return vec![Real::sigmoid(f[0])];
    }
    log_softmax_parts(f).1
}

/// `diag(p) − ppᵀ`. A length-one input is read as the binary probability
/// and yields `[[p(1 − p)]]`.
pub fn softmax_jacobian(p: &[f64]) -> Result<DMatrix<f64>> {
    let m = p.len();
    if m == 1 {
        if !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p[0]) {
            return Err(Error::NotASimplex { sum: p[0] });
        }
        return Ok(DMatrix::from_element(1, 1, p[0] * (1.0 - p[0])));
    }
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| *v < -SIMPLEX_TOL) || (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotASimplex { sum: s });
    }
    Ok(DMatrix::from_fn(m, m, |k, l| if k == l { p[k] - p[k] * p[l] } else { -p[k] * p[l] }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_second_derivatives() {
        assert_eq!(LossKind::Quadratic.mixed_second_derivative(1)[(0, 0)], -2.0);
        let ce = LossKind::CrossEntropy.mixed_second_derivative(4);
        assert_eq!(ce, -DMatrix::<f64>::identity(4, 4));
    }

    fn grad_f(loss: LossKind, f: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; f.len()];
        loss.value_and_grad(f, y, &mut g);
        g
    }

    #[test]
    fn mixed_second_derivative_matches_finite_differences() {
        let f = [0.3, -1.2, 0.8];
        let y = [0.2, 0.5, 0.3];
        let eps = 1e-5;
        for loss in [LossKind::Quadratic, LossKind::CrossEntropy] {
            let exact = loss.mixed_second_derivative(3);
            for k in 0..3 {
                let mut yp = y;
                let mut ym = y;
                yp[k] += eps;
                ym[k] -= eps;
                let gp = grad_f(loss, &f, &yp);
                let gm = grad_f(loss, &f, &ym);
                for l in 0..3 {
                    let fd = (gp[l] - gm[l]) / (2.0 * eps);
                    assert!((fd - exact[(l, k)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn cross_entropy_agrees_with_log_softmax_on_simplex() {
        let f = [2.0, -1.0, 0.5];
        let y = [0.0, 1.0, 0.0];
        let p = softmax(&f);
        let direct = -p[1].ln();
        assert!((LossKind::CrossEntropy.value(&f, &y) - direct).abs() < 1e-14);
        let big = [1000.0, 0.0];
        assert!(LossKind::CrossEntropy.value(&big, &[1.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn binary_cross_entropy() {
        let v = LossKind::CrossEntropy.value(&[0.4], &[1.0]);
        let p: f64 = 1.0 / (1.0 + (-0.4_f64).exp());
        assert!((v + p.ln()).abs() < 1e-14);
    }

    #[test]
    fn output_hessian_matches_finite_difference() {
        let f = [0.3, -1.2, 0.8];
        let y = [0.2, 0.5, 0.3];
        let h = LossKind::CrossEntropy.output_hessian(&f);
        let eps = 1e-6;
        for k in 0..3 {
            let mut fp = f;
            let mut fm = f;
            fp[k] += eps;
            fm[k] -= eps;
            let gp = grad_f(LossKind::CrossEntropy, &fp, &y);
            let gm = grad_f(LossKind::CrossEntropy, &fm, &y);
            for l in 0..3 {
                assert!(((gp[l] - gm[l]) / (2.0 * eps) - h[(l, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_jacobian_examples() {
        assert_eq!(softmax_jacobian(&[0.0, 1.0, 0.0]).unwrap(), DMatrix::zeros(3, 3));
        let j = softmax_jacobian(&[0.5, 0.5]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
        assert!(matches!(softmax_jacobian(&[0.5, 0.6]), Err(Error::NotASimplex { .. })));
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let f = [0.1, 1.3, -0.7];
        let j = softmax_jacobian(&softmax(&f)).unwrap();
        let eps = 1e-6;
        for l in 0..3 {
            let mut fp = f;
            let mut fm = f;
            fp[l] += eps;
            fm[l] -= eps;
            let (pp, pm) = (softmax(&fp), softmax(&fm));
            for k in 0..3 {
                assert!(((pp[k] - pm[k]) / (2.0 * eps) - j[(k, l)]).abs() < 1e-9);
            }
        }
        assert!((j.clone() - j.transpose()).amax() == 0.0);
        for r in j.row_iter() {
            assert!(r.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn target_checks() {
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.7]);
        assert!(LossKind::CrossEntropy.check_targets(&ok).is_ok());
        let bad = DMatrix::from_row_slice(1, 2, &[0.5, 0.6]);
        assert!(LossKind::CrossEntropy.check_targets(&bad).is_err());
        assert!(LossKind::Quadratic.check_targets(&bad).is_ok());
    }
}
