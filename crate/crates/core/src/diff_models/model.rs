use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{softmax, LossKind};
use super::net::{backward, forward, Activation, LayerShape};
use super::real::{Dual, Real};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_L2: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Linear { d: usize, m: usize, bias: bool },
    Logistic { d: usize, m: usize },
    Mlp { widths: Vec<usize>, activation: Activation },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Architecture::Linear { d, m, .. } | Architecture::Logistic { d, m } => *d > 0 && *m > 0,
            Architecture::Mlp { widths, .. } => widths.len() >= 2 && widths.iter().all(|w| *w > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid architecture {self:?}")))
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        match self {
            Architecture::Linear { d, m, .. } | Architecture::Logistic { d, m } => vec![*d, *m],
            Architecture::Mlp { widths, .. } => widths.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths()[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths().last().expect("validated widths")
    }

    fn activation(&self) -> Option<Activation> {
        match self {
            Architecture::Mlp { activation, .. } => Some(*activation),
            _ => None,
        }
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let bias = !matches!(self, Architecture::Linear { bias: false, .. });
        let w = self.widths();
        let mut offset = 0;
        w.windows(2)
            .map(|p| {
                let s = LayerShape {
                    inputs: p[0],
                    outputs: p[1],
                    bias,
                    offset,
                };
                offset += s.len();
                s
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }

    pub fn default_loss(&self) -> LossKind {
        match self {
            Architecture::Linear { .. } => LossKind::Quadratic,
            _ => LossKind::CrossEntropy,
        }
    }

    pub fn default_l2(&self) -> f64 {
        match self {
            Architecture::Linear { .. } => 0.0,
            _ => DEFAULT_L2,
        }
    }
}

/// Training provenance kept alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMeta {
    pub seed: u64,
    pub loss: Option<LossKind>,
    pub l2: f64,
    pub grad_norm: Option<f64>,
    pub tolerance: Option<f64>,
}

/// Which part of the parameter vector a curvature computation sees, and how.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curvature {
    /// Selected layer indices; `None` means every layer.
    pub layers: Option<Vec<usize>>,
    /// Samples per accumulation batch; 0 means one batch.
    pub batch_size: usize,
    /// Use `Jᵀ(∂²ℓ/∂f²)J` in place of the exact Hessian.
    pub gauss_newton: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffModel {
    arch: Architecture,
    theta: Vec<f64>,
    shapes: Vec<LayerShape>,
    pub meta: ModelMeta,
}

impl DiffModel {
    /// Layer-wise `U(−1/√fan_in, 1/√fan_in)` initialization keyed by `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let mut theta = vec![0.0; arch.param_count()];
        for (k, s) in shapes.iter().enumerate() {
            let bound = 1.0 / (s.inputs as f64).sqrt();
            let mut r = rng::stream(seed, "diff_models.init", k as u64);
            for v in &mut theta[s.range()] {
                *v = r.random_range(-bound..bound);
            }
        }
        let meta = ModelMeta {
            seed,
            l2: arch.default_l2(),
            ..ModelMeta::default()
        };
        Ok(Self { arch, theta, shapes, meta })
    }

    pub fn from_theta(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        let shapes = arch.layer_shapes();
        let meta = ModelMeta {
            l2: arch.default_l2(),
            ..ModelMeta::default()
        };
        Ok(Self { arch, theta, shapes, meta })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut m = Self::from_theta(self.arch.clone(), theta)?;
        m.meta = self.meta.clone();
        Ok(m)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn d(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn m(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.shapes.iter().map(LayerShape::range).collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch(format!("model expects {} inputs, got {}", self.d(), x.len())));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.d() != self.d() || data.m() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "model is {}→{}, dataset is {}→{}",
                self.d(),
                self.m(),
                data.d(),
                data.m()
            )));
        }
        Ok(())
    }

    /// Sorted, deduplicated layer selection and the lowest selected layer.
    fn selection(&self, layers: Option<&[usize]>) -> Result<Vec<usize>> {
        let mut sel: Vec<usize> = match layers {
            None => (0..self.layer_count()).collect(),
            Some(l) => l.to_vec(),
        };
        sel.sort_unstable();
        sel.dedup();
        if sel.is_empty() || sel.iter().any(|k| *k >= self.layer_count()) {
            return Err(Error::InvalidArgument(format!(
                "layer selection {sel:?} invalid for {} layers",
                self.layer_count()
            )));
        }
        Ok(sel)
    }

    /// Parameter indices of the selected layers, in θ order.
    pub fn selected_indices(&self, layers: Option<&[usize]>) -> Result<Vec<usize>> {
        Ok(self
            .selection(layers)?
            .into_iter()
            .flat_map(|k| self.shapes[k].range())
            .collect())
    }

    /// Network output; logits for classification models.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(forward(&self.shapes, self.arch.activation(), &self.theta, x).out)
    }

    pub fn predict_all(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .map(|i| self.predict(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(x.nrows(), self.m(), |i, k| rows[i][k]))
    }

    /// Input to the last layer: penultimate activations for an MLP, `x` itself
    /// for single-layer models.
    pub fn last_layer_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layer_input(x, self.layer_count() - 1)
    }

    /// Input to layer `k`.
    pub fn layer_input(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_x(x)?;
        if k >= self.layer_count() {
            return Err(Error::InvalidArgument(format!("layer {k} out of range for {} layers", self.layer_count())));
        }
        let mut tape = forward(&self.shapes, self.arch.activation(), &self.theta, x);
        Ok(tape.inputs.swap_remove(k))
    }

    /// The sub-network made of layers `lo..`, fed by the inputs of layer `lo`.
    pub fn tail(&self, lo: usize) -> Result<Self> {
        if lo == 0 {
            return Ok(self.clone());
        }
        let Architecture::Mlp { widths, activation } = &self.arch else {
            return Err(Error::InvalidArgument("only multi-layer models have a tail".into()));
        };
        if lo >= self.layer_count() {
            return Err(Error::InvalidArgument(format!("layer {lo} out of range for {} layers", self.layer_count())));
        }
        let arch = Architecture::Mlp {
            widths: widths[lo..].to_vec(),
            activation: *activation,
        };
        let mut tail = Self::from_theta(arch, self.theta[self.shapes[lo].offset..].to_vec())?;
        tail.meta = self.meta.clone();
        Ok(tail)
    }

    /// Softmax of the logits, or the sigmoid for a single logit.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.predict(x)?))
    }

    /// `∂f/∂θ`, an `m × p` matrix.
    pub fn param_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian_restricted(x, None)
    }

    /// `∂f/∂θ_sub` with columns ordered as [`Self::selected_indices`].
    pub fn jacobian_restricted(&self, x: &[f64], layers: Option<&[usize]>) -> Result<DMatrix<f64>> {
        self.check_x(x)?;
        let sel = self.selection(layers)?;
        let idx = self.selected_indices(Some(&sel))?;
        let act = self.arch.activation();
        let tape = forward(&self.shapes, act, &self.theta, x);
        let m = self.m();
        let mut j = DMatrix::zeros(m, idx.len());
        for k in 0..m {
            let mut g = vec![0.0; self.p()];
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            backward(&self.shapes, act, &self.theta, &tape, e, sel[0], &mut g);
            for (c, &pi) in idx.iter().enumerate() {
                j[(k, c)] = g[pi];
            }
        }
        Ok(j)
    }

    pub fn sample_losses(&self, loss: LossKind, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        (0..data.n())
            .map(|i| Ok(loss.value(&self.predict(&data.x_row(i))?, &data.y_row(i))))
            .collect()
    }

    /// Sum over samples of loss and `∇θ ℓ`, accumulated batch by batch in a
    /// fixed order.
    fn accumulate<T: Real>(&self, loss: LossKind, data: &Dataset, theta: &[T], lo: usize, batch_size: usize) -> (T, Vec<T>) {
        let n = data.n();
        let bs = if batch_size == 0 { n.max(1) } else { batch_size };
        let act = self.arch.activation();
        let starts: Vec<usize> = (0..n).step_by(bs).collect();
        let partials: Vec<(T, Vec<T>)> = starts
            .par_iter()
            .map(|&s| {
                let mut total = T::zero();
                let mut grad = vec![T::zero(); theta.len()];
                let mut dl = vec![T::zero(); self.m()];
                for i in s..(s + bs).min(n) {
                    let tape = forward(&self.shapes, act, theta, &data.x_row(i));
                    total += loss.value_and_grad(&tape.out, &data.y_row(i), &mut dl);
                    backward(&self.shapes, act, theta, &tape, dl.clone(), lo, &mut grad);
                }
                (total, grad)
            })
            .collect();
        let mut total = T::zero();
        let mut grad = vec![T::zero(); theta.len()];
        for (t, g) in partials {
            total += t;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        (total, grad)
    }

    /// `𝓛(θ) = (1/n)Σ ℓ_i + (l2/2)‖θ‖²`.
    pub fn objective(&self, loss: LossKind, data: &Dataset, l2: f64) -> Result<f64> {
        Ok(self.gradient(loss, data, l2)?.0)
    }

    pub fn gradient(&self, loss: LossKind, data: &Dataset, l2: f64) -> Result<(f64, Vec<f64>)> {
        self.check_data(data)?;
        let n = data.n() as f64;
        let (total, mut g) = self.accumulate(loss, data, &self.theta, 0, 0);
        let sq: f64 = self.theta.iter().map(|t| t * t).sum();
        for (gi, t) in g.iter_mut().zip(&self.theta) {
            *gi = *gi / n + l2 * t;
        }
        Ok((total / n + 0.5 * l2 * sq, g))
    }

    /// `(∇²𝓛 + l2·I)v` by forward-over-reverse differentiation.
    pub fn hvp(&self, loss: LossKind, data: &Dataset, v: &[f64], l2: f64) -> Result<Vec<f64>> {
        self.hvp_with(loss, data, v, l2, &Curvature::default())
    }

    /// Curvature-vector product restricted to the selected layers: entries of
    /// `v` outside them are ignored and the result is zero there.
    pub fn hvp_with(&self, loss: LossKind, data: &Dataset, v: &[f64], l2: f64, curv: &Curvature) -> Result<Vec<f64>> {
        self.check_data(data)?;
        if v.len() != self.p() {
            return Err(Error::DimensionMismatch(format!("v has length {}, p = {}", v.len(), self.p())));
        }
        let sel = self.selection(curv.layers.as_deref())?;
        let idx = self.selected_indices(Some(&sel))?;
        let mut vm = vec![0.0; self.p()];
        for &i in &idx {
            vm[i] = v[i];
        }
        let n = data.n() as f64;
        let raw = if curv.gauss_newton {
            self.gauss_newton_sum(loss, data, &vm, sel[0], curv.batch_size)
        } else {
            let theta: Vec<Dual> = self.theta.iter().zip(&vm).map(|(t, e)| Dual::new(*t, *e)).collect();
            self.accumulate(loss, data, &theta, sel[0], curv.batch_size)
                .1
                .into_iter()
                .map(|g| g.eps)
                .collect()
        };
        let mut out = vec![0.0; self.p()];
        for &i in &idx {
            out[i] = raw[i] / n + l2 * vm[i];
        }
        Ok(out)
    }

    fn gauss_newton_sum(&self, loss: LossKind, data: &Dataset, v: &[f64], lo: usize, batch_size: usize) -> Vec<f64> {
        let n = data.n();
        let bs = if batch_size == 0 { n.max(1) } else { batch_size };
        let act = self.arch.activation();
        let theta_d: Vec<Dual> = self.theta.iter().zip(v).map(|(t, e)| Dual::new(*t, *e)).collect();
        let starts: Vec<usize> = (0..n).step_by(bs).collect();
        let partials: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&s| {
                let mut grad = vec![0.0; self.p()];
                for i in s..(s + bs).min(n) {
                    let x = data.x_row(i);
                    let jv: Vec<f64> = forward(&self.shapes, act, &theta_d, &x).out.iter().map(|f| f.eps).collect();
                    let tape = forward(&self.shapes, act, &self.theta, &x);
                    let h = loss.output_hessian(&tape.out);
                    let u: Vec<f64> = (0..self.m()).map(|k| (0..self.m()).map(|l| h[(k, l)] * jv[l]).sum()).collect();
                    backward(&self.shapes, act, &self.theta, &tape, u, lo, &mut grad);
                }
                grad
            })
            .collect();
        let mut grad = vec![0.0; self.p()];
        for g in partials {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        grad
    }
}
