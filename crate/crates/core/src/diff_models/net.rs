//! Dense feed-forward pass and reverse sweep, generic over [`Real`].
//!
//! Each layer stores an augmented weight matrix `W̃ = [W | b]` row-major
//! (`outputs × (inputs + 1)`), so the Jacobian of a single layer w.r.t. its
//! parameters is `I_out ⊗ [aᵀ, 1]`.

use serde::{Deserialize, Serialize};

use super::real::Real;

pub const SOFTPLUS_BETA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `softplus(βz)/β` with `β = 10`.
    SoftplusRelu,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::SoftplusRelu => z.scale(SOFTPLUS_BETA).softplus().scale(1.0 / SOFTPLUS_BETA),
        }
    }

    fn derivative<T: Real>(self, z: T, a: T) -> T {
        match self {
            Activation::Tanh => T::cst(1.0) - a * a,
            Activation::SoftplusRelu => z.scale(SOFTPLUS_BETA).sigmoid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub bias: bool,
    pub offset: usize,
}

impl LayerShape {
    pub fn cols(&self) -> usize {
        self.inputs + usize::from(self.bias)
    }

    pub fn len(&self) -> usize {
        self.outputs * self.cols()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub(crate) struct Tape<T> {
    /// `inputs[k]` is the input to layer `k`.
    pub inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

pub(crate) fn forward<T: Real>(shapes: &[LayerShape], act: Option<Activation>, theta: &[T], x: &[f64]) -> Tape<T> {
    let last = shapes.len() - 1;
    let mut inputs = Vec::with_capacity(shapes.len());
    let mut pre = Vec::with_capacity(shapes.len());
    let mut a: Vec<T> = x.iter().map(|v| T::cst(*v)).collect();
    for (k, s) in shapes.iter().enumerate() {
        let cols = s.cols();
        let z: Vec<T> = (0..s.outputs)
            .map(|o| {
                let row = &theta[s.offset + o * cols..s.offset + (o + 1) * cols];
                let mut acc = if s.bias { row[s.inputs] } else { T::zero() };
                for c in 0..s.inputs {
                    acc += row[c] * a[c];
                }
                acc
            })
            .collect();
        let next = match act {
            Some(f) if k < last => z.iter().map(|v| f.apply(*v)).collect(),
            _ => z.clone(),
        };
        inputs.push(std::mem::replace(&mut a, next));
        pre.push(z);
    }
    Tape { inputs, pre, out: a }
}

/// Accumulates `Jᵀδ` into `grad` for layers `lo..`, where `δ` is the
/// upstream gradient at the network output.
pub(crate) fn backward<T: Real>(
    shapes: &[LayerShape],
    act: Option<Activation>,
    theta: &[T],
    tape: &Tape<T>,
    mut delta: Vec<T>,
    lo: usize,
    grad: &mut [T],
) {
    for k in (lo..shapes.len()).rev() {
        let s = shapes[k];
        let cols = s.cols();
        let a = &tape.inputs[k];
        for o in 0..s.outputs {
            let base = s.offset + o * cols;
            for c in 0..s.inputs {
                grad[base + c] += delta[o] * a[c];
            }
            if s.bias {
                grad[base + s.inputs] += delta[o];
            }
        }
        if k == lo {
            break;
        }
        let f = act.expect("hidden layers carry an activation");
        let z = &tape.pre[k - 1];
        delta = (0..s.inputs)
            .map(|c| {
                let mut acc = T::zero();
                for o in 0..s.outputs {
                    acc += theta[s.offset + o * cols + c] * delta[o];
                }
                acc * f.derivative(z[c], a[c])
            })
            .collect();
    }
}
