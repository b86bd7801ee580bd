//! Small twice-differentiable models with exact derivative oracles:
//! predictions, parameter Jacobians, gradients, Hessian-vector products and
//! the mixed loss derivative `∂²ℓ/∂y∂f`.

mod checkpoint;
mod loss;
mod model;
mod net;
pub mod real;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, write_train_log, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use loss::{softmax, softmax_jacobian, LossKind, SIMPLEX_TOL};
pub use model::{Architecture, Curvature, DiffModel, ModelMeta, DEFAULT_L2};
pub use net::{Activation, LayerShape, SOFTPLUS_BETA};
pub use train::{fit, train, train_report, Optimizer, TrainConfig, TrainLogEntry, TrainOutcome};

/// `∂²ℓ/∂y∂f` for `loss` with `m` outputs.
pub fn mixed_second_derivative(loss: LossKind, m: usize) -> nalgebra::DMatrix<f64> {
    loss.mixed_second_derivative(m)
}
