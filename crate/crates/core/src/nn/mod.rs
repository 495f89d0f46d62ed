//! Small dense networks trained from scratch: the per-Gaussian feature
//! encoder and the visibility classifier, with Adam, a warm-up/decay
//! schedule, gradient checking and a compact checkpoint format.

mod mlp;
mod model;
mod optim;
mod real;
mod train;

pub use mlp::{bce_grad, bce_with_logits, param_count, Mlp, Trace};
pub use model::{
    context_inputs, gaussian_inputs, Normalization, VisibilityModel, CONTEXT_INPUTS,
    DEFAULT_HIDDEN, FEATURE_DIM, GAUSSIAN_INPUTS, VIS_INPUTS,
};
pub use optim::{Adam, LrSchedule};
pub use real::Real;
pub use train::{
    analytic_gradients, grad_check, grad_check_report, train, train_with_progress, GradCheck,
    SampleBatch, TrainConfig,
};
