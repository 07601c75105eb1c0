//! SGD with momentum and the polynomial-decay learning-rate schedule.

use crate::error::SfdaError;
use crate::numerics::Parameter;
use crate::Result;

/// Optimizer hyper-parameters. `eta0` is the initial learning rate; the
/// schedule decays it as `eta0 * (1 + 10*iter/max_iter)^(-0.75)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub eta0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iter: usize,
}

impl OptimizerConfig {
    /// Validated constructor; momentum defaults to 0.9 and weight decay to
    /// 5e-4 via [`OptimizerConfig::with_defaults`].
    pub fn new(eta0: f64, momentum: f64, weight_decay: f64, max_iter: usize) -> Result<Self> {
        if !eta0.is_finite() || eta0 <= 0.0 {
            return Err(SfdaError::InvalidConfig(format!(
                "learning rate eta0 must be positive, got {eta0}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(SfdaError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if weight_decay < 0.0 {
            return Err(SfdaError::InvalidConfig(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        if max_iter == 0 {
            return Err(SfdaError::InvalidConfig(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(OptimizerConfig {
            eta0,
            momentum,
            weight_decay,
            max_iter,
        })
    }

    /// Standard defaults: momentum 0.9, weight decay 5e-4.
    pub fn with_defaults(eta0: f64, max_iter: usize) -> Result<Self> {
        OptimizerConfig::new(eta0, 0.9, 5.0e-4, max_iter)
    }
}

/// Learning rate at a given iteration:
/// `eta = eta0 * (1 + 10*iter/max_iter)^(-0.75)`.
///
/// Equals `eta0` exactly at `iter = 0` and is non-increasing in `iter`.
pub fn lr_at(iter: usize, config: &OptimizerConfig) -> f64 {
    debug_assert!(iter <= config.max_iter, "iter beyond max_iter");
    let progress = 10.0 * iter as f64 / config.max_iter as f64;
    config.eta0 * (1.0 + progress).powf(-0.75)
}

/// One SGD-with-momentum step over a set of parameters:
/// `velocity <- momentum*velocity + grad + weight_decay*value`,
/// `value <- value - lr*velocity`. Gradients are left untouched; zeroing
/// them is a separate event ([`zero_grads`]).
pub fn sgd_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    lr: f64,
    config: &OptimizerConfig,
) {
    for p in params {
        p.sgd_update(lr, config.momentum, config.weight_decay);
    }
}

/// Reset the gradient of every parameter to exact zero.
pub fn zero_grads<'a>(params: impl IntoIterator<Item = &'a mut Parameter>) {
    for p in params {
        p.zero_grad();
    }
}
