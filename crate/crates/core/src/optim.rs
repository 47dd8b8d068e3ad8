//! RMSprop, the loss-coupled learning rate and test-accuracy early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Running mean of squared gradients, one accumulator per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsState {
    pub rho: f64,
    pub epsilon: f64,
    pub accumulators: Vec<Vec<f64>>,
}

impl RmsState {
    pub fn new(tensor_lens: impl IntoIterator<Item = usize>) -> Self {
        RmsState::with_constants(tensor_lens, DEFAULT_RHO, DEFAULT_EPSILON)
    }

    pub fn with_constants(tensor_lens: impl IntoIterator<Item = usize>, rho: f64, epsilon: f64) -> Self {
        RmsState {
            rho,
            epsilon,
            accumulators: tensor_lens.into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }
}

/// One RMSprop update over every tensor:
/// `acc = rho*acc + (1-rho)*g^2`, `theta -= lr * g / (sqrt(acc) + eps)`.
pub fn rmsprop_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut RmsState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accumulators.len() {
        return Err(Error::dim(
            "rmsprop tensors",
            (params.len(), grads.len()),
            (state.accumulators.len(), 0),
        ));
    }
    for ((p, g), acc) in params.iter().zip(grads).zip(&state.accumulators) {
        if p.len() != g.len() || p.len() != acc.len() {
            return Err(Error::dim("rmsprop tensor", (p.len(), g.len()), (acc.len(), 0)));
        }
    }
    let (rho, eps) = (state.rho, state.epsilon);
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut state.accumulators) {
        for ((theta, &grad), a) in p.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
            *a = rho * *a + (1.0 - rho) * grad * grad;
            *theta -= lr * grad / (a.sqrt() + eps);
        }
    }
    Ok(())
}

/// `eta = eta0 * exp(C)` where `C` is the current training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub eta0: f64,
}

impl LrSchedule {
    pub fn new(eta0: f64) -> Result<Self> {
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::Config(format!("eta0 must be positive, got {eta0}")));
        }
        Ok(LrSchedule { eta0 })
    }

    pub fn lr_from_loss(&self, loss: f64) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss));
        }
        Ok(self.eta0 * loss.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
    pub best_epoch: Option<usize>,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            best_epoch: None,
        }
    }

    /// Records one epoch's metric. Only a strict improvement resets the counter.
    pub fn observe(&mut self, metric: f64, epoch: usize) -> StopDecision {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
