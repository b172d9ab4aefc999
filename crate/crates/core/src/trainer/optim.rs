use crate::ivnet::Param;
use crate::tape::Tensor;
use crate::{Error, Result};

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl Moments {
    pub fn new(params: &[Param]) -> Self {
        Moments {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }
}

impl AdamW {
    /// One update with learning rate `lr`. Non-finite gradients abort before anything changes.
    /// Weight decay only touches parameters whose kind decays (convolution weights).
    pub fn step(&self, moments: &mut Moments, params: &mut [Param], grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || moments.first.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients / {} moment buffers for {} parameters", grads.len(), moments.first.len(), params.len())));
        }
        for (i, (g, p)) in grads.iter().zip(params.iter()).enumerate() {
            if g.len() != p.value.len() {
                return Err(Error::Shape(format!("gradient {i} has {} entries, parameter {} has {}", g.len(), p.name, p.value.len())));
            }
            if !g.is_finite() {
                return Err(Error::NumericalFailure(format!("non-finite gradient for {}", p.name)));
            }
        }
        moments.step += 1;
        let t = moments.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.kind.decays() { 1.0 - lr * self.weight_decay } else { 1.0 };
            let (m, v) = (&mut moments.first[i], &mut moments.second[i]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i].data()[k] as f64;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *w = ((*w as f64) * decay - lr * update) as f32;
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule on a monitored loss (lower is better).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement needed to reset the counter.
    pub threshold: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { factor: 0.5, patience: 50, min_lr: 1e-5, threshold: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        PlateauState { lr, best: f64::INFINITY, bad_epochs: 0 }
    }
}

impl Plateau {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) || self.patience == 0 || !(self.min_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scheduler needs factor in (0, 1), patience ≥ 1 and min_lr ≥ 0 (got {}, {}, {})",
                self.factor, self.patience, self.min_lr
            )));
        }
        Ok(())
    }

    /// Records one epoch's monitored loss and returns the learning rate for the next epoch.
    pub fn observe(&self, state: &mut PlateauState, loss: f64) -> f64 {
        if loss < state.best * (1.0 - self.threshold) {
            state.best = loss;
            state.bad_epochs = 0;
        } else {
            state.bad_epochs += 1;
            if state.bad_epochs >= self.patience {
                state.lr = (state.lr * self.factor).max(self.min_lr);
                state.bad_epochs = 0;
            }
        }
        state.lr
    }
}
