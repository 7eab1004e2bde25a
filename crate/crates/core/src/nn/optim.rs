use std::collections::HashMap;

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: HashMap<ParamId, Tensor<T>>,
    v: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update of every trainable parameter that received a gradient:
    /// `θ ← θ − lr·λ·θ`, then the bias-corrected Adam delta.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let decay = T::of(c.lr * c.weight_decay);
        for id in store.trainable_ids() {
            let Some(g) = grads.param(id) else { continue };
            if g.shape() != store.get(id).shape() {
                return Err(Error::shape(format!("gradient for {} has the wrong shape", store.name(id))));
            }
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros_like(g));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros_like(g));
            let theta = store.get_mut(id);
            for (((p, &gi), mi), vi) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p = *p - decay * *p;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Stops once more than `patience` consecutive updates fail to strictly
/// improve on the best metric.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    pub mode: Mode,
    best: Option<f64>,
    since: usize,
    last_improved: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize, mode: Mode) -> Self {
        EarlyStopper {
            patience,
            mode,
            best: None,
            since: 0,
            last_improved: false,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Whether the most recent update set a new best.
    pub fn improved(&self) -> bool {
        self.last_improved
    }

    pub fn update(&mut self, metric: f64) -> Result<Decision> {
        if !metric.is_finite() {
            return Err(Error::Numeric(format!("early stopping on non-finite metric {metric}")));
        }
        self.last_improved = match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), Mode::Max) => metric > b,
            (Some(b), Mode::Min) => metric < b,
        };
        if self.last_improved {
            self.best = Some(metric);
            self.since = 0;
        } else {
            self.since += 1;
        }
        Ok(if self.since > self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        })
    }
}
