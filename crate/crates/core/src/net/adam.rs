//! Adam with decoupled (default) or L2 weight decay.

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDecay {
    /// `θ -= lr * wd * θ` next to the adaptive step.
    Decoupled,
    /// `wd * θ` added to the gradient before the moment updates.
    L2,
}

impl WeightDecay {
    pub fn name(self) -> &'static str {
        match self {
            WeightDecay::Decoupled => "decoupled",
            WeightDecay::L2 => "l2",
        }
    }
}

impl std::str::FromStr for WeightDecay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(WeightDecay::Decoupled),
            "l2" => Ok(WeightDecay::L2),
            other => Err(Error::Config(format!("unknown weight decay mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: WeightDecay,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.005,
            decay: WeightDecay::Decoupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update: `θ -= lr * (m̂ / (sqrt(v̂) + eps) + wd * θ)` when decoupled;
    /// with L2 the decay term enters `g` instead.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NanGuard("gradient"));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let (wd_grad, wd_step) = match c.decay {
            WeightDecay::Decoupled => (T::zero(), wd),
            WeightDecay::L2 => (wd, T::zero()),
        };
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("adam: {:?} vs {:?}", p.shape(), g.shape())));
            }
            for (((th, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi + wd_grad * *th;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *th -= lr * (mhat / (vhat.sqrt() + eps) + wd_step * *th);
            }
        }
        if params.iter().any(|p| !p.all_finite()) {
            return Err(Error::NanGuard("parameters"));
        }
        Ok(())
    }
}
