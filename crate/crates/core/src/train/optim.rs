//! Adam with decoupled weight decay and the linear warm-up/decay schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments of one parameter plus its update count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Per-parameter optimizer state. Parameters without a gradient in a step
/// are left untouched, including their decay and step count.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    pub config: AdamConfig,
    state: HashMap<String, AdamState>,
}

impl AdamW {
    pub fn new(config: AdamConfig) -> Self {
        AdamW {
            config,
            state: HashMap::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.state.get(name)
    }

    /// One update with learning rate `lr`. A non-finite gradient aborts the
    /// step before any parameter or moment is modified.
    pub fn step<S: Scalar>(&mut self, params: &mut Params<S>, grads: &[(String, Tensor<S>)], lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let c = self.config;
        for (name, g) in grads {
            let decay = params.entry(name).map(|e| e.decay).unwrap_or(false);
            let w = params.get_mut(name).expect("checked above");
            let n = w.len();
            let st = self.state.entry(name.clone()).or_insert_with(|| AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            adam_step(w.data_mut(), g.data(), st, lr, &c, decay);
        }
        Ok(())
    }
}

/// Decoupled-decay Adam on one flat parameter:
/// `w ← w − η(λ·w + m̂/(√v̂ + ε))`, with `λ = 0` when `decay` is false.
pub fn adam_step<S: Scalar>(w: &mut [S], grad: &[S], st: &mut AdamState, lr: f64, c: &AdamConfig, decay: bool) {
    st.t += 1;
    let t = st.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let wd = if decay { c.weight_decay } else { 0.0 };
    for i in 0..w.len() {
        let gi = grad[i].as_f64();
        st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * gi;
        st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * gi * gi;
        let m_hat = st.m[i] / bc1;
        let v_hat = st.v[i] / bc2;
        let wi = w[i].as_f64();
        w[i] = S::of(wi - lr * (wd * wi + m_hat / (v_hat.sqrt() + c.eps)));
    }
}

/// Linear warm-up from 0 to `lr` over `warmup` steps, then linear decay to
/// 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, lr: f64) -> Result<f64> {
    if warmup >= total {
        return Err(Error::contract(format!("warm-up ({warmup}) must be shorter than the run ({total} steps)")));
    }
    if step > total {
        return Err(Error::contract(format!("step {step} beyond total {total}")));
    }
    if step < warmup {
        return Ok(lr * step as f64 / warmup as f64);
    }
    Ok(lr * (total - step) as f64 / (total - warmup) as f64)
}
