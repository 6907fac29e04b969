use super::params::{ParamId, ParamStore};
use crate::error::{GasError, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &crate::autodiff::Tensor| vec![0.0; t.len()];
        OptimizerState {
            config,
            step: 0,
            m: store.tensors().iter().map(zeros).collect(),
            v: store.tensors().iter().map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.m[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.v[id.0]
    }
}

/// One bias-corrected Adam update. `grads[i]` is the gradient of parameter
/// `i`; `None` skips the parameter entirely (frozen). Non-finite gradients
/// abort before anything is modified.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Vec<f64>>],
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(GasError::Shape {
            op: "adam_step",
            left: vec![store.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for (id, g) in store.ids().zip(grads) {
        if let Some(g) = g {
            if g.len() != store.get(id).len() {
                return Err(GasError::Shape {
                    op: "adam_step",
                    left: store.get(id).shape().to_vec(),
                    right: vec![g.len()],
                });
            }
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                return Err(GasError::NonFinite(format!(
                    "gradient of `{}` at flat index {pos} is {}",
                    store.name(id),
                    g[pos]
                )));
            }
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let p = store.get_mut(ParamId(i)).data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
