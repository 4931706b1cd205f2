use std::collections::BTreeMap;

use super::params::ParameterSet;
use super::tensor::{Element, Tensor};
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    /// AdamW with the usual 1e-2 decay.
    pub fn adamw(lr: f64) -> Self {
        Self {
            weight_decay: 1e-2,
            ..Self::adam(lr)
        }
    }
}

/// First/second moment accumulators keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One AdamW update over every trainable parameter.
///
/// Missing gradients count as zero. Frozen parameters are left untouched.
pub fn adamw_step<T: Element>(
    params: &mut ParameterSet<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<(), AutodiffError> {
    if cfg.lr <= 0.0 {
        return Err(AutodiffError::InvalidArgument(format!("learning rate {} must be positive", cfg.lr)));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
        if p.value.shape() != g.shape() {
            return Err(AutodiffError::Shape(format!(
                "gradient {:?} for parameter {name} of shape {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = T::from_f64(cfg.lr);
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let eps = T::from_f64(cfg.eps);
    let decay = T::one() - lr * T::from_f64(cfg.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let value = params.value(&name)?;
        let n = value.numel();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); n]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); n]);
        if m.len() != n || v.len() != n {
            return Err(AutodiffError::Shape(format!("optimizer moments for {name} do not match")));
        }
        let grad = grads.get(&name).map(|g| g.data());
        let mut out = value.data().to_vec();
        for i in 0..n {
            let g = grad.map_or(T::zero(), |g| g[i]);
            let mut p = out[i];
            if cfg.weight_decay != 0.0 {
                p = p * decay;
            }
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p = p - lr * m_hat / (v_hat.sqrt() + eps);
            out[i] = p;
        }
        let shape = value.shape().to_vec();
        params.set(&name, Tensor::new(&shape, out)?)?;
    }
    Ok(())
}

/// Adam without weight decay.
pub fn adam_step<T: Element>(
    params: &mut ParameterSet<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), AutodiffError> {
    let cfg = AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay: 0.0,
    };
    adamw_step(params, grads, state, &cfg)
}
