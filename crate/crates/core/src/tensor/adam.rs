use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one buffer per parameter, plus the step count
/// used for bias correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> Moments<T> {
    pub fn for_params(params: &[Tensor<T>]) -> Self {
        Moments {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Each parameter is replaced by a fresh
/// leaf holding the new values, which leaves its gradient empty.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    state: &mut Moments<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.grad()
                .ok_or_else(|| Error::Contract(format!("parameter #{i} {:?} has no gradient", p.shape())))
        })
        .collect::<Result<Vec<_>>>()?;

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != g.len() || v.len() != g.len() {
            return Err(Error::shape("adam_step", &[m.len()], &[g.len()]));
        }
        let mut data = p.to_vec();
        for j in 0..data.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            data[j] -= lr * mh / (vh.sqrt() + eps);
        }
        *p = Tensor::param(p.shape(), data)?;
    }
    Ok(())
}
