use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }
}

/// One Adam step with bias correction over every parameter tensor.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        p.check_same_shape(g, "adam grad")?;
        p.check_same_shape(m, "adam moment")?;
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let wd = T::lit(c.weight_decay);
    let one = T::one();
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let lr = T::lit(c.lr);
    let eps = T::lit(c.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (((w, &gr), mi), vi) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gr = gr + wd * *w;
            *mi = b1 * *mi + (one - b1) * gr;
            *vi = b2 * *vi + (one - b2) * gr * gr;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
