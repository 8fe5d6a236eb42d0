//! Adam with bias correction, global-norm clipping and the step schedule.

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return contract_err(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => return contract_err(format!("adam: parameter {} has no gradient", i)),
            Some(g) if g.shape() != p.shape() => {
                return dim_err(format!(
                    "adam: gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                ))
            }
            _ => {}
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let step = T::lit(state.lr / bc1);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let inv_bc2 = T::lit(1.0 / bc2);
    let eps = T::lit(state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = g.as_ref().expect("checked above");
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for k in 0..pd.len() {
            let gk = g.data()[k];
            md[k] = b1t * md[k] + ob1 * gk;
            vd[k] = b2t * vd[k] + ob2 * gk * gk;
            let vhat = vd[k] * inv_bc2;
            pd[k] = pd[k] - step * md[k] / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// Learning rate halved every `half_every` iterations (0 disables decay).
pub fn step_lr(initial: f64, iteration: u64, half_every: u64) -> f64 {
    if half_every == 0 {
        return initial;
    }
    initial * 0.5f64.powi((iteration / half_every) as i32)
}
