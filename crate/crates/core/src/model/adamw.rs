//! AdamW with decoupled weight decay and bias-corrected moments.

use super::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        Self {
            m: params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }
}

/// One update over every parameter; `grads` is aligned with the
/// parameter order and may contain `None` for untouched parameters
/// (treated as zero gradient, still decayed).
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    hyper: AdamHyper,
) {
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for (k, p) in params.entries.iter_mut().enumerate() {
        let zero;
        let g: &[f64] = match &grads[k] {
            Some(g) => g,
            None => {
                zero = vec![0.0; p.data.len()];
                &zero
            }
        };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= hyper.lr * (m_hat / (v_hat.sqrt() + hyper.eps)
                + hyper.weight_decay * p.data[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Param, ParamSet};

    fn single_param(data: Vec<f64>) -> ParamSet {
        ParamSet {
            entries: vec![Param {
                name: "w".into(),
                shape: vec![data.len()],
                data,
            }],
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = single_param(vec![1.0, -2.0, 0.5]);
        let mut state = AdamState::for_params(&params);
        adamw_step(
            &mut params,
            &[Some(vec![0.0; 3])],
            &mut state,
            AdamHyper::default(),
        );
        assert_eq!(params.entries[0].data, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_signlike() {
        // at t=1 the bias-corrected update direction is g/(|g| + eps')
        let mut params = single_param(vec![0.0]);
        let mut state = AdamState::for_params(&params);
        let hyper = AdamHyper { lr: 1e-3, ..Default::default() };
        adamw_step(&mut params, &[Some(vec![0.25])], &mut state, hyper);
        let got = params.entries[0].data[0];
        assert!((got + 1e-3).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut params = single_param(vec![2.0]);
        let mut state = AdamState::for_params(&params);
        let hyper = AdamHyper {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        adamw_step(&mut params, &[Some(vec![0.0])], &mut state, hyper);
        assert!((params.entries[0].data[0] - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut params = single_param(vec![3.0]);
        let mut state = AdamState::for_params(&params);
        let hyper = AdamHyper { lr: 0.05, ..Default::default() };
        let mut losses = Vec::new();
        for _ in 0..100 {
            let x = params.entries[0].data[0];
            losses.push(x * x);
            adamw_step(&mut params, &[Some(vec![2.0 * x])], &mut state, hyper);
        }
        // monotone after warm-up
        for w in losses[5..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose: {} -> {}", w[0], w[1]);
        }
        assert!(losses.last().unwrap() < &1.0);
    }
}
