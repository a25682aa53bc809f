use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamSet};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, mirroring the parameter set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<S> {
    pub m: IndexMap<String, Tensor<S>>,
    pub v: IndexMap<String, Tensor<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        Self {
            m: IndexMap::new(),
            v: IndexMap::new(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are validated before anything is mutated, so a rejected step
/// leaves both `params` and `state` untouched.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamGrads<S>,
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<(), NumericsError> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| NumericsError::MissingParam(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(NumericsError::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(NumericsError::NonFiniteGradient(name.clone()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let lr = S::of(cfg.lr);
    let eps = S::of(cfg.eps);
    let c1 = S::one() - S::of(cfg.beta1.powi(t));
    let c2 = S::one() - S::of(cfg.beta2.powi(t));

    for (name, p) in params.iter_mut() {
        let g = &grads[name.as_str()];
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + (S::one() - b1) * gi;
            vd[i] = b2 * vd[i] + (S::one() - b2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    fn grad(value: f64) -> ParamGrads<f64> {
        let mut g = IndexMap::new();
        g.insert("w".to_string(), Tensor::scalar(value));
        g
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = single(1.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &grad(0.5), &mut st, &AdamConfig::default()).unwrap();
        let w = p.get("w").unwrap().data()[0];
        assert!((w - 0.999).abs() < 1e-10, "{w}");
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = single(2.5);
        let mut st = AdamState::new();
        adam_step(&mut p, &grad(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 2.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn fixed_positive_gradient_decreases_monotonically() {
        let mut p = single(0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig::default();
        let mut last = 0.0;
        for _ in 0..2 {
            adam_step(&mut p, &grad(3.0), &mut st, &cfg).unwrap();
            let w = p.get("w").unwrap().data()[0];
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut p = single(1.0);
        let mut st = AdamState::new();
        let err = adam_step(&mut p, &grad(f64::NAN), &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(NumericsError::NonFiniteGradient(_))));
        assert_eq!(st.t, 0);
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }
}
