use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = params.zero_grads().0;
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is
/// modified.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &Grads) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::Shape {
            context: "adam gradients".into(),
            expected: params.len().to_string(),
            got: grads.0.len().to_string(),
        });
    }
    for id in params.ids() {
        let g = grads.get(id);
        if g.dim() != params.get(id).dim() {
            return Err(Error::Shape {
                context: format!("adam gradient of `{}`", params.name(id)),
                expected: format!("{:?}", params.get(id).dim()),
                got: format!("{:?}", g.dim()),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
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
    for id in params.ids() {
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        Zip::from(params.view_mut(id))
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_param(v: Array2<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", v).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one_param(array![[1.0, -2.0]]);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let zero = p.zero_grads();
        adam_step(&mut st, &mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_learning_rate_freezes() {
        let mut p = one_param(array![[1.0, -2.0]]);
        let before = p.clone();
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut st = AdamState::new(&p, cfg);
        for _ in 0..10 {
            adam_step(&mut st, &mut p, &Grads(vec![array![[3.0, 0.1]]])).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        // With a constant gradient g the bias-corrected moments are exactly g
        // and g^2, so every step moves by lr * |g| / (|g| + eps).
        for g in [1e-3, 0.5, 40.0] {
            let mut p = one_param(array![[0.0]]);
            let mut st = AdamState::new(&p, AdamConfig::default());
            let mut prev = 0.0;
            for _ in 0..200 {
                adam_step(&mut st, &mut p, &Grads(vec![array![[g]]])).unwrap();
                let cur = p.get(crate::nn::ParamId(0))[[0, 0]];
                let expected = 1e-3 * g / (g + 1e-8);
                assert!(((prev - cur) - expected).abs() < 1e-12);
                prev = cur;
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = one_param(array![[1.0]]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut st, &mut p, &Grads(vec![array![[f64::NAN]]])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(st.step, 0);
    }
}
