use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParameterTree;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Settings for both GAN stages.
    pub const GAN: AdamConfig = AdamConfig {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub const CLASSIFIER: AdamConfig = AdamConfig {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::GAN
    }
}

/// First and second moment estimates keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments for every learnable tensor of `params`.
    pub fn new(params: &ParameterTree<T>, config: AdamConfig) -> Self {
        let zeros = |n| vec![T::zero(); n];
        AdamState {
            config,
            t: 0,
            m: params
                .params()
                .map(|(k, p)| (k.to_string(), zeros(p.numel())))
                .collect(),
            v: params
                .params()
                .map(|(k, p)| (k.to_string(), zeros(p.numel())))
                .collect(),
        }
    }
}

/// One bias-corrected Adam update of every learnable tensor in `params`.
/// Buffers are left alone; gradients are not cleared.
pub fn adam_step<T: Scalar>(params: &mut ParameterTree<T>, state: &mut AdamState<T>) -> Result<()> {
    let grads: Vec<(String, Vec<T>)> = params
        .params()
        .map(|(name, p)| {
            p.grad()
                .map(|g| (name.to_string(), g))
                .ok_or_else(|| Error::MissingGradient(name.to_string()))
        })
        .collect::<Result<_>>()?;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (name, g) in grads {
        let n = g.len();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); n]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); n]);
        if m.len() != n || v.len() != n {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![m.len()],
                rhs: vec![n],
            });
        }
        let p = params.param(&name)?.data();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g[i].as_f64();
            let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * gi;
            let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * gi * gi;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            next.push(T::of(p[i].as_f64() - update));
        }
        params.set_param(&name, next)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{self, Tensor};

    fn single(p: f64) -> ParameterTree<f64> {
        let mut t = ParameterTree::new();
        t.insert_param("p", &Tensor::from_vec(vec![p], &[1]).unwrap())
            .unwrap();
        t
    }

    fn set_grad(tree: &ParameterTree<f64>, g: f64) {
        let p = tree.param("p").unwrap();
        tensor::sum_all(&tensor::scale(p, g)).backward().unwrap();
    }

    fn value(tree: &ParameterTree<f64>) -> f64 {
        tree.param("p").unwrap().data()[0]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut tree = single(0.0);
        let mut st = AdamState::new(&tree, AdamConfig::GAN);
        set_grad(&tree, 1.0);
        adam_step(&mut tree, &mut st).unwrap();
        assert!((value(&tree) + 2e-4).abs() < 1e-8);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut tree = single(0.7);
        let mut st = AdamState::new(&tree, AdamConfig::GAN);
        set_grad(&tree, 0.0);
        adam_step(&mut tree, &mut st).unwrap();
        assert_eq!(value(&tree), 0.7);
    }

    #[test]
    fn opposite_gradients_partly_cancel() {
        let mut tree = single(0.0);
        let mut st = AdamState::new(&tree, AdamConfig::GAN);
        for g in [1.0, -1.0] {
            set_grad(&tree, g);
            adam_step(&mut tree, &mut st).unwrap();
        }
        assert!(value(&tree).abs() < 2.0 * 2e-4);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut tree = single(0.0);
        let mut st = AdamState::new(&tree, AdamConfig::GAN);
        match adam_step(&mut tree, &mut st) {
            Err(Error::MissingGradient(n)) => assert_eq!(n, "p"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.t, 0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut tree = single(1.0);
        let mut st = AdamState::new(
            &tree,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::GAN
            },
        );
        for _ in 0..100 {
            let p = tree.param("p").unwrap().clone();
            tensor::sum_all(&tensor::mul(&p, &p).unwrap())
                .backward()
                .unwrap();
            adam_step(&mut tree, &mut st).unwrap();
        }
        assert!(value(&tree).abs() < 1.0);
    }
}
