use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// How a declared tensor is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal {
        mean: f64,
        std: f64,
    },
    Constant(f64),
    /// Random direction with unit Euclidean norm.
    UnitVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Learnable,
    Buffer,
}

/// One named tensor a layer needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub init: Init,
}

impl ParamDecl {
    pub fn learnable(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamDecl {
            name: name.into(),
            shape: shape.to_vec(),
            kind: ParamKind::Learnable,
            init,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamDecl {
            name: name.into(),
            shape: shape.to_vec(),
            kind: ParamKind::Buffer,
            init,
        }
    }
}

/// Named learnable tensors plus non-learnable buffers, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParameterTree<T: Scalar = f32> {
    entries: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterTree<T> {
    pub fn new() -> Self {
        ParameterTree {
            entries: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    fn check_new(&self, name: &str) -> Result<()> {
        if self.entries.contains_key(name) || self.buffers.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        Ok(())
    }

    /// Adds a learnable tensor; it becomes a gradient-tracking leaf.
    pub fn insert_param(&mut self, name: impl Into<String>, value: &Tensor<T>) -> Result<()> {
        let name = name.into();
        self.check_new(&name)?;
        self.entries.insert(name, value.detached(true));
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: &Tensor<T>) -> Result<()> {
        let name = name.into();
        self.check_new(&name)?;
        self.buffers.insert(name, value.detach());
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replaces a learnable tensor's value with a fresh leaf (no gradient).
    pub fn set_param(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        *slot = Tensor::parameter(data, slot.shape())?;
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        *slot = Tensor::from_vec(data, slot.shape())?;
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.entries.len()
    }

    pub fn num_buffers(&self) -> usize {
        self.buffers.len()
    }

    /// Total number of learnable scalars.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.entries.values().for_each(Tensor::zero_grad);
    }

    /// Checks that names, kinds and shapes agree exactly with `decls`.
    pub fn validate(&self, decls: &[ParamDecl]) -> Result<()> {
        for d in decls {
            let (map, kind) = match d.kind {
                ParamKind::Learnable => (&self.entries, "parameter"),
                ParamKind::Buffer => (&self.buffers, "buffer"),
            };
            let t = map
                .get(&d.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing {kind} `{}`", d.name)))?;
            if t.shape() != d.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{kind} `{}` has shape {:?}, expected {:?}",
                    d.name,
                    t.shape(),
                    d.shape
                )));
            }
        }
        let declared = decls.len();
        let present = self.entries.len() + self.buffers.len();
        if declared != present {
            let names: std::collections::HashSet<&str> =
                decls.iter().map(|d| d.name.as_str()).collect();
            let extra = self
                .entries
                .keys()
                .chain(self.buffers.keys())
                .find(|k| !names.contains(k.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!("unexpected entry `{extra}`")));
        }
        Ok(())
    }
}

fn fill<T: Scalar>(init: Init, n: usize, seed: u64) -> Vec<T> {
    let mut rng = rng::rng(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    match init {
        Init::Normal { mean, std } => (0..n).map(|_| T::of(mean + std * normal())).collect(),
        Init::Constant(c) => vec![T::of(c); n],
        Init::UnitVector => {
            let v: Vec<f64> = (0..n).map(|_| normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| T::of(x / norm)).collect()
        }
    }
}

/// Builds a tree from declarations. Each tensor draws from its own stream
/// keyed by `(seed, name)`, so adding or removing layers never perturbs the
/// values of the others.
pub fn init_parameters<T: Scalar>(decls: &[ParamDecl], seed: u64) -> Result<ParameterTree<T>> {
    let mut tree = ParameterTree::new();
    for d in decls {
        let n = d.shape.iter().product();
        let data = fill::<T>(d.init, n, rng::derive_named(seed, &d.name));
        let t = Tensor::from_vec(data, &d.shape)?;
        match d.kind {
            ParamKind::Learnable => tree.insert_param(d.name.clone(), &t)?,
            ParamKind::Buffer => tree.insert_buffer(d.name.clone(), &t)?,
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decls() -> Vec<ParamDecl> {
        vec![
            ParamDecl::learnable(
                "conv/weight",
                &[10, 100, 10, 10],
                Init::Normal {
                    mean: 0.0,
                    std: 0.02,
                },
            ),
            ParamDecl::learnable(
                "bn/scale",
                &[10],
                Init::Normal {
                    mean: 1.0,
                    std: 0.02,
                },
            ),
            ParamDecl::learnable("attn/gamma", &[1], Init::Constant(0.0)),
            ParamDecl::buffer("conv/sn_u", &[10], Init::UnitVector),
        ]
    }

    #[test]
    fn same_seed_same_tree() {
        let a: ParameterTree<f32> = init_parameters(&decls(), 5).unwrap();
        let b: ParameterTree<f32> = init_parameters(&decls(), 5).unwrap();
        for ((na, ta), (nb, tb)) in a.params().zip(b.params()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let c: ParameterTree<f32> = init_parameters(&decls(), 6).unwrap();
        assert_ne!(
            a.param("conv/weight").unwrap().data(),
            c.param("conv/weight").unwrap().data()
        );
    }

    #[test]
    fn dcgan_weight_statistics() {
        let tree: ParameterTree<f64> = init_parameters(&decls(), 11).unwrap();
        let w = tree.param("conv/weight").unwrap();
        assert_eq!(w.numel(), 100_000);
        let mean = w.data().iter().sum::<f64>() / w.numel() as f64;
        let bound = 3.0 * 0.02 / (100_000f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} outside ±{bound}");
        let var = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.numel() as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.0005);
    }

    #[test]
    fn gamma_zero_and_unit_buffer() {
        let tree: ParameterTree<f64> = init_parameters(&decls(), 1).unwrap();
        assert_eq!(tree.param("attn/gamma").unwrap().data(), &[0.0]);
        let u = tree.buffer("conv/sn_u").unwrap();
        let norm: f64 = u.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(tree.param("conv/sn_u").is_err());
        assert!(!u.requires_grad());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut d = decls();
        d.push(d[0].clone());
        assert!(init_parameters::<f32>(&d, 0).is_err());
    }

    #[test]
    fn validate_detects_drift() {
        let tree: ParameterTree<f32> = init_parameters(&decls(), 1).unwrap();
        tree.validate(&decls()).unwrap();
        let mut d = decls();
        d[1].shape = vec![11];
        assert!(tree
            .validate(&d)
            .unwrap_err()
            .to_string()
            .contains("bn/scale"));
        d = decls();
        d.pop();
        assert!(tree
            .validate(&d)
            .unwrap_err()
            .to_string()
            .contains("conv/sn_u"));
    }
}
