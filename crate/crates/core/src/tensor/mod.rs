//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! Every operation that has at least one input requiring a gradient records
//! a [`GraphNode`]-style entry holding its inputs and a backward closure.
//! [`Tensor::backward`] walks the graph in reverse topological order and
//! accumulates gradients into the leaves that were created with
//! `requires_grad`.

mod conv;
mod ops;
mod scalar;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use conv::{
    conv2d, conv2d_output_size, conv_transpose2d, conv_transpose2d_output_size, maxpool2d,
};
pub use ops::*;
pub use scalar::{gemm, DType, Scalar};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Gradient rule: receives the output gradient and which inputs need one,
/// returns one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// An n-dimensional array. Cloning is cheap and shares the graph node.
pub struct Tensor<T: Scalar = f32>(Arc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            d.field("op", &node.op);
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{} elements do not fill shape {:?}", data.len(), shape),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::shape(
                "from_vec",
                format!("zero extent in {shape:?}"),
            ));
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Leaf tensor that accumulates gradients during backward.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(t.detached(true))
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), Arc::new(vec![value]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(
            shape.to_vec(),
            Arc::new(vec![value; numel_of(shape)]),
            false,
            None,
        )
    }

    /// Standard-normal samples, reproducible from `seed`.
    pub fn randn(shape: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..numel_of(shape))
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                T::of(x)
            })
            .collect();
        Self::build(shape.to_vec(), Arc::new(data), false, None)
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        op: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let tracked = inputs.iter().any(|t| t.requires_grad());
        let node = tracked.then(|| Node {
            op,
            inputs,
            backward: Box::new(backward),
        });
        Self::build(shape, Arc::new(data), tracked, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                format!("tensor has shape {:?}", self.shape()),
            ));
        }
        Ok(self.0.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the operation that produced this tensor, if tracked.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Parents in the computation graph, in argument order.
    pub fn graph_inputs(&self) -> &[Tensor<T>] {
        self.0
            .node
            .as_ref()
            .map(|n| n.inputs.as_slice())
            .unwrap_or(&[])
    }

    /// Same data, cut from the graph. `requires_grad` selects whether the
    /// result is a fresh trainable leaf.
    pub fn detached(&self, requires_grad: bool) -> Self {
        Self::build(
            self.0.shape.clone(),
            Arc::clone(&self.0.data),
            requires_grad,
            None,
        )
    }

    pub fn detach(&self) -> Self {
        self.detached(false)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn grad_tensor(&self) -> Option<Tensor<T>> {
        self.grad()
            .map(|g| Self::build(self.0.shape.clone(), Arc::new(g), false, None))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a single-element tensor. Gradients accumulate
    /// into every reachable leaf that requires one.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must have one element, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "backward called on a tensor with no graph".into(),
            ));
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.0.id, vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.0.id) else {
                continue;
            };
            match &t.0.node {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
                    let input_grads = (node.backward)(&g, &needs);
                    for ((input, gi), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                        let Some(gi) = gi else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(gi.len(), input.numel(), "grad size for {}", node.op);
                        match grads.get_mut(&input.0.id) {
                            Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(input.0.id, gi);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.0.id) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::<f32>::from_vec(vec![], &[0]).is_err());
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        assert_eq!(t.numel(), 2);
        assert_eq!(t.dtype(), DType::F32);
    }

    #[test]
    fn backward_requires_scalar() {
        let w = Tensor::<f64>::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = scale(&w, 2.0);
        assert!(y.backward().is_err());
        let c = Tensor::<f64>::scalar(3.0);
        assert!(c.backward().is_err());
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = Tensor::<f64>::from_vec(vec![0.5, -1.5, 2.0], &[3]).unwrap();
        let w = Tensor::<f64>::parameter(vec![1.0, 1.0, 1.0], &[3]).unwrap();
        let loss = sum_all(&mul(&w, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.5, -1.5, 2.0]);
        assert!(x.grad().is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::from_vec(vec![2.0, 3.0], &[2]).unwrap();
        let w = Tensor::<f64>::parameter(vec![1.0, 1.0], &[2]).unwrap();
        let loss = sum_all(&mul(&w, &x).unwrap());
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0, 6.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn shared_subexpression_sums_both_paths() {
        let w = Tensor::<f64>::parameter(vec![3.0], &[1]).unwrap();
        let y = mul(&w, &w).unwrap();
        let loss = sum_all(&add(&y, &w).unwrap());
        loss.backward().unwrap();
        // d/dw (w^2 + w) = 2w + 1
        assert_eq!(w.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn untracked_ops_build_no_graph() {
        let a = Tensor::<f32>::ones(&[2, 2]);
        let b = add(&a, &a).unwrap();
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
        let p = Tensor::<f32>::parameter(vec![1.0; 4], &[2, 2]).unwrap();
        let c = add(&p, &a).unwrap();
        assert_eq!(c.op_name(), Some("add"));
        assert_eq!(c.graph_inputs().len(), 2);
        assert!(c.detach().is_leaf());
    }

    #[test]
    fn randn_is_reproducible() {
        let a = Tensor::<f32>::randn(&[4, 5], 7);
        let b = Tensor::<f32>::randn(&[4, 5], 7);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), Tensor::<f32>::randn(&[4, 5], 8).data());
    }
}
