//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use usgan::tensor::{self, Tensor};

pub mod cases;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Value domain of a gradient-check input.
#[derive(Clone, Copy, Debug)]
pub enum Domain {
    Normal,
    /// Standard normal pushed at least 0.05 away from zero, so kinks at
    /// the origin stay outside the finite-difference stencil.
    AwayFromZero,
    /// Uniform in (0.5, 2).
    Positive,
    /// Uniform in (0.05, 0.95).
    Probability,
}

pub fn sample(domain: Domain, n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| match domain {
            Domain::Normal => StandardNormal.sample(r),
            Domain::AwayFromZero => {
                let x: f64 = StandardNormal.sample(r);
                x.signum() * (x.abs() + 0.05)
            }
            Domain::Positive => r.random_range(0.5..2.0),
            Domain::Probability => r.random_range(0.05..0.95),
        })
        .collect()
}

pub fn normal(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    sample(Domain::Normal, n, r)
}

pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Input {
    pub fn new(shape: &[usize], domain: Domain, r: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        Input {
            shape: shape.to_vec(),
            data: sample(domain, n, r),
        }
    }
}

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub shapes: Vec<Vec<usize>>,
    /// Largest per-input `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub rel_err: f64,
}

fn weighted(out: &Tensor<f64>, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Compares reverse-mode gradients of `Σ wᵢ·f(x)ᵢ` (random fixed `w`)
/// against central differences in every input element.
pub fn grad_check<F>(inputs: &[Input], seed: u64, f: F) -> GradReport
where
    F: Fn(&[Tensor<f64>]) -> usgan::Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|i| Tensor::parameter(i.data.clone(), &i.shape).unwrap())
        .collect();
    let out = f(&leaves).unwrap();
    let w = normal(out.numel(), &mut rng(seed ^ 0x5eed));
    let wt = Tensor::from_vec(w.clone(), out.shape()).unwrap();
    tensor::sum_all(&tensor::mul(&out, &wt).unwrap())
        .backward()
        .unwrap();

    let eval = |k: usize, j: usize, delta: f64| {
        let ts: Vec<Tensor<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, inp)| {
                let mut d = inp.data.clone();
                if i == k {
                    d[j] += delta;
                }
                Tensor::from_vec(d, &inp.shape).unwrap()
            })
            .collect();
        weighted(&f(&ts).unwrap(), &w)
    };

    let mut worst: f64 = 0.0;
    for (k, (leaf, inp)) in leaves.iter().zip(inputs).enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; inp.data.len()]);
        let numeric: Vec<f64> = (0..inp.data.len())
            .map(|j| (eval(k, j, FD_STEP) - eval(k, j, -FD_STEP)) / (2.0 * FD_STEP))
            .collect();
        let diff = l2(analytic.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = l2(analytic.iter().copied()).max(l2(numeric.iter().copied()));
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    GradReport {
        shapes: inputs.iter().map(|i| i.shape.clone()).collect(),
        rel_err: worst,
    }
}

fn l2(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
