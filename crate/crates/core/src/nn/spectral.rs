//! Spectral normalization: divide a weight by a power-iteration estimate of
//! its largest singular value.

use crate::error::{Error, Result};
use crate::tensor::{scale, Scalar, Tensor};

/// Floor for the singular-value estimate of a (near) zero matrix.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent left singular vector estimate for one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState {
    pub u: Vec<f64>,
    pub n_power_iterations: usize,
}

impl SpectralNormState {
    pub fn new(u: Vec<f64>, n_power_iterations: usize) -> Result<Self> {
        if n_power_iterations == 0 {
            return Err(Error::InvalidArgument(
                "n_power_iterations must be positive".into(),
            ));
        }
        let norm = l2(&u);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "u must have unit norm, got {norm}"
            )));
        }
        Ok(SpectralNormState {
            u,
            n_power_iterations,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    /// Set when the weight was numerically zero and `sigma` was floored.
    pub degenerate: bool,
}

/// Dense row-major matrix view used for the power iteration.
#[derive(Clone, Debug)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::shape(
                "spectral_norm",
                format!("{} values for {rows}×{cols}", data.len()),
            ));
        }
        Ok(WeightMatrix { rows, cols, data })
    }

    /// Reshape a weight tensor to `shape[axis] × rest`, with `axis`
    /// brought to the front (axis 0 for conv, 1 for transpose-conv).
    pub fn from_weight<T: Scalar>(w: &Tensor<T>, axis: usize) -> Result<Self> {
        let shape = w.shape();
        if axis >= shape.len() || (axis != 0 && axis != 1) {
            return Err(Error::shape(
                "spectral_norm",
                format!("row axis {axis} for shape {shape:?}"),
            ));
        }
        let rows = shape[axis];
        let cols = w.numel() / rows;
        let data = if axis == 0 {
            w.data().iter().map(|v| v.as_f64()).collect()
        } else {
            let (d0, inner) = (shape[0], shape[2..].iter().product::<usize>());
            let mut out = vec![0.0; w.numel()];
            for a in 0..d0 {
                for r in 0..rows {
                    for k in 0..inner {
                        out[r * d0 * inner + a * inner + k] =
                            w.data()[(a * rows + r) * inner + k].as_f64();
                    }
                }
            }
            out
        };
        Self::new(rows, cols, data)
    }

    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| dot(row, v)).collect()
    }

    fn mul_t_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &ui) in self.data.chunks(self.cols).zip(u) {
            out.iter_mut().zip(row).for_each(|(o, &w)| *o += w * ui);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2(&v).max(SIGMA_FLOOR);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Runs `iterations` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖` (zero rounds
/// only derives `v` from the stored `u`) and returns `σ = uᵀWv`.
pub fn power_iteration(
    w: &WeightMatrix,
    u: &mut Vec<f64>,
    iterations: usize,
) -> Result<SigmaEstimate> {
    if u.len() != w.rows {
        return Err(Error::shape(
            "spectral_norm",
            format!("u has length {}, weight has {} rows", u.len(), w.rows),
        ));
    }
    let mut v = normalize(w.mul_t_vec(u));
    for _ in 0..iterations {
        let wv = w.mul_vec(&v);
        if l2(&wv) > SIGMA_FLOOR {
            *u = normalize(wv);
        }
        v = normalize(w.mul_t_vec(u));
    }
    let sigma = dot(u, &w.mul_vec(&v));
    if sigma.is_finite() && sigma > SIGMA_FLOOR {
        Ok(SigmaEstimate {
            sigma,
            degenerate: false,
        })
    } else {
        Ok(SigmaEstimate {
            sigma: SIGMA_FLOOR,
            degenerate: true,
        })
    }
}

/// Estimate σ for `w` (already in matrix form), updating `state.u`.
pub fn spectral_norm_power_iteration(
    w: &WeightMatrix,
    state: &mut SpectralNormState,
) -> Result<SigmaEstimate> {
    power_iteration(w, &mut state.u, state.n_power_iterations)
}

/// `W / σ`. σ is a constant of the graph, so gradients reach `W` only
/// through the division. `row_axis` picks the output-channel axis.
pub fn spectral_norm_apply<T: Scalar>(
    weight: &Tensor<T>,
    row_axis: usize,
    state: &mut SpectralNormState,
) -> Result<(Tensor<T>, SigmaEstimate)> {
    let mat = WeightMatrix::from_weight(weight, row_axis)?;
    let est = spectral_norm_power_iteration(&mat, state)?;
    Ok((scale(weight, 1.0 / est.sigma), est))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_converges_to_largest() {
        let w = WeightMatrix::new(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let s = 0.5f64.sqrt();
        let mut st = SpectralNormState::new(vec![s, s], 20).unwrap();
        let est = spectral_norm_power_iteration(&w, &mut st).unwrap();
        assert!((est.sigma - 3.0).abs() < 1e-4);
        assert!((l2(&st.u) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_has_unit_sigma() {
        let w = WeightMatrix::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut u = normalize(vec![0.3, -0.2, 0.9]);
        let est = power_iteration(&w, &mut u, 1).unwrap();
        assert!((est.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_is_floored() {
        let w = WeightMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        let mut u = vec![1.0, 0.0];
        let est = power_iteration(&w, &mut u, 3).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.sigma, SIGMA_FLOOR);
        assert!((l2(&u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_divides_by_sigma() {
        let w = Tensor::<f64>::from_vec(vec![3.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let s = 0.5f64.sqrt();
        let mut st = SpectralNormState::new(vec![s, s], 30).unwrap();
        let (wn, _) = spectral_norm_apply(&w, 0, &mut st).unwrap();
        let expected = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in wn.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn transpose_layout_rows() {
        // weight (Cin=2, Cout=3, 1, 1): rows along axis 1 give the transpose
        let w = Tensor::<f64>::from_vec(vec![1., 2., 3., 4., 5., 6.], &[2, 3, 1, 1]).unwrap();
        let m = WeightMatrix::from_weight(&w, 1).unwrap();
        assert_eq!((m.rows, m.cols), (3, 2));
        assert_eq!(m.data, vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn rejects_bad_state() {
        assert!(SpectralNormState::new(vec![1.0, 1.0], 1).is_err());
        assert!(SpectralNormState::new(vec![1.0], 0).is_err());
        let w = WeightMatrix::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(power_iteration(&w, &mut vec![1.0], 1).is_err());
    }
}
