//! Dense symmetric eigen-decomposition and PSD square roots, row-major.

use crate::error::{Error, Result};

/// Tolerance for the symmetry check, relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-8;

fn check_square(a: &[f64], d: usize) -> Result<()> {
    if d == 0 || a.len() != d * d {
        return Err(Error::shape(
            "sqrtm_psd",
            format!("{} entries do not form a {d}x{d} matrix", a.len()),
        ));
    }
    Ok(())
}

/// Eigenvalues and column eigenvectors (`v[i*d + j]` is component `i` of
/// vector `j`) of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_square(a, d)?;
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    (0..d).for_each(|i| v[i * d + i] = 1.0);
    let total: f64 = m.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * d + p], m[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..d).map(|i| m[i * d + i]).collect(), v))
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    crate::tensor::gemm(d, d, d, a, false, b, false, &mut c, false);
    c
}

/// Principal square root of a symmetric PSD matrix. Eigenvalues below zero
/// (rounding) are clamped to zero.
pub fn sqrtm_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    check_square(a, d)?;
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for i in 0..d {
        for j in i + 1..d {
            let diff = (a[i * d + j] - a[j * d + i]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:e}"
                )));
            }
        }
    }
    let (vals, vecs) = symmetric_eigen(a, d)?;
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let x: f64 = (0..d)
                .map(|k| vecs[i * d + k] * roots[k] * vecs[j * d + k])
                .sum();
            s[i * d + j] = x;
            s[j * d + i] = x;
        }
    }
    Ok(s)
}
