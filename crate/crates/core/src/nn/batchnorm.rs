use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batch normalization over `(B,C,H,W)`.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into `stats` with weight `momentum`. Eval mode uses
/// `stats` unchanged.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<Tensor<T>> {
    let [batch, channels, h, w]: [usize; 4] = input.shape().try_into().map_err(|_| {
        Error::shape(
            "batchnorm2d",
            format!("input must be rank 4, got {:?}", input.shape()),
        )
    })?;
    for t in [scale, shift] {
        if t.shape() != [channels] {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                lhs: vec![channels],
                rhs: t.shape().to_vec(),
            });
        }
    }
    if stats.mean.len() != channels || stats.var.len() != channels {
        return Err(Error::shape(
            "batchnorm2d",
            "running stats do not match channel count",
        ));
    }
    let hw = h * w;
    let count = batch * hw;
    if mode == Mode::Train && count < 2 {
        return Err(Error::shape(
            "batchnorm2d",
            format!("train mode needs at least 2 values per channel, got B·H·W = {count}"),
        ));
    }

    let x = input.data();
    let gamma = scale.data_arc();
    let beta = shift.data();
    let n = T::of(count as f64);
    let eps_t = T::of(eps);

    let mut mean = vec![T::zero(); channels];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let (mu, var) = match mode {
            Mode::Train => {
                let mut s = T::zero();
                for b in 0..batch {
                    s += x[(b * channels + c) * hw..][..hw]
                        .iter()
                        .copied()
                        .sum::<T>();
                }
                let mu = s / n;
                let mut ss = T::zero();
                for b in 0..batch {
                    ss += x[(b * channels + c) * hw..][..hw]
                        .iter()
                        .map(|&v| (v - mu) * (v - mu))
                        .sum::<T>();
                }
                let var = ss / n;
                let m = T::of(momentum);
                let unbiased = ss / T::of((count - 1) as f64);
                stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mu;
                stats.var[c] = (T::one() - m) * stats.var[c] + m * unbiased;
                (mu, var)
            }
            Mode::Eval => (stats.mean[c], stats.var[c]),
        };
        mean[c] = mu;
        inv_std[c] = (var + eps_t).sqrt().recip();
    }

    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * hw;
            for i in off..off + hw {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }

    let inputs = vec![input.clone(), scale.clone(), shift.clone()];
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        y,
        "batchnorm2d",
        inputs,
        move |g, need| {
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for b in 0..batch {
                for c in 0..channels {
                    let off = (b * channels + c) * hw;
                    for i in off..off + hw {
                        sum_g[c] += g[i];
                        sum_gx[c] += g[i] * xhat[i];
                    }
                }
            }
            let gx = need[0].then(|| {
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..batch {
                    for c in 0..channels {
                        let off = (b * channels + c) * hw;
                        let k = gamma[c] * inv_std[c];
                        for i in off..off + hw {
                            gx[i] = match mode {
                                Mode::Train => k * (g[i] - (sum_g[c] + xhat[i] * sum_gx[c]) / n),
                                Mode::Eval => k * g[i],
                            };
                        }
                    }
                }
                gx
            });
            vec![
                gx,
                need[1].then(|| sum_gx.clone()),
                need[2].then(|| sum_g.clone()),
            ]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones(&[c]), Tensor::zeros(&[c]))
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[4, 2, 3, 3], 7.0);
        let (s, b) = affine(2);
        let mut st = RunningStats::new(2);
        let y = batchnorm2d(&x, &s, &b, &mut st, Mode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!((st.mean[0] - 0.7).abs() < 1e-12);
        assert!((st.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn train_mode_standardizes() {
        let x = Tensor::<f64>::randn(&[8, 3, 4, 4], 9);
        let x = crate::tensor::add_scalar(&crate::tensor::scale(&x, 3.0), 2.0);
        let (s, b) = affine(3);
        let mut st = RunningStats::new(3);
        let y = batchnorm2d(&x, &s, &b, &mut st, Mode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|b| y.data()[(b * 3 + c) * 16..][..16].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_with_identity_stats_is_affine() {
        let x = Tensor::<f64>::randn(&[2, 2, 2, 2], 4);
        let s = Tensor::from_vec(vec![2.0, 0.5], &[2]).unwrap();
        let b = Tensor::from_vec(vec![1.0, -1.0], &[2]).unwrap();
        let mut st = RunningStats::new(2);
        let y = batchnorm2d(&x, &s, &b, &mut st, Mode::Eval, 0.0, BN_MOMENTUM).unwrap();
        for (i, (&yi, &xi)) in y.data().iter().zip(x.data()).enumerate() {
            let c = (i / 4) % 2;
            let expect = s.data()[c] * xi + b.data()[c];
            assert!((yi - expect).abs() < 1e-12);
        }
        assert_eq!(st, RunningStats::new(2));
    }

    #[test]
    fn single_value_per_channel_rejected_in_train() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let (s, b) = affine(2);
        let mut st = RunningStats::new(2);
        assert!(batchnorm2d(&x, &s, &b, &mut st, Mode::Train, BN_EPS, BN_MOMENTUM).is_err());
        assert!(batchnorm2d(&x, &s, &b, &mut st, Mode::Eval, BN_EPS, BN_MOMENTUM).is_ok());
    }
}
