use crate::error::{Error, Result};
use crate::tensor::{add, bmm_t, conv2d, mul_scalar, reshape, softmax, Scalar, Tensor};

/// Inner (query/key) channel count for `channels` input channels.
pub fn attention_inner_channels(channels: usize) -> usize {
    (channels / 8).max(1)
}

/// Effective weights of one self-attention block. Convolution weights are
/// `(out, in, 1, 1)`; `gamma` has one element.
#[derive(Clone, Debug)]
pub struct SelfAttentionParams<T: Scalar> {
    pub wf: Tensor<T>,
    pub wg: Tensor<T>,
    pub wh: Tensor<T>,
    pub wv: Tensor<T>,
    pub gamma: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput<T: Scalar> {
    pub output: Tensor<T>,
    /// `(B, N, N)`: row `q` holds the weights position `q` assigns to every key.
    pub attention: Tensor<T>,
}

/// `y = gamma · Wv(h · softmax(fᵀg)ᵀ) + x` over the `N = H·W` positions,
/// with `f = Wf x` as queries, `g = Wg x` as keys and `h = Wh x` as values.
pub fn self_attention<T: Scalar>(
    x: &Tensor<T>,
    p: &SelfAttentionParams<T>,
) -> Result<AttentionOutput<T>> {
    let [batch, channels, h, w]: [usize; 4] = x.shape().try_into().map_err(|_| {
        Error::shape(
            "self_attention",
            format!("input must be rank 4, got {:?}", x.shape()),
        )
    })?;
    let inner = attention_inner_channels(channels);
    let expect = [
        (&p.wf, [inner, channels]),
        (&p.wg, [inner, channels]),
        (&p.wh, [channels, channels]),
        (&p.wv, [channels, channels]),
    ];
    for (wt, [o, i]) in expect {
        if wt.shape() != [o, i, 1, 1] {
            return Err(Error::ShapeMismatch {
                op: "self_attention",
                lhs: vec![o, i, 1, 1],
                rhs: wt.shape().to_vec(),
            });
        }
    }
    let n = h * w;
    let f = reshape(&conv2d(x, &p.wf, None, 1, 0)?, &[batch, inner, n])?;
    let g = reshape(&conv2d(x, &p.wg, None, 1, 0)?, &[batch, inner, n])?;
    let hv = reshape(&conv2d(x, &p.wh, None, 1, 0)?, &[batch, channels, n])?;

    let scores = bmm_t(&f, true, &g, false)?;
    let attention = softmax(&scores, 2)?;
    let attended = bmm_t(&hv, false, &attention, true)?;
    let o = conv2d(
        &reshape(&attended, &[batch, channels, h, w])?,
        &p.wv,
        None,
        1,
        0,
    )?;
    let output = add(&mul_scalar(&o, &p.gamma)?, x)?;
    Ok(AttentionOutput { output, attention })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: usize, gamma: f64, seed: u64) -> SelfAttentionParams<f64> {
        let inner = attention_inner_channels(c);
        SelfAttentionParams {
            wf: Tensor::randn(&[inner, c, 1, 1], seed),
            wg: Tensor::randn(&[inner, c, 1, 1], seed + 1),
            wh: Tensor::randn(&[c, c, 1, 1], seed + 2),
            wv: Tensor::randn(&[c, c, 1, 1], seed + 3),
            gamma: Tensor::scalar(gamma),
        }
    }

    #[test]
    fn inner_channel_floor() {
        assert_eq!(attention_inner_channels(1), 1);
        assert_eq!(attention_inner_channels(7), 1);
        assert_eq!(attention_inner_channels(64), 8);
    }

    #[test]
    fn zero_gamma_is_identity() {
        let x = Tensor::<f64>::randn(&[2, 16, 4, 4], 3);
        let out = self_attention(&x, &params(16, 0.0, 10)).unwrap();
        assert_eq!(out.output.data(), x.data());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let x = Tensor::<f64>::randn(&[2, 8, 3, 5], 4);
        let out = self_attention(&x, &params(8, 0.7, 20)).unwrap();
        assert_eq!(out.attention.shape(), &[2, 15, 15]);
        for row in out.attention.data().chunks(15) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn two_position_hand_evaluation() {
        // x = [1, 2] over two positions, wf = 1, wg = 0.5, wh = 2, wv = 1, gamma = 0.5
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0], &[1, 1, 1, 2]).unwrap();
        let one = |v: f64| Tensor::<f64>::from_vec(vec![v], &[1, 1, 1, 1]).unwrap();
        let p = SelfAttentionParams {
            wf: one(1.0),
            wg: one(0.5),
            wh: one(2.0),
            wv: one(1.0),
            gamma: Tensor::scalar(0.5),
        };
        let out = self_attention(&x, &p).unwrap();
        // f = [1,2], g = [0.5,1], h = [2,4]
        // q=0: scores [0.5, 1]   -> softmax weights a0 = 1/(1+e^{0.5})
        // q=1: scores [1, 2]     -> b0 = 1/(1+e)
        let a0 = 1.0 / (1.0 + 0.5f64.exp());
        let b0 = 1.0 / (1.0 + 1f64.exp());
        let o0 = a0 * 2.0 + (1.0 - a0) * 4.0;
        let o1 = b0 * 2.0 + (1.0 - b0) * 4.0;
        let expected = [1.0 + 0.5 * o0, 2.0 + 0.5 * o1];
        for (a, b) in out.output.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f64>::randn(&[1, 8, 2, 2], 1);
        let mut p = params(8, 0.0, 1);
        p.wh = Tensor::randn(&[4, 8, 1, 1], 2);
        assert!(self_attention(&x, &p).is_err());
    }
}
