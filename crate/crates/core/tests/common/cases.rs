//! Randomized gradient-check cases, five shapes per operation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use usgan::gan::{loss_discriminator, loss_generator};
use usgan::nn::{
    attention_inner_channels, batchnorm2d, self_attention, Mode, RunningStats, SelfAttentionParams,
};
use usgan::optim::cross_entropy;
use usgan::tensor::{self, conv2d, conv_transpose2d, maxpool2d, Tensor};

use super::{grad_check, rng, Domain, GradReport, Input};

pub const SHAPES_PER_OP: usize = 5;

fn repeat(seed: u64, mut case: impl FnMut(&mut ChaCha8Rng, u64) -> GradReport) -> Vec<GradReport> {
    let mut r = rng(seed);
    (0..SHAPES_PER_OP as u64)
        .map(|i| case(&mut r, seed * 100 + i))
        .collect()
}

pub fn conv2d_cases() -> Vec<GradReport> {
    repeat(1, |r, s| {
        let (b, cin, cout) = (
            r.random_range(1..=2),
            r.random_range(1..=3),
            r.random_range(1..=3),
        );
        let k = r.random_range(1..=4);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..k);
        let h = r.random_range(k..k + 5);
        let w = r.random_range(k..k + 5);
        let inputs = [
            Input::new(&[b, cin, h, w], Domain::Normal, r),
            Input::new(&[cout, cin, k, k], Domain::Normal, r),
            Input::new(&[cout], Domain::Normal, r),
        ];
        grad_check(&inputs, s, |t| {
            conv2d(&t[0], &t[1], Some(&t[2]), stride, pad)
        })
    })
}

pub fn conv_transpose2d_cases() -> Vec<GradReport> {
    repeat(2, |r, s| {
        let (b, cin, cout) = (
            r.random_range(1..=2),
            r.random_range(1..=3),
            r.random_range(1..=3),
        );
        let k = r.random_range(1..=4);
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..k);
        let h = r.random_range(1..5) + pad;
        let w = r.random_range(1..5) + pad;
        let inputs = [
            Input::new(&[b, cin, h, w], Domain::Normal, r),
            Input::new(&[cin, cout, k, k], Domain::Normal, r),
            Input::new(&[cout], Domain::Normal, r),
        ];
        grad_check(&inputs, s, |t| {
            conv_transpose2d(&t[0], &t[1], Some(&t[2]), stride, pad)
        })
    })
}

pub fn maxpool2d_cases() -> Vec<GradReport> {
    repeat(3, |r, s| {
        let k = r.random_range(2..=3);
        let stride = r.random_range(1..=3);
        let (b, c) = (r.random_range(1..=2), r.random_range(1..=3));
        let h = r.random_range(k..k + 5);
        let w = r.random_range(k..k + 5);
        grad_check(&[Input::new(&[b, c, h, w], Domain::Normal, r)], s, |t| {
            maxpool2d(&t[0], k, stride)
        })
    })
}

fn batchnorm_cases(seed: u64, mode: Mode) -> Vec<GradReport> {
    repeat(seed, |r, s| {
        let (b, c) = (r.random_range(2..=4), r.random_range(1..=3));
        let (h, w) = (r.random_range(1..=4), r.random_range(1..=4));
        let inputs = [
            Input::new(&[b, c, h, w], Domain::Normal, r),
            Input::new(&[c], Domain::Positive, r),
            Input::new(&[c], Domain::Normal, r),
        ];
        let stats = RunningStats {
            mean: super::sample(Domain::Normal, c, r),
            var: super::sample(Domain::Positive, c, r),
        };
        grad_check(&inputs, s, |t| {
            let mut st = stats.clone();
            batchnorm2d(&t[0], &t[1], &t[2], &mut st, mode, 1e-5, 0.1)
        })
    })
}

pub fn batchnorm2d_train_cases() -> Vec<GradReport> {
    batchnorm_cases(4, Mode::Train)
}

pub fn batchnorm2d_eval_cases() -> Vec<GradReport> {
    batchnorm_cases(5, Mode::Eval)
}

fn random_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = r.random_range(1..=4);
    (0..rank).map(|_| r.random_range(1..=4)).collect()
}

fn unary_cases(
    seed: u64,
    domain: Domain,
    f: impl Fn(&Tensor<f64>) -> usgan::Result<Tensor<f64>>,
) -> Vec<GradReport> {
    repeat(seed, |r, s| {
        let shape = random_shape(r);
        grad_check(&[Input::new(&shape, domain, r)], s, |t| f(&t[0]))
    })
}

/// Every elementwise activation plus softmax, with the name of each.
pub fn activation_cases() -> Vec<(&'static str, Vec<GradReport>)> {
    vec![
        (
            "relu",
            unary_cases(10, Domain::AwayFromZero, |x| Ok(tensor::relu(x))),
        ),
        (
            "leaky_relu",
            unary_cases(11, Domain::AwayFromZero, |x| tensor::leaky_relu(x, 0.2)),
        ),
        (
            "tanh",
            unary_cases(12, Domain::Normal, |x| Ok(tensor::tanh(x))),
        ),
        (
            "sigmoid",
            unary_cases(13, Domain::Normal, |x| Ok(tensor::sigmoid(x))),
        ),
        (
            "exp",
            unary_cases(14, Domain::Normal, |x| Ok(tensor::exp(x))),
        ),
        (
            "log",
            unary_cases(15, Domain::Positive, |x| Ok(tensor::log(x))),
        ),
        (
            "softmax",
            repeat(16, |r, s| {
                let shape = random_shape(r);
                let axis = r.random_range(0..shape.len());
                grad_check(&[Input::new(&shape, Domain::Normal, r)], s, |t| {
                    tensor::softmax(&t[0], axis)
                })
            }),
        ),
    ]
}

pub fn self_attention_cases() -> Vec<GradReport> {
    repeat(20, |r, s| {
        let b = r.random_range(1..=2);
        let c = [1, 2, 4, 8, 9, 16][r.random_range(0..6)];
        let (h, w) = (r.random_range(1..=4), r.random_range(1..=4));
        let inner = attention_inner_channels(c);
        let inputs = [
            Input::new(&[b, c, h, w], Domain::Normal, r),
            Input::new(&[inner, c, 1, 1], Domain::Normal, r),
            Input::new(&[inner, c, 1, 1], Domain::Normal, r),
            Input::new(&[c, c, 1, 1], Domain::Normal, r),
            Input::new(&[c, c, 1, 1], Domain::Normal, r),
            Input::new(&[1], Domain::AwayFromZero, r),
        ];
        grad_check(&inputs, s, |t| {
            let p = SelfAttentionParams {
                wf: t[1].clone(),
                wg: t[2].clone(),
                wh: t[3].clone(),
                wv: t[4].clone(),
                gamma: t[5].clone(),
            };
            Ok(self_attention(&t[0], &p)?.output)
        })
    })
}

/// Both adversarial losses and the classifier cross-entropy.
pub fn loss_cases() -> Vec<(&'static str, Vec<GradReport>)> {
    vec![
        (
            "loss_discriminator",
            repeat(30, |r, s| {
                let n = r.random_range(1..=8);
                let m = r.random_range(1..=8);
                let inputs = [
                    Input::new(&[n, 1], Domain::Probability, r),
                    Input::new(&[m, 1], Domain::Probability, r),
                ];
                grad_check(&inputs, s, |t| loss_discriminator(&t[0], &t[1]))
            }),
        ),
        (
            "loss_generator",
            repeat(31, |r, s| {
                let n = r.random_range(1..=8);
                grad_check(&[Input::new(&[n, 1], Domain::Probability, r)], s, |t| {
                    loss_generator(&t[0])
                })
            }),
        ),
        (
            "cross_entropy",
            repeat(32, |r, s| {
                let (n, k) = (r.random_range(1..=8), r.random_range(2..=4));
                let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
                grad_check(&[Input::new(&[n, k], Domain::Normal, r)], s, |t| {
                    cross_entropy(&t[0], &labels)
                })
            }),
        ),
    ]
}

/// The operations the layers are built from, grouped by name.
pub fn all_layer_cases() -> Vec<(&'static str, Vec<GradReport>)> {
    let mut out = vec![
        ("conv2d", conv2d_cases()),
        ("conv_transpose2d", conv_transpose2d_cases()),
        ("maxpool2d", maxpool2d_cases()),
        ("batchnorm2d/train", batchnorm2d_train_cases()),
        ("batchnorm2d/eval", batchnorm2d_eval_cases()),
        ("self_attention", self_attention_cases()),
    ];
    out.extend(activation_cases());
    out.extend(loss_cases());
    out
}
