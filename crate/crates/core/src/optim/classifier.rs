//! Compact CNN used both as the downstream classifier and as the feature
//! extractor for IS/FID.

use crate::data::{images_to_tensor, GrayImage};
use crate::error::{Error, Result};
use crate::nn::{init_parameters, BatchNorm2d, Conv2d, Ctx, Linear, ParamDecl, ParameterTree};
use crate::tensor::{self, Scalar, Tensor};

pub const CLASSIFIER_WIDTHS: [usize; 4] = [8, 16, 32, 64];
pub const FEATURE_DIM: usize = 64;
pub const NUM_CLASSES: usize = 2;

/// Four stride-2 conv3×3 + BN + ReLU blocks, global average pooling and a
/// linear head.
#[derive(Clone, Debug)]
pub struct ClassifierNet {
    pub resolution: usize,
    blocks: Vec<(Conv2d, BatchNorm2d)>,
    head: Linear,
}

impl ClassifierNet {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config(format!(
                "classifier resolution {resolution} < 2"
            )));
        }
        let mut cin = 1;
        let blocks = CLASSIFIER_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let b = (
                    Conv2d::new(format!("clf/conv{i}"), cin, w, 3, 2, 1),
                    BatchNorm2d::new(format!("clf/bn{i}"), w),
                );
                cin = w;
                b
            })
            .collect();
        Ok(ClassifierNet {
            resolution,
            blocks,
            head: Linear::new("clf/head", FEATURE_DIM, NUM_CLASSES),
        })
    }

    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        for (conv, bn) in &self.blocks {
            conv.declare(&mut d);
            bn.declare(&mut d);
        }
        self.head.declare(&mut d);
        d
    }

    /// Returns pooled features `(B, 64)` and logits `(B, 2)`.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::shape(
                "classifier",
                format!(
                    "expected (B,1,{r},{r}) input, got {s:?}",
                    r = self.resolution
                ),
            ));
        }
        let mut h = x.clone();
        for (conv, bn) in &self.blocks {
            let c = conv.forward(ctx, &h)?;
            h = tensor::relu(&bn.forward(ctx, &c)?);
        }
        let features = tensor::mean(&h, &[2, 3])?;
        let logits = self.head.forward(ctx, &features)?;
        Ok((features, logits))
    }
}

/// Mean softmax cross-entropy of `logits (B, K)` against class indices.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {s:?} for {} labels", labels.len()),
        ));
    }
    let (b, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    // shift by the (constant) row max so exp never overflows
    let data = logits.data();
    let mut shift = Vec::with_capacity(b * k);
    for row in data.chunks(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        shift.extend(std::iter::repeat_n(m, k));
    }
    let shifted = tensor::sub(logits, &Tensor::from_vec(shift, s)?)?;
    let lse = tensor::log(&tensor::sum(&tensor::exp(&shifted), &[1])?);
    let mut onehot = vec![T::zero(); b * k];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * k + l] = T::one();
    }
    let picked = tensor::sum(&tensor::mul(&shifted, &Tensor::from_vec(onehot, s)?)?, &[1])?;
    Ok(tensor::mean_all(&tensor::sub(&lse, &picked)?))
}

#[derive(Clone, Debug)]
pub struct ClassifierModel<T: Scalar = f32> {
    pub resolution: usize,
    pub params: ParameterTree<T>,
}

/// Eval-mode outputs for a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// Row-major `(n, 64)`.
    pub features: Vec<f64>,
    /// Row-major `(n, 2)`.
    pub probs: Vec<f64>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.probs.len() / NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.probs
            .chunks(NUM_CLASSES)
            .map(|p| if p[1] > p[0] { 1 } else { 0 })
            .collect()
    }
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn new(resolution: usize, seed: u64) -> Result<Self> {
        let net = ClassifierNet::new(resolution)?;
        Ok(ClassifierModel {
            resolution,
            params: init_parameters(&net.declare(), seed)?,
        })
    }

    pub fn from_params(resolution: usize, params: ParameterTree<T>) -> Result<Self> {
        params.validate(&ClassifierNet::new(resolution)?.declare())?;
        Ok(ClassifierModel { resolution, params })
    }

    pub fn net(&self) -> ClassifierNet {
        ClassifierNet::new(self.resolution).expect("validated at construction")
    }

    pub fn predict(&mut self, images: &[GrayImage]) -> Result<Predictions> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images to classify".into()));
        }
        if let Some(bad) = images.iter().find(|i| !i.is_square(self.resolution)) {
            return Err(Error::InvalidArgument(format!(
                "extractor expects {0}x{0} images, got {1}x{2}",
                self.resolution, bad.width, bad.height
            )));
        }
        let net = self.net();
        let mut out = Predictions {
            features: Vec::with_capacity(images.len() * FEATURE_DIM),
            probs: Vec::with_capacity(images.len() * NUM_CLASSES),
        };
        for chunk in images.chunks(64) {
            let refs: Vec<&GrayImage> = chunk.iter().collect();
            let x = images_to_tensor::<T>(&refs)?;
            let (f, logits) = net.forward(&mut Ctx::eval(&mut self.params), &x)?;
            let p = tensor::softmax(&logits, 1)?;
            out.features.extend(f.data().iter().map(|v| v.as_f64()));
            out.probs.extend(p.data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = Tensor::from_vec(vec![0.3f64, -1.2, 2.0, 0.5], &[2, 2]).unwrap();
        let ce = cross_entropy(&logits, &[0, 1]).unwrap().item().unwrap();
        let l0 = -(0.3f64.exp() / (0.3f64.exp() + (-1.2f64).exp())).ln();
        let l1 = -(0.5f64.exp() / (2f64.exp() + 0.5f64.exp())).ln();
        assert!((ce - (l0 + l1) / 2.0).abs() < 1e-12);
        let huge = Tensor::from_vec(vec![1000.0f64, 0.0], &[1, 2]).unwrap();
        assert!(cross_entropy(&huge, &[0]).unwrap().item().unwrap().abs() < 1e-12);
        assert!(cross_entropy(&logits, &[0, 2]).is_err());
    }

    #[test]
    fn prediction_shapes() {
        let mut m = ClassifierModel::<f32>::new(16, 1).unwrap();
        let img = GrayImage::new(16, 16, (0..=255).collect()).unwrap();
        let p = m.predict(&[img.clone(), img.clone(), img]).unwrap();
        assert_eq!(p.features.len(), 3 * 64);
        assert_eq!(p.len(), 3);
        for row in p.probs.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
        assert_eq!(p.features[..64], p.features[64..128]);
        let wrong = GrayImage::new(8, 8, vec![0; 64]).unwrap();
        assert!(m.predict(&[wrong]).is_err());
    }
}
