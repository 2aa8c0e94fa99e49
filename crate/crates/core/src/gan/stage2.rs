use super::stage1::LEAKY_SLOPE;
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, Linear, ParamDecl};
use crate::tensor::{self, Scalar, Tensor};

/// Encoder–decoder refinement generator: `(Stage-I image, z)` → `(B,1,r2,r2)`.
///
/// The encoder applies conv3×3 + leaky-ReLU at every side length from `r1`
/// down to 4, max-pooling between levels. A linear projection of `z` is
/// reshaped to `(B, ngf, 4, 4)` and concatenated with the deepest features.
/// Each decoder level upsamples and concatenates the encoder features of the
/// same side length.
#[derive(Clone, Debug)]
pub struct Stage2Generator {
    pub r1: usize,
    pub r2: usize,
    nz: usize,
    ngf: usize,
    encoder: Vec<Conv2d>,
    z_project: Linear,
    decoder: Vec<(ConvTranspose2d, BatchNorm2d)>,
    upscale: Option<(ConvTranspose2d, BatchNorm2d)>,
    out: Conv2d,
}

impl Stage2Generator {
    pub fn new(config: &GanConfig, prefix: &str) -> Result<Self> {
        config.validate()?;
        let levels = (config.r1 / 4).trailing_zeros() as usize + 1;
        let sn = config.use_sn;
        let width = |i: usize| config.ngf << i.min(3);
        let encoder = (0..levels)
            .map(|i| {
                let cin = if i == 0 {
                    config.image_channels
                } else {
                    width(i - 1)
                };
                Conv2d::new(format!("{prefix}/enc{i}"), cin, width(i), 3, 1, 1)
                    .with_bias(true)
                    .with_sn(sn)
            })
            .collect();
        let z_project = Linear::new(format!("{prefix}/zproj"), config.nz, 16 * config.ngf);

        // decoder level i produces side r1/2^i and is followed by the skip of enc i
        let mut decoder = Vec::new();
        let mut channels = width(levels - 1) + config.ngf;
        for i in (0..levels - 1).rev() {
            decoder.push((
                ConvTranspose2d::new(format!("{prefix}/dec{i}"), channels, width(i), 4, 2, 1)
                    .with_sn(sn),
                BatchNorm2d::new(format!("{prefix}/dec{i}_bn"), width(i)),
            ));
            channels = 2 * width(i);
        }
        let upscale = (config.r2 == 2 * config.r1).then(|| {
            let up = (
                ConvTranspose2d::new(format!("{prefix}/up"), channels, config.ngf, 4, 2, 1)
                    .with_sn(sn),
                BatchNorm2d::new(format!("{prefix}/up_bn"), config.ngf),
            );
            channels = config.ngf;
            up
        });
        let out = Conv2d::new(
            format!("{prefix}/out"),
            channels,
            config.image_channels,
            3,
            1,
            1,
        )
        .with_bias(true)
        .with_sn(sn);
        Ok(Stage2Generator {
            r1: config.r1,
            r2: config.r2,
            nz: config.nz,
            ngf: config.ngf,
            encoder,
            z_project,
            decoder,
            upscale,
            out,
        })
    }

    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        self.encoder.iter().for_each(|c| c.declare(&mut d));
        self.z_project.declare(&mut d);
        for (up, bn) in self.decoder.iter().chain(&self.upscale) {
            up.declare(&mut d);
            bn.declare(&mut d);
        }
        self.out.declare(&mut d);
        d
    }

    /// Encoder feature maps, shallowest (side r1) first.
    pub fn encode<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        image: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let s = image.shape();
        if s.len() != 4 || s[2] != self.r1 || s[3] != self.r1 {
            return Err(Error::shape(
                "stage2_generator",
                format!(
                    "expected Stage-I images (B,1,{r},{r}), got {s:?}",
                    r = self.r1
                ),
            ));
        }
        let mut features = Vec::with_capacity(self.encoder.len());
        let mut x = image.clone();
        for (i, conv) in self.encoder.iter().enumerate() {
            if i > 0 {
                x = tensor::maxpool2d(&x, 2, 2)?;
            }
            x = tensor::leaky_relu(&conv.forward(ctx, &x)?, LEAKY_SLOPE)?;
            features.push(x.clone());
        }
        Ok(features)
    }

    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        image: &Tensor<T>,
        z: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let batch = image.shape().first().copied().unwrap_or(0);
        if z.shape() != [batch, self.nz] {
            return Err(Error::shape(
                "stage2_generator",
                format!("z must be ({batch}, {}), got {:?}", self.nz, z.shape()),
            ));
        }
        let features = self.encode(ctx, image)?;
        let zmap = tensor::reshape(&self.z_project.forward(ctx, z)?, &[batch, self.ngf, 4, 4])?;
        let mut x = tensor::concat(&[features[features.len() - 1].clone(), zmap], 1)?;
        for ((up, bn), skip) in self.decoder.iter().zip(features.iter().rev().skip(1)) {
            let h = up.forward(ctx, &x)?;
            x = tensor::relu(&bn.forward(ctx, &h)?);
            x = tensor::concat(&[x, skip.clone()], 1)?;
        }
        if let Some((up, bn)) = &self.upscale {
            let h = up.forward(ctx, &x)?;
            x = tensor::relu(&bn.forward(ctx, &h)?);
        }
        Ok(tensor::tanh(&self.out.forward(ctx, &x)?))
    }
}
