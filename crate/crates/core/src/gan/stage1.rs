use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Ctx, ParamDecl, SelfAttention};
use crate::tensor::{self, Scalar, Tensor};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

fn log2_ratio(r: usize) -> Result<usize> {
    if r < 8 || !r.is_power_of_two() {
        return Err(Error::Config(format!("invalid resolution {r}")));
    }
    Ok((r / 4).trailing_zeros() as usize)
}

/// DCGAN generator: `z (B,nz)` → `(B,1,r1,r1)` in (−1,1).
#[derive(Clone, Debug)]
pub struct Stage1Generator {
    pub resolution: usize,
    nz: usize,
    project: ConvTranspose2d,
    project_bn: BatchNorm2d,
    /// Stride-2 upsampling blocks; the last one is the tanh output layer.
    ups: Vec<ConvTranspose2d>,
    up_bns: Vec<BatchNorm2d>,
    attention: Option<(usize, SelfAttention)>,
}

impl Stage1Generator {
    pub fn new(config: &GanConfig, prefix: &str) -> Result<Self> {
        config.validate()?;
        let k = log2_ratio(config.r1)?;
        let sn = config.use_sn;
        // hidden width halves at every doubling; ngf at the last hidden layer
        let width = |level: usize| config.ngf << (k - 1 - level);
        let project = ConvTranspose2d::new(format!("{prefix}/proj"), config.nz, width(0), 4, 1, 0)
            .with_sn(sn);
        let project_bn = BatchNorm2d::new(format!("{prefix}/proj_bn"), width(0));
        let mut ups = Vec::with_capacity(k);
        let mut up_bns = Vec::new();
        for level in 1..k {
            ups.push(
                ConvTranspose2d::new(
                    format!("{prefix}/up{level}"),
                    width(level - 1),
                    width(level),
                    4,
                    2,
                    1,
                )
                .with_sn(sn),
            );
            up_bns.push(BatchNorm2d::new(
                format!("{prefix}/up{level}_bn"),
                width(level),
            ));
        }
        ups.push(
            ConvTranspose2d::new(
                format!("{prefix}/out"),
                width(k - 1),
                config.image_channels,
                4,
                2,
                1,
            )
            .with_bias(true)
            .with_sn(sn),
        );
        // hidden level `l` has side 4·2^l
        let attention = config.use_sa.then(|| {
            let level = (config.sa_resolution / 4).trailing_zeros() as usize;
            (
                level,
                SelfAttention::new(format!("{prefix}/attn"), width(level), sn),
            )
        });
        Ok(Stage1Generator {
            resolution: config.r1,
            nz: config.nz,
            project,
            project_bn,
            ups,
            up_bns,
            attention,
        })
    }

    /// Number of transpose-conv blocks after the projection.
    pub fn num_up_blocks(&self) -> usize {
        self.ups.len()
    }

    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        self.project.declare(&mut d);
        self.project_bn.declare(&mut d);
        for (i, up) in self.ups.iter().enumerate() {
            up.declare(&mut d);
            if let Some(bn) = self.up_bns.get(i) {
                bn.declare(&mut d);
            }
        }
        if let Some((_, attn)) = &self.attention {
            attn.declare(&mut d);
        }
        d
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.rank() != 2 || z.shape()[1] != self.nz {
            return Err(Error::shape(
                "stage1_generator",
                format!("z must be (B, {}), got {:?}", self.nz, z.shape()),
            ));
        }
        let batch = z.shape()[0];
        let mut x = tensor::reshape(z, &[batch, self.nz, 1, 1])?;
        x = self.project.forward(ctx, &x)?;
        x = tensor::relu(&self.project_bn.forward(ctx, &x)?);
        for (level, up) in self.ups.iter().enumerate() {
            if let Some((at, attn)) = &self.attention {
                if *at == level {
                    x = attn.forward(ctx, &x)?;
                }
            }
            x = up.forward(ctx, &x)?;
            match self.up_bns.get(level) {
                Some(bn) => x = tensor::relu(&bn.forward(ctx, &x)?),
                None => x = tensor::tanh(&x),
            }
        }
        Ok(x)
    }
}

/// DCGAN discriminator: `(B,1,r,r)` → `(B,1)` probabilities.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub resolution: usize,
    blocks: Vec<Conv2d>,
    /// One per block after the first.
    bns: Vec<BatchNorm2d>,
    head: Conv2d,
    attention: Option<(usize, SelfAttention)>,
}

impl Discriminator {
    pub fn new(config: &GanConfig, resolution: usize, prefix: &str) -> Result<Self> {
        config.validate()?;
        let k = log2_ratio(resolution)?;
        let sn = config.use_sn;
        let width = |i: usize| config.ndf << i;
        let mut blocks = Vec::with_capacity(k);
        let mut bns = Vec::new();
        for i in 0..k {
            let cin = if i == 0 {
                config.image_channels
            } else {
                width(i - 1)
            };
            blocks
                .push(Conv2d::new(format!("{prefix}/down{i}"), cin, width(i), 4, 2, 1).with_sn(sn));
            if i > 0 {
                bns.push(BatchNorm2d::new(format!("{prefix}/down{i}_bn"), width(i)));
            }
        }
        let head = Conv2d::new(format!("{prefix}/head"), width(k - 1), 1, 4, 1, 0)
            .with_bias(true)
            .with_sn(sn);
        // block i outputs side r/2^(i+1)
        let attention = config.use_sa.then(|| {
            let i = (resolution / config.sa_resolution).trailing_zeros() as usize - 1;
            (
                i,
                SelfAttention::new(format!("{prefix}/attn"), width(i), sn),
            )
        });
        Ok(Discriminator {
            resolution,
            blocks,
            bns,
            head,
            attention,
        })
    }

    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.declare(&mut d);
            if i > 0 {
                self.bns[i - 1].declare(&mut d);
            }
        }
        self.head.declare(&mut d);
        if let Some((_, attn)) = &self.attention {
            attn.declare(&mut d);
        }
        d
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let s = image.shape();
        if s.len() != 4 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::shape(
                "discriminator",
                format!("expected (B,1,{r},{r}), got {s:?}", r = self.resolution),
            ));
        }
        let batch = s[0];
        let mut x = image.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(ctx, &x)?;
            if i > 0 {
                x = self.bns[i - 1].forward(ctx, &x)?;
            }
            x = tensor::leaky_relu(&x, LEAKY_SLOPE)?;
            if let Some((at, attn)) = &self.attention {
                if *at == i {
                    x = attn.forward(ctx, &x)?;
                }
            }
        }
        let logits = self.head.forward(ctx, &x)?;
        Ok(tensor::sigmoid(&tensor::reshape(&logits, &[batch, 1])?))
    }
}
