use super::attention::{attention_inner_channels, self_attention, SelfAttentionParams};
use super::batchnorm::{batchnorm2d, RunningStats, BN_EPS, BN_MOMENTUM};
use super::params::{Init, ParamDecl};
use super::spectral::{power_iteration, WeightMatrix};
use super::{Ctx, Mode, WEIGHT_INIT};
use crate::error::Result;
use crate::tensor::{self, Scalar, Tensor};

/// Fetch `{name}/weight`, divided by its spectral norm when `sn` is set.
/// Train mode advances the stored `u` by one power iteration.
fn effective_weight<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    name: &str,
    row_axis: usize,
    sn: bool,
) -> Result<Tensor<T>> {
    let w = ctx.param(&format!("{name}/weight"))?;
    if !sn {
        return Ok(w);
    }
    let u_name = format!("{name}/sn_u");
    let mut u: Vec<f64> = ctx
        .buffer(&u_name)?
        .data()
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let mat = WeightMatrix::from_weight(&w, row_axis)?;
    let iterations = usize::from(ctx.mode() == Mode::Train);
    let est = power_iteration(&mat, &mut u, iterations)?;
    if ctx.mode() == Mode::Train {
        ctx.set_buffer(&u_name, u.into_iter().map(T::of).collect())?;
    }
    Ok(tensor::scale(&w, 1.0 / est.sigma))
}

fn declare_weight(out: &mut Vec<ParamDecl>, name: &str, shape: [usize; 4], rows: usize, sn: bool) {
    out.push(ParamDecl::learnable(
        format!("{name}/weight"),
        &shape,
        WEIGHT_INIT,
    ));
    if sn {
        out.push(ParamDecl::buffer(
            format!("{name}/sn_u"),
            &[rows],
            Init::UnitVector,
        ));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub spectral_norm: bool,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            bias: false,
            spectral_norm: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_sn(mut self, sn: bool) -> Self {
        self.spectral_norm = sn;
        self
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let shape = [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ];
        declare_weight(
            out,
            &self.name,
            shape,
            self.out_channels,
            self.spectral_norm,
        );
        if self.bias {
            out.push(ParamDecl::learnable(
                format!("{}/bias", self.name),
                &[self.out_channels],
                Init::Constant(0.0),
            ));
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = effective_weight(ctx, &self.name, 0, self.spectral_norm)?;
        let b = self
            .bias
            .then(|| ctx.param(&format!("{}/bias", self.name)))
            .transpose()?;
        tensor::conv2d(x, &w, b.as_ref(), self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub spectral_norm: bool,
}

impl ConvTranspose2d {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvTranspose2d {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            bias: false,
            spectral_norm: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_sn(mut self, sn: bool) -> Self {
        self.spectral_norm = sn;
        self
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let shape = [
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.kernel,
        ];
        declare_weight(
            out,
            &self.name,
            shape,
            self.out_channels,
            self.spectral_norm,
        );
        if self.bias {
            out.push(ParamDecl::learnable(
                format!("{}/bias", self.name),
                &[self.out_channels],
                Init::Constant(0.0),
            ));
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = effective_weight(ctx, &self.name, 1, self.spectral_norm)?;
        let b = self
            .bias
            .then(|| ctx.param(&format!("{}/bias", self.name)))
            .transpose()?;
        tensor::conv_transpose2d(x, &w, b.as_ref(), self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            channels,
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let c = [self.channels];
        let n = &self.name;
        out.push(ParamDecl::learnable(
            format!("{n}/scale"),
            &c,
            Init::Normal {
                mean: 1.0,
                std: 0.02,
            },
        ));
        out.push(ParamDecl::learnable(
            format!("{n}/shift"),
            &c,
            Init::Constant(0.0),
        ));
        out.push(ParamDecl::buffer(
            format!("{n}/running_mean"),
            &c,
            Init::Constant(0.0),
        ));
        out.push(ParamDecl::buffer(
            format!("{n}/running_var"),
            &c,
            Init::Constant(1.0),
        ));
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = &self.name;
        let (mean_name, var_name) = (format!("{n}/running_mean"), format!("{n}/running_var"));
        let mut stats = RunningStats {
            mean: ctx.buffer(&mean_name)?.to_vec(),
            var: ctx.buffer(&var_name)?.to_vec(),
        };
        let scale = ctx.param(&format!("{n}/scale"))?;
        let shift = ctx.param(&format!("{n}/shift"))?;
        let y = batchnorm2d(
            x,
            &scale,
            &shift,
            &mut stats,
            ctx.mode(),
            BN_EPS,
            BN_MOMENTUM,
        )?;
        if ctx.mode() == Mode::Train {
            ctx.set_buffer(&mean_name, stats.mean)?;
            ctx.set_buffer(&var_name, stats.var)?;
        }
        Ok(y)
    }
}

/// Dense layer `y = x·W + b`, `W: (in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Linear {
            name: name.into(),
            in_features,
            out_features,
        }
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        let n = &self.name;
        out.push(ParamDecl::learnable(
            format!("{n}/weight"),
            &[self.in_features, self.out_features],
            WEIGHT_INIT,
        ));
        out.push(ParamDecl::learnable(
            format!("{n}/bias"),
            &[self.out_features],
            Init::Constant(0.0),
        ));
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = ctx.param(&format!("{}/weight", self.name))?;
        let b = ctx.param(&format!("{}/bias", self.name))?;
        tensor::bias_add(&tensor::matmul(x, &w)?, &b)
    }
}

/// Residual self-attention block with a zero-initialized gate.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAttention {
    pub name: String,
    pub channels: usize,
    pub spectral_norm: bool,
}

impl SelfAttention {
    pub fn new(name: impl Into<String>, channels: usize, spectral_norm: bool) -> Self {
        SelfAttention {
            name: name.into(),
            channels,
            spectral_norm,
        }
    }

    fn projections(&self) -> [Conv2d; 4] {
        let c = self.channels;
        let inner = attention_inner_channels(c);
        let conv = |suffix: &str, cout| {
            Conv2d::new(format!("{}/{suffix}", self.name), c, cout, 1, 1, 0)
                .with_sn(self.spectral_norm)
        };
        [
            conv("f", inner),
            conv("g", inner),
            conv("h", c),
            conv("v", c),
        ]
    }

    pub fn declare(&self, out: &mut Vec<ParamDecl>) {
        for p in self.projections() {
            p.declare(out);
        }
        out.push(ParamDecl::learnable(
            format!("{}/gamma", self.name),
            &[1],
            Init::Constant(0.0),
        ));
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [f, g, h, v] = self.projections();
        let params = SelfAttentionParams {
            wf: effective_weight(ctx, &f.name, 0, self.spectral_norm)?,
            wg: effective_weight(ctx, &g.name, 0, self.spectral_norm)?,
            wh: effective_weight(ctx, &h.name, 0, self.spectral_norm)?,
            wv: effective_weight(ctx, &v.name, 0, self.spectral_norm)?,
            gamma: ctx.param(&format!("{}/gamma", self.name))?,
        };
        Ok(self_attention(x, &params)?.output)
    }
}
