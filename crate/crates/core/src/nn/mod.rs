//! Layers, parameter storage and initialization.

mod attention;
mod batchnorm;
mod layers;
mod params;
mod spectral;

pub use attention::{
    attention_inner_channels, self_attention, AttentionOutput, SelfAttentionParams,
};
pub use batchnorm::{batchnorm2d, RunningStats, BN_EPS, BN_MOMENTUM};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Linear, SelfAttention};
pub use params::{init_parameters, Init, ParamDecl, ParamKind, ParameterTree};
pub use spectral::{
    power_iteration, spectral_norm_apply, spectral_norm_power_iteration, SigmaEstimate,
    SpectralNormState, WeightMatrix, SIGMA_FLOOR,
};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// DCGAN weight initialization: N(0, 0.02²).
pub const WEIGHT_INIT: Init = Init::Normal {
    mean: 0.0,
    std: 0.02,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running stats and spectral-norm vectors update.
    Train,
    /// Stored statistics; no buffer changes.
    Eval,
}

/// Forward-pass context: parameter storage, mode, and whether learnable
/// parameters enter the graph as gradient-tracking leaves.
pub struct Ctx<'a, T: Scalar> {
    params: &'a mut ParameterTree<T>,
    mode: Mode,
    track: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(params: &'a mut ParameterTree<T>, mode: Mode, track: bool) -> Self {
        Ctx {
            params,
            mode,
            track,
        }
    }

    /// Training forward pass whose parameters receive gradients.
    pub fn train(params: &'a mut ParameterTree<T>) -> Self {
        Self::new(params, Mode::Train, true)
    }

    /// Training-mode forward pass with the parameters held constant.
    pub fn frozen(params: &'a mut ParameterTree<T>) -> Self {
        Self::new(params, Mode::Train, false)
    }

    pub fn eval(params: &'a mut ParameterTree<T>) -> Self {
        Self::new(params, Mode::Eval, false)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, name: &str) -> Result<Tensor<T>> {
        let p = self.params.param(name)?;
        Ok(if self.track { p.clone() } else { p.detach() })
    }

    pub fn buffer(&self, name: &str) -> Result<Tensor<T>> {
        self.params.buffer(name).cloned()
    }

    pub fn set_buffer(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        self.params.set_buffer(name, data)
    }
}
