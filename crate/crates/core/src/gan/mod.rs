//! Stage-I (DCGAN family) and Stage-II (encoder–decoder refinement)
//! networks and the adversarial losses.

mod config;
mod stage1;
mod stage2;

pub use config::{Backbone, GanConfig, Variant};
pub use stage1::{Discriminator, Stage1Generator};
pub use stage2::Stage2Generator;

use crate::error::{Error, Result};
use crate::nn::{init_parameters, Ctx, ParameterTree};
use crate::tensor::{self, Scalar, Tensor};

/// Latent batch `z ~ N(0, I)` of shape `(batch, nz)`.
#[derive(Clone, Debug)]
pub struct LatentVector<T: Scalar> {
    pub z: Tensor<T>,
}

impl<T: Scalar> LatentVector<T> {
    pub fn sample(batch: usize, nz: usize, seed: u64) -> Result<Self> {
        if nz == 0 || batch == 0 {
            return Err(Error::InvalidArgument(
                "latent batch and size must be positive".into(),
            ));
        }
        Ok(LatentVector {
            z: Tensor::randn(&[batch, nz], seed),
        })
    }
}

/// Network definitions for one configuration.
#[derive(Clone, Debug)]
pub struct GanNetworks {
    pub g1: Stage1Generator,
    pub d1: Discriminator,
    pub g2: Option<Stage2Generator>,
    pub d2: Option<Discriminator>,
}

impl GanNetworks {
    pub fn new(config: &GanConfig) -> Result<Self> {
        config.validate()?;
        let (g2, d2) = if config.use_stage2 {
            (
                Some(Stage2Generator::new(config, "g2")?),
                Some(Discriminator::new(config, config.r2, "d2")?),
            )
        } else {
            (None, None)
        };
        Ok(GanNetworks {
            g1: Stage1Generator::new(config, "g1")?,
            d1: Discriminator::new(config, config.r1, "d1")?,
            g2,
            d2,
        })
    }
}

/// Parameters of a (possibly two-stage) model.
#[derive(Clone, Debug)]
pub struct GanModel<T: Scalar = f32> {
    pub config: GanConfig,
    pub g1: ParameterTree<T>,
    pub d1: ParameterTree<T>,
    pub g2: Option<ParameterTree<T>>,
    pub d2: Option<ParameterTree<T>>,
}

pub fn build_stage1<T: Scalar>(
    config: &GanConfig,
    seed: u64,
) -> Result<(ParameterTree<T>, ParameterTree<T>)> {
    let nets = GanNetworks::new(config)?;
    Ok((
        init_parameters(&nets.g1.declare(), seed)?,
        init_parameters(&nets.d1.declare(), seed)?,
    ))
}

pub fn build_stage2<T: Scalar>(
    config: &GanConfig,
    seed: u64,
) -> Result<(ParameterTree<T>, ParameterTree<T>)> {
    if !config.use_stage2 {
        return Err(Error::Config("build_stage2 requires use_stage2".into()));
    }
    let nets = GanNetworks::new(config)?;
    let (g2, d2) = (
        nets.g2.expect("stage2 enabled"),
        nets.d2.expect("stage2 enabled"),
    );
    Ok((
        init_parameters(&g2.declare(), seed)?,
        init_parameters(&d2.declare(), seed)?,
    ))
}

impl<T: Scalar> GanModel<T> {
    pub fn new(config: &GanConfig, seed: u64) -> Result<Self> {
        let (g1, d1) = build_stage1(config, seed)?;
        let (g2, d2) = if config.use_stage2 {
            let (g2, d2) = build_stage2(config, seed)?;
            (Some(g2), Some(d2))
        } else {
            (None, None)
        };
        Ok(GanModel {
            config: config.clone(),
            g1,
            d1,
            g2,
            d2,
        })
    }

    /// Runs the full pipeline in eval mode for `batch` latent draws from
    /// `seed`. Stage II receives its own independent noise.
    pub fn synthesize(&mut self, batch: usize, seed: u64) -> Result<Tensor<T>> {
        let nets = GanNetworks::new(&self.config)?;
        let z1 = LatentVector::<T>::sample(batch, self.config.nz, crate::rng::derive(seed, 1))?;
        let stage1 = nets.g1.forward(&mut Ctx::eval(&mut self.g1), &z1.z)?;
        match (&nets.g2, self.g2.as_mut()) {
            (Some(g2), Some(params)) => {
                let z2 =
                    LatentVector::<T>::sample(batch, self.config.nz, crate::rng::derive(seed, 2))?;
                g2.forward(&mut Ctx::eval(params), &stage1, &z2.z)
            }
            _ => Ok(stage1),
        }
    }
}

fn check_probs<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.rank() == 0 || t.shape()[0] == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `−mean(log D(x)) − mean(log(1 − D(G(z))))`. `d_fake` must come from
/// generator output cut from the generator's graph.
pub fn loss_discriminator<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_probs("loss_discriminator", d_real)?;
    check_probs("loss_discriminator", d_fake)?;
    let real_term = tensor::mean_all(&tensor::log(d_real));
    let fake_term = tensor::mean_all(&tensor::log(&tensor::add_scalar(&tensor::neg(d_fake), 1.0)));
    Ok(tensor::neg(&tensor::add(&real_term, &fake_term)?))
}

/// `−mean(log D(G(z)))`.
pub fn loss_generator<T: Scalar>(d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_probs("loss_generator", d_fake)?;
    Ok(tensor::neg(&tensor::mean_all(&tensor::log(d_fake))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn probs(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), &[v.len(), 1]).unwrap()
    }

    fn small(r1: usize, r2: usize) -> GanConfig {
        GanConfig {
            nz: 8,
            ngf: 4,
            ndf: 4,
            r1,
            r2,
            sa_resolution: 8.min(r1 / 2),
            ..GanConfig::default()
        }
    }

    #[test]
    fn loss_spot_values() {
        let eps = 1e-9;
        let near_zero = loss_discriminator(&probs(&[1.0 - eps]), &probs(&[eps]))
            .unwrap()
            .item()
            .unwrap();
        assert!(near_zero.abs() < 1e-6);
        let ld = loss_discriminator(&probs(&[0.5]), &probs(&[0.5]))
            .unwrap()
            .item()
            .unwrap();
        assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-12);
        let ld = loss_discriminator(&probs(&[0.8]), &probs(&[0.3]))
            .unwrap()
            .item()
            .unwrap();
        assert!((ld - 0.5798).abs() < 1e-4);
        let lg = loss_generator(&probs(&[0.5])).unwrap().item().unwrap();
        assert!((lg - 2f64.ln()).abs() < 1e-12);
        let lg = loss_generator(&probs(&[0.3])).unwrap().item().unwrap();
        assert!((lg - 1.2040).abs() < 1e-4);
        assert!(
            loss_generator(&probs(&[1.0 - eps]))
                .unwrap()
                .item()
                .unwrap()
                < 1e-6
        );
    }

    #[test]
    fn stage1_shapes_and_ranges() {
        let config = small(32, 32);
        let nets = GanNetworks::new(&config).unwrap();
        let (mut g, mut d) = build_stage1::<f32>(&config, 1).unwrap();
        let z = LatentVector::<f32>::sample(16, 8, 3).unwrap().z;
        let img = nets.g1.forward(&mut Ctx::train(&mut g), &z).unwrap();
        assert_eq!(img.shape(), &[16, 1, 32, 32]);
        assert!(img.data().iter().all(|&v| v > -1.0 && v < 1.0));
        let p = nets.d1.forward(&mut Ctx::train(&mut d), &img).unwrap();
        assert_eq!(p.shape(), &[16, 1]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn stage1_block_count() {
        let nets = GanNetworks::new(&small(64, 64)).unwrap();
        assert_eq!(nets.g1.num_up_blocks(), 4);
        let nets = GanNetworks::new(&small(8, 8)).unwrap();
        assert_eq!(nets.g1.num_up_blocks(), 1);
    }

    #[test]
    fn stage2_shapes() {
        for (r1, r2) in [(64, 64), (32, 64), (8, 16)] {
            let config = GanConfig {
                use_stage2: true,
                ..small(r1, r2)
            };
            let nets = GanNetworks::new(&config).unwrap();
            let (mut g2, mut d2) = build_stage2::<f32>(&config, 2).unwrap();
            let img = Tensor::<f32>::randn(&[2, 1, r1, r1], 5);
            let z = LatentVector::<f32>::sample(2, 8, 4).unwrap().z;
            let g2net = nets.g2.as_ref().unwrap();
            let out = g2net.forward(&mut Ctx::train(&mut g2), &img, &z).unwrap();
            assert_eq!(out.shape(), &[2, 1, r2, r2]);
            assert!(out.data().iter().all(|&v| v > -1.0 && v < 1.0));
            let p = nets
                .d2
                .as_ref()
                .unwrap()
                .forward(&mut Ctx::train(&mut d2), &out)
                .unwrap();
            assert_eq!(p.shape(), &[2, 1]);
        }
    }

    #[test]
    fn encoder_levels() {
        let config = GanConfig {
            use_stage2: true,
            ..small(64, 64)
        };
        let nets = GanNetworks::new(&config).unwrap();
        let (mut g2, _) = build_stage2::<f32>(&config, 2).unwrap();
        let img = Tensor::<f32>::randn(&[1, 1, 64, 64], 5);
        let feats = nets
            .g2
            .unwrap()
            .encode(&mut Ctx::new(&mut g2, Mode::Eval, false), &img)
            .unwrap();
        let sides: Vec<usize> = feats.iter().map(|f| f.shape()[2]).collect();
        assert_eq!(sides, [64, 32, 16, 8, 4]);
    }

    #[test]
    fn stage2_requires_flag() {
        assert!(build_stage2::<f32>(&small(32, 32), 0).is_err());
    }

    #[test]
    fn synthesize_is_deterministic() {
        let config = GanConfig {
            use_stage2: true,
            ..small(16, 32)
        };
        let mut m = GanModel::<f32>::new(&config, 9).unwrap();
        let a = m.synthesize(3, 1).unwrap();
        let b = m.synthesize(3, 1).unwrap();
        assert_eq!(a.shape(), &[3, 1, 32, 32]);
        assert_eq!(a.data(), b.data());
    }
}
