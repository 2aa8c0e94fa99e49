use std::time::Instant;

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::classifier::{cross_entropy, ClassifierModel};
use super::log::{EpochSnapshot, StepRecord, TrainLog};
use crate::data::{images_to_tensor, GrayImage, LabeledImage};
use crate::error::{Error, Result};
use crate::gan::{
    build_stage1, build_stage2, loss_discriminator, loss_generator, GanConfig, GanModel,
    GanNetworks, LatentVector,
};
use crate::nn::{Ctx, ParameterTree};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn gan(steps: usize) -> Self {
        TrainConfig {
            steps,
            batch_size: 16,
            adam: AdamConfig::GAN,
        }
    }

    pub fn classifier(steps: usize) -> Self {
        TrainConfig {
            steps,
            batch_size: 16,
            adam: AdamConfig::CLASSIFIER,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "steps and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Reshuffles indices every epoch and hands out full batches; the tail of
/// an epoch that does not fill a batch is dropped.
struct EpochSampler {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
    epoch: usize,
    seed: u64,
}

impl EpochSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = EpochSampler {
            order: (0..n).collect(),
            batch: batch.min(n),
            pos: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order
            .shuffle(&mut rng::rng(rng::derive(self.seed, self.epoch as u64)));
    }

    /// Next batch, and whether it completes an epoch.
    fn next(&mut self) -> (Vec<usize>, bool) {
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        let done = self.pos + self.batch > self.order.len();
        if done {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        (b, done)
    }
}

fn gather<T: Scalar>(images: &[GrayImage], idx: &[usize]) -> Result<Tensor<T>> {
    let refs: Vec<&GrayImage> = idx.iter().map(|&i| &images[i]).collect();
    images_to_tensor(&refs)
}

fn check_images(images: &[GrayImage], side: usize, what: &str) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty dataset")));
    }
    if let Some(bad) = images.iter().find(|i| !i.is_square(side)) {
        return Err(Error::Config(format!(
            "{what}: expected {side}x{side} images, got {}x{}",
            bad.width, bad.height
        )));
    }
    Ok(())
}

struct Adversary<'a, T: Scalar> {
    g: &'a mut ParameterTree<T>,
    d: &'a mut ParameterTree<T>,
    opt_g: AdamState<T>,
    opt_d: AdamState<T>,
}

impl<T: Scalar> Adversary<'_, T> {
    /// One discriminator update on real vs detached fake, then one
    /// generator update through the frozen discriminator.
    fn step(
        &mut self,
        step: usize,
        real: &Tensor<T>,
        generate: impl Fn(&mut Ctx<'_, T>) -> Result<Tensor<T>>,
        discriminate: impl Fn(&mut Ctx<'_, T>, &Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<(f64, f64)> {
        let fake = generate(&mut Ctx::train(self.g))?;

        let d_real = discriminate(&mut Ctx::train(self.d), real)?;
        let d_fake = discriminate(&mut Ctx::train(self.d), &fake.detach())?;
        let loss_d = loss_discriminator(&d_real, &d_fake)?;
        let ld = loss_d.item()?.as_f64();
        if !ld.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss_d: ld,
                loss_g: f64::NAN,
            });
        }
        loss_d.backward()?;
        adam_step(self.d, &mut self.opt_d)?;
        self.d.zero_grad();

        let d_gen = discriminate(&mut Ctx::frozen(self.d), &fake)?;
        let loss_g = loss_generator(&d_gen)?;
        let lg = loss_g.item()?.as_f64();
        if !lg.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss_d: ld,
                loss_g: lg,
            });
        }
        loss_g.backward()?;
        adam_step(self.g, &mut self.opt_g)?;
        self.g.zero_grad();
        Ok((ld, lg))
    }
}

fn epoch_means(log: &TrainLog, since: usize) -> Vec<(String, f64)> {
    let recent = &log.steps[since..];
    let n = recent.len().max(1) as f64;
    let mut m = vec![(
        "loss_d".to_string(),
        recent.iter().map(|r| r.loss_d).sum::<f64>() / n,
    )];
    if recent.iter().all(|r| r.loss_g.is_some()) {
        m.push((
            "loss_g".to_string(),
            recent.iter().filter_map(|r| r.loss_g).sum::<f64>() / n,
        ));
    }
    m
}

/// Seeds of the independent streams of one training run.
struct Streams {
    init: u64,
    batches: u64,
    noise: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            init: rng::derive(seed, 0),
            batches: rng::derive(seed, 1),
            noise: rng::derive(seed, 2),
        }
    }

    fn z<T: Scalar>(&self, step: usize, which: u64, batch: usize, nz: usize) -> Result<Tensor<T>> {
        let s = rng::derive(rng::derive(self.noise, which), step as u64);
        Ok(LatentVector::sample(batch, nz, s)?.z)
    }
}

/// Alternating Stage-I training on `r1 × r1` images.
pub fn train_stage1<T: Scalar>(
    images: &[GrayImage],
    config: &GanConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(GanModel<T>, TrainLog)> {
    train.validate()?;
    let stage1_config = GanConfig {
        use_stage2: false,
        ..config.clone()
    };
    let nets = GanNetworks::new(&stage1_config)?;
    check_images(images, config.r1, "train_stage1")?;
    let streams = Streams::new(seed);
    let (mut g, mut d) = build_stage1::<T>(&stage1_config, streams.init)?;
    let mut sampler = EpochSampler::new(images.len(), train.batch_size, streams.batches);
    let mut adv = Adversary {
        opt_g: AdamState::new(&g, train.adam),
        opt_d: AdamState::new(&d, train.adam),
        g: &mut g,
        d: &mut d,
    };
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut epoch_start = 0;
    for step in 0..train.steps {
        let (idx, epoch_done) = sampler.next();
        let real = gather::<T>(images, &idx)?;
        let z = streams.z::<T>(step, 1, idx.len(), config.nz)?;
        let (ld, lg) = adv.step(
            step,
            &real,
            |ctx| nets.g1.forward(ctx, &z),
            |ctx, x| nets.d1.forward(ctx, x),
        )?;
        log.push(StepRecord {
            step,
            loss_d: ld,
            loss_g: Some(lg),
            wall_ms: start.elapsed().as_millis() as u64,
        })?;
        if epoch_done {
            log.epochs.push(EpochSnapshot {
                epoch: log.epochs.len(),
                step,
                metrics: epoch_means(&log, epoch_start),
            });
            epoch_start = log.steps.len();
        }
    }
    Ok((
        GanModel {
            config: stage1_config,
            g1: g,
            d1: d,
            g2: None,
            d2: None,
        },
        log,
    ))
}

/// Trains the Stage-II pair on `r2 × r2` images, conditioned on the output
/// of the frozen Stage-I generator run in eval mode.
pub fn train_stage2<T: Scalar>(
    stage1: &GanModel<T>,
    images: &[GrayImage],
    config: &GanConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(GanModel<T>, TrainLog)> {
    train.validate()?;
    let config = GanConfig {
        use_stage2: true,
        ..config.clone()
    };
    let s1 = &stage1.config;
    if s1.r1 != config.r1 || s1.nz != config.nz {
        return Err(Error::Config(format!(
            "Stage-I checkpoint is r1={} nz={}, config expects r1={} nz={}",
            s1.r1, s1.nz, config.r1, config.nz
        )));
    }
    let nets = GanNetworks::new(&config)?;
    stage1.g1.validate(&nets.g1.declare())?;
    check_images(images, config.r2, "train_stage2")?;
    let (g2_net, d2_net) = (
        nets.g2.as_ref().expect("stage2"),
        nets.d2.as_ref().expect("stage2"),
    );

    let streams = Streams::new(seed);
    let (mut g, mut d) = build_stage2::<T>(&config, streams.init)?;
    let mut g1 = stage1.g1.clone();
    let mut sampler = EpochSampler::new(images.len(), train.batch_size, streams.batches);
    let mut adv = Adversary {
        opt_g: AdamState::new(&g, train.adam),
        opt_d: AdamState::new(&d, train.adam),
        g: &mut g,
        d: &mut d,
    };
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut epoch_start = 0;
    for step in 0..train.steps {
        let (idx, epoch_done) = sampler.next();
        let real = gather::<T>(images, &idx)?;
        let z1 = streams.z::<T>(step, 1, idx.len(), config.nz)?;
        let z2 = streams.z::<T>(step, 2, idx.len(), config.nz)?;
        let coarse = nets.g1.forward(&mut Ctx::eval(&mut g1), &z1)?;
        let (ld, lg) = adv.step(
            step,
            &real,
            |ctx| g2_net.forward(ctx, &coarse, &z2),
            |ctx, x| d2_net.forward(ctx, x),
        )?;
        log.push(StepRecord {
            step,
            loss_d: ld,
            loss_g: Some(lg),
            wall_ms: start.elapsed().as_millis() as u64,
        })?;
        if epoch_done {
            log.epochs.push(EpochSnapshot {
                epoch: log.epochs.len(),
                step,
                metrics: epoch_means(&log, epoch_start),
            });
            epoch_start = log.steps.len();
        }
    }
    Ok((
        GanModel {
            config,
            g1: stage1.g1.clone(),
            d1: stage1.d1.clone(),
            g2: Some(g),
            d2: Some(d),
        },
        log,
    ))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Trains the classifier with softmax cross-entropy. Each epoch snapshot
/// records the mean loss, training accuracy and, when given, validation
/// accuracy (both in eval mode).
pub fn train_classifier<T: Scalar>(
    data: &[LabeledImage],
    validation: Option<&[LabeledImage]>,
    train: &TrainConfig,
    seed: u64,
) -> Result<(ClassifierModel<T>, TrainLog)> {
    train.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("train_classifier: empty dataset".into()))?;
    if data.iter().all(|i| i.label == first.label) {
        return Err(Error::InvalidArgument(format!(
            "train_classifier: only class `{}` present",
            first.label
        )));
    }
    let side = first.image.width;
    let images: Vec<GrayImage> = data.iter().map(|i| i.image.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|i| i.label.index()).collect();
    check_images(&images, side, "train_classifier")?;

    let streams = Streams::new(seed);
    let mut model = ClassifierModel::<T>::new(side, streams.init)?;
    let net = model.net();
    let mut opt = AdamState::new(&model.params, train.adam);
    let mut sampler = EpochSampler::new(images.len(), train.batch_size, streams.batches);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut epoch_start = 0;
    for step in 0..train.steps {
        let (idx, epoch_done) = sampler.next();
        let x = gather::<T>(&images, &idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (_, logits) = net.forward(&mut Ctx::train(&mut model.params), &x)?;
        let loss = cross_entropy(&logits, &y)?;
        let l = loss.item()?.as_f64();
        if !l.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss_d: l,
                loss_g: f64::NAN,
            });
        }
        loss.backward()?;
        adam_step(&mut model.params, &mut opt)?;
        model.params.zero_grad();
        log.push(StepRecord {
            step,
            loss_d: l,
            loss_g: None,
            wall_ms: start.elapsed().as_millis() as u64,
        })?;
        if epoch_done || step + 1 == train.steps {
            let mut metrics = epoch_means(&log, epoch_start);
            metrics.push((
                "train_accuracy".into(),
                accuracy(&model.predict(&images)?.labels(), &labels),
            ));
            if let Some(val) = validation.filter(|v| !v.is_empty()) {
                let vi: Vec<GrayImage> = val.iter().map(|i| i.image.clone()).collect();
                let vl: Vec<usize> = val.iter().map(|i| i.label.index()).collect();
                metrics.push((
                    "val_accuracy".into(),
                    accuracy(&model.predict(&vi)?.labels(), &vl),
                ));
            }
            log.epochs.push(EpochSnapshot {
                epoch: log.epochs.len(),
                step,
                metrics,
            });
            epoch_start = log.steps.len();
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = EpochSampler::new(10, 3, 4);
        let mut seen = Vec::new();
        for i in 0..3 {
            let (b, done) = s.next();
            assert_eq!(done, i == 2);
            seen.extend(b);
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let mut small = EpochSampler::new(2, 16, 0);
        assert_eq!(small.next().0.len(), 2);
    }
}
