//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::PhantomConfig;
use crate::error::{Error, Result};
use crate::gan::{GanConfig, Variant};
use crate::optim::{AdamConfig, TrainConfig};

/// Environment variable overriding `experiment.workers`.
pub const WORKERS_ENV: &str = "USGAN_WORKERS";

/// Parses `key = value` lines; `#` starts a comment. Returns
/// `(line number, key, value)` triples and rejects duplicate keys.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if let Some((first, ..)) = out.iter().find(|(_, key, _)| key == k) {
            return Err(Error::Config(format!(
                "line {}: `{k}` already set on line {first}",
                i + 1
            )));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<V: FromStr>(line: usize, key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

/// Every knob of a run. Unset keys keep their defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub phantom_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub variant: Variant,
    /// Architecture; the variant flags are applied per run.
    pub gan: GanConfig,
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub classifier_steps: usize,
    pub gan_adam: AdamConfig,
    pub classifier_adam: AdamConfig,
    pub repeats: usize,
    pub variants: Vec<Variant>,
    pub split_seed: u64,
    pub synth_per_class: usize,
    pub target_per_class: usize,
    pub workers: usize,
    /// 0 selects the split count from the sample size.
    pub is_splits: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20_190_415,
            phantom: PhantomConfig::default(),
            phantom_seed: 55,
            data_dir: None,
            variant: "dcgan".parse().expect("valid"),
            gan: GanConfig::default(),
            batch_size: 16,
            stage1_steps: 2000,
            stage2_steps: 2000,
            classifier_steps: 1000,
            gan_adam: AdamConfig::GAN,
            classifier_adam: AdamConfig::CLASSIFIER,
            repeats: 5,
            variants: Variant::all(),
            split_seed: 5,
            synth_per_class: 400,
            target_per_class: 500,
            workers: 1,
            is_splits: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (line, key, value) in parse_kv(text)? {
            c.set(line, &key, &value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let v = value;
        macro_rules! p {
            () => {
                parse_value(line, key, v)?
            };
        }
        match key {
            "seed" => self.seed = p!(),
            "phantom.n_diseased" => self.phantom.n_diseased = p!(),
            "phantom.n_healthy" => self.phantom.n_healthy = p!(),
            "phantom.resolution" => self.phantom.resolution = p!(),
            "phantom.pixel_spacing_mm" => self.phantom.pixel_spacing_mm = p!(),
            "phantom.seed" => self.phantom_seed = p!(),
            "data.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "gan.variant" => self.variant = p!(),
            "gan.nz" => self.gan.nz = p!(),
            "gan.ngf" => self.gan.ngf = p!(),
            "gan.ndf" => self.gan.ndf = p!(),
            "gan.r1" => self.gan.r1 = p!(),
            "gan.r2" => self.gan.r2 = p!(),
            "gan.sa_resolution" => self.gan.sa_resolution = p!(),
            "train.batch_size" => self.batch_size = p!(),
            "train.stage1_steps" => self.stage1_steps = p!(),
            "train.stage2_steps" => self.stage2_steps = p!(),
            "train.classifier_steps" => self.classifier_steps = p!(),
            "adam.lr" => self.gan_adam.lr = p!(),
            "adam.beta1" => self.gan_adam.beta1 = p!(),
            "adam.beta2" => self.gan_adam.beta2 = p!(),
            "adam.eps" => self.gan_adam.eps = p!(),
            "classifier.lr" => self.classifier_adam.lr = p!(),
            "classifier.beta1" => self.classifier_adam.beta1 = p!(),
            "classifier.beta2" => self.classifier_adam.beta2 = p!(),
            "classifier.eps" => self.classifier_adam.eps = p!(),
            "experiment.repeats" => self.repeats = p!(),
            "experiment.variants" => {
                self.variants = v
                    .split(',')
                    .map(|s| parse_value(line, key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "experiment.split_seed" => self.split_seed = p!(),
            "experiment.synth_per_class" => self.synth_per_class = p!(),
            "experiment.target_per_class" => self.target_per_class = p!(),
            "experiment.workers" => self.workers = p!(),
            "metrics.is_splits" => self.is_splits = p!(),
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.gan_config(self.variant).validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.repeats < 2 {
            return Err(Error::Config(
                "experiment.repeats must be at least 2 for paired tests".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("experiment.variants is empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("experiment.workers must be positive".into()));
        }
        for (name, a) in [
            ("adam", self.gan_adam),
            ("classifier", self.classifier_adam),
        ] {
            let ok = a.lr > 0.0
                && (0.0..1.0).contains(&a.beta1)
                && (0.0..1.0).contains(&a.beta2)
                && a.eps > 0.0;
            if !ok {
                return Err(Error::Config(format!(
                    "{name}: invalid optimizer settings {a:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn gan_config(&self, variant: Variant) -> GanConfig {
        self.gan.clone().with_variant(variant)
    }

    pub fn stage1_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.stage1_steps,
            batch_size: self.batch_size,
            adam: self.gan_adam,
        }
    }

    pub fn stage2_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.stage2_steps,
            ..self.stage1_train()
        }
    }

    pub fn classifier_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.classifier_steps,
            batch_size: self.batch_size,
            adam: self.classifier_adam,
        }
    }

    /// Worker count, overridden by the environment when set.
    pub fn effective_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::Config(format!(
                    "{WORKERS_ENV}={v} is not a positive integer"
                ))),
            },
            Err(_) => Ok(self.workers),
        }
    }

    /// Fully resolved configuration; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.gan;
        let variants: Vec<String> = self.variants.iter().map(Variant::name).collect();
        let data_dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let _ = write!(
            s,
            "# resolved run configuration\n\
             seed = {}\n\n\
             # phantom dataset\n\
             phantom.n_diseased = {}\nphantom.n_healthy = {}\nphantom.resolution = {}\n\
             phantom.pixel_spacing_mm = {}\nphantom.seed = {}\n\
             data.dir = {data_dir}\n\n\
             # networks\n\
             gan.variant = {}\ngan.nz = {}\ngan.ngf = {}\ngan.ndf = {}\ngan.r1 = {}\ngan.r2 = {}\n\
             gan.sa_resolution = {}\n\n\
             # training\n\
             train.batch_size = {}\ntrain.stage1_steps = {}\ntrain.stage2_steps = {}\ntrain.classifier_steps = {}\n\
             adam.lr = {}\nadam.beta1 = {}\nadam.beta2 = {}\nadam.eps = {}\n\
             classifier.lr = {}\nclassifier.beta1 = {}\nclassifier.beta2 = {}\nclassifier.eps = {}\n\n\
             # experiment grid\n\
             experiment.repeats = {}\nexperiment.variants = {}\nexperiment.split_seed = {}\n\
             experiment.synth_per_class = {}\nexperiment.target_per_class = {}\nexperiment.workers = {}\n\
             metrics.is_splits = {}\n",
            self.seed,
            self.phantom.n_diseased,
            self.phantom.n_healthy,
            self.phantom.resolution,
            self.phantom.pixel_spacing_mm,
            self.phantom_seed,
            self.variant,
            g.nz,
            g.ngf,
            g.ndf,
            g.r1,
            g.r2,
            g.sa_resolution,
            self.batch_size,
            self.stage1_steps,
            self.stage2_steps,
            self.classifier_steps,
            self.gan_adam.lr,
            self.gan_adam.beta1,
            self.gan_adam.beta2,
            self.gan_adam.eps,
            self.classifier_adam.lr,
            self.classifier_adam.beta1,
            self.classifier_adam.beta2,
            self.classifier_adam.eps,
            self.repeats,
            variants.join(","),
            self.split_seed,
            self.synth_per_class,
            self.target_per_class,
            self.workers,
            self.is_splits,
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig {
            data_dir: Some("/tmp/x".into()),
            ..RunConfig::default()
        };
        c.variants = vec!["dcgan_sn_ours".parse().unwrap()];
        c.gan_adam.lr = 1.5e-4;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = RunConfig::parse("seed = 1\nbogus = 2\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("gan.r1 = 48").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\n train.stage1_steps = 7 # trailing\n").unwrap();
        assert_eq!(c.stage1_steps, 7);
    }
}
