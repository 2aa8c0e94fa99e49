use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::{
    classifier_from_checkpoint, classifier_to_checkpoint, gan_from_checkpoint, gan_to_checkpoint,
    Checkpoint,
};
use super::config::RunConfig;
use crate::data::{
    generate_dataset, load_dataset, read_pgm, resize_image, tensor_to_images, write_pgm, GrayImage,
    Label, LabeledImage, PhantomDataset,
};
use crate::error::{Error, Result};
use crate::gan::{GanModel, Variant};
use crate::metrics::{
    default_is_splits, feature_extract, frechet_distance, inception_score, GanQuality,
    MetricsReport, TABLE1_HEADER,
};
use crate::optim::{train_classifier, train_stage1, train_stage2, TrainLog};
use crate::rng;
use crate::tensor::Scalar;

pub const CHECKPOINT_FILE: &str = "checkpoint.usgn";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.txt";

const SYNTH_BATCH: usize = 64;

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Bilinear resize when the side differs, otherwise a copy.
pub fn resize_all(
    images: impl IntoIterator<Item = GrayImage>,
    side: usize,
) -> Result<Vec<GrayImage>> {
    images
        .into_iter()
        .map(|img| {
            if img.is_square(side) {
                Ok(img)
            } else {
                resize_image(&img, side)
            }
        })
        .collect()
}

pub fn resize_labeled(images: &[LabeledImage], side: usize) -> Result<Vec<LabeledImage>> {
    images
        .iter()
        .map(|i| {
            Ok(LabeledImage {
                image: if i.image.is_square(side) {
                    i.image.clone()
                } else {
                    resize_image(&i.image, side)?
                },
                ..i.clone()
            })
        })
        .collect()
}

/// `n` images from the full pipeline. Batch `b` draws its latents from
/// child seed `b` of `seed`.
pub fn synthesize_images<T: Scalar>(
    model: &mut GanModel<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<GrayImage>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "number of images must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for b in 0..n.div_ceil(SYNTH_BATCH) {
        let count = SYNTH_BATCH.min(n - out.len());
        out.extend(tensor_to_images(
            &model.synthesize(count, rng::derive(seed, b as u64))?,
        )?);
    }
    Ok(out)
}

/// Every `.pgm` below `dir`, in path order.
pub fn read_pgm_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "pgm") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .pgm images under {}",
            dir.display()
        )));
    }
    paths.iter().map(read_pgm).collect()
}

pub struct PhantomArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<PhantomDataset> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.phantom_seed = s;
    }
    let ds = generate_dataset(&config.phantom, config.phantom_seed, &args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG_FILE), &config.to_text())?;
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
    Classifier,
}

pub struct TrainArgs {
    pub stage: Stage,
    pub variant: Option<Variant>,
    pub class: Option<Label>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub stage1_ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

fn dataset_dir(config: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.data_dir.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data.dir".into()))
}

fn class_images(ds: &PhantomDataset, class: Label, side: usize) -> Result<Vec<GrayImage>> {
    resize_all(
        ds.all_images()
            .into_iter()
            .filter(|i| i.label == class)
            .map(|i| i.image),
        side,
    )
}

fn write_run_outputs(
    out: &Path,
    ck: &Checkpoint,
    log: &TrainLog,
    config: &RunConfig,
) -> Result<()> {
    ck.save(&out.join(CHECKPOINT_FILE))?;
    log.write_csv(&out.join(TRAIN_LOG_FILE))?;
    write_file(&out.join(EPOCH_LOG_FILE), &log.epochs_csv())?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), &config.to_text())
}

/// Trains one stage (or the classifier) on the dataset and writes
/// checkpoint, logs and resolved config into `out`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainLog> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.stage == Stage::Two && args.stage1_ckpt.is_none() {
        return Err(Error::InvalidArgument(
            "--stage 2 requires --stage1-ckpt".into(),
        ));
    }
    let data_dir = dataset_dir(&config, args.data.as_deref())?;
    config.data_dir = Some(data_dir.clone());
    let need_class = || {
        args.class.ok_or_else(|| {
            Error::InvalidArgument("GAN training needs --class diseased|healthy".into())
        })
    };
    let ds = load_dataset(&data_dir)?;
    let gan_config = config.gan_config(config.variant);
    let (ck, log) = match args.stage {
        Stage::One => {
            let images = class_images(&ds, need_class()?, gan_config.r1)?;
            let (model, log) =
                train_stage1::<f32>(&images, &gan_config, &config.stage1_train(), config.seed)?;
            (gan_to_checkpoint(&model)?, log)
        }
        Stage::Two => {
            let path = args.stage1_ckpt.as_deref().expect("checked above");
            let stage1 = gan_from_checkpoint::<f32>(&Checkpoint::load(path)?)?;
            let images = class_images(&ds, need_class()?, gan_config.r2)?;
            let (model, log) = train_stage2(
                &stage1,
                &images,
                &gan_config,
                &config.stage2_train(),
                config.seed,
            )?;
            (gan_to_checkpoint(&model)?, log)
        }
        Stage::Classifier => {
            let images = resize_labeled(&ds.all_images(), gan_config.r2)?;
            let (model, log) =
                train_classifier::<f32>(&images, None, &config.classifier_train(), config.seed)?;
            (classifier_to_checkpoint(&model)?, log)
        }
    };
    create_dir(&args.out)?;
    write_run_outputs(&args.out, &ck, &log, &config)?;
    Ok(log)
}

pub struct SynthArgs {
    pub ckpt: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<GrayImage>> {
    if args.n == 0 {
        return Err(Error::InvalidArgument("--n must be positive".into()));
    }
    let mut model = gan_from_checkpoint::<f32>(&Checkpoint::load(&args.ckpt)?)?;
    let images = synthesize_images(&mut model, args.n, args.seed)?;
    create_dir(&args.out)?;
    for (i, img) in images.iter().enumerate() {
        write_pgm(args.out.join(format!("synth_{i:05}.pgm")), img)?;
    }
    Ok(images)
}

pub struct EvalGanArgs {
    pub real_dir: PathBuf,
    pub fake_dir: PathBuf,
    pub extractor_ckpt: PathBuf,
    pub out: PathBuf,
    /// Row label in the first column.
    pub variant: String,
    /// Which class's columns to fill.
    pub class: Label,
}

/// IS of the fake images and FID against the real ones, appended as one
/// GAN-quality table row; the other class's columns stay empty.
pub fn cmd_eval_gan(args: &EvalGanArgs) -> Result<MetricsReport> {
    let mut extractor =
        classifier_from_checkpoint::<f32>(&Checkpoint::load(&args.extractor_ckpt)?)?;
    let real = read_pgm_dir(&args.real_dir)?;
    let fake = read_pgm_dir(&args.fake_dir)?;
    let (real_f, _) = feature_extract(&mut extractor, &real)?;
    let (fake_f, fake_p) = feature_extract(&mut extractor, &fake)?;
    let (is_mean, is_std) = inception_score(&fake_p, default_is_splits(fake.len()))?;
    let fid = frechet_distance(&real_f, &fake_f)?;
    let mut q = GanQuality::default();
    let row = match args.class {
        Label::Diseased => {
            (q.is_mean_abn, q.is_std_abn, q.fid_abn) = (is_mean, is_std, fid);
            format!("{},{is_mean},{is_std},,,{fid},", args.variant)
        }
        Label::Healthy => {
            (q.is_mean_norm, q.is_std_norm, q.fid_norm) = (is_mean, is_std, fid);
            format!("{},,,{is_mean},{is_std},,{fid}", args.variant)
        }
    };
    let fresh = !args.out.exists()
        || fs::metadata(&args.out)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)
        .map_err(|e| Error::io(&args.out, e))?;
    let text = if fresh {
        format!("{TABLE1_HEADER}\n{row}\n")
    } else {
        format!("{row}\n")
    };
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(&args.out, e))?;
    Ok(MetricsReport {
        variant: args.variant.clone(),
        gan: Some(q),
        classification: None,
    })
}
