//! Ablation grid: per split, an un-augmented baseline classifier (which
//! also serves as the IS/FID feature extractor) and, per variant, two
//! class-specific GANs, their metrics and a classifier trained on the
//! augmented set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::checkpoint::{classifier_to_checkpoint, gan_to_checkpoint};
use super::commands::{
    create_dir, load_config, resize_all, resize_labeled, synthesize_images, write_file,
};
use super::config::RunConfig;
use crate::data::{
    assemble_augmented_trainset, load_dataset, split_dataset, GrayImage, Label, LabeledImage,
    PhantomDataset,
};
use crate::error::{Error, Result};
use crate::gan::{Backbone, GanModel, Variant};
use crate::metrics::{
    classification_report, default_is_splits, feature_extract, frechet_distance, inception_score,
    paired_t_test, ClassificationReport, GanQuality, MetricsReport, TABLE1_HEADER, TABLE2_HEADER,
};
use crate::optim::{train_classifier, train_stage1, train_stage2, ClassifierModel, TrainLog};
use crate::rng;

pub const ORIGINAL: &str = "original";
pub const DETAIL_HEADER: &str =
    "repeat,variant,status,is_mean_abn,is_std_abn,is_mean_norm,is_std_norm,fid_abn,fid_norm,\
accuracy,precision,recall,f1,macro_precision,macro_recall,macro_f1";
pub const TTEST_HEADER: &str = "variant,baseline,metric,n_pairs,t_statistic,df,p_value,status";

/// Outcome of one (repeat, variant) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub repeat: usize,
    pub variant: String,
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellResult>,
    pub table1: String,
    pub table2: String,
    pub ttests: String,
    pub detail: String,
}

impl ExperimentOutcome {
    pub fn failures(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.outcome.is_err()).collect()
    }
}

struct Split {
    repeat: usize,
    train: Vec<LabeledImage>,
    test: Vec<LabeledImage>,
}

fn cell_seed(config: &RunConfig, key: &str) -> u64 {
    rng::derive_named(config.seed, key)
}

fn evaluate(
    model: &mut ClassifierModel<f32>,
    test: &[LabeledImage],
) -> Result<ClassificationReport> {
    let images: Vec<GrayImage> = test.iter().map(|i| i.image.clone()).collect();
    let truth: Vec<usize> = test.iter().map(|i| i.label.index()).collect();
    classification_report(&model.predict(&images)?.labels(), &truth)
}

fn save_log(dir: &Path, name: &str, log: &TrainLog) -> Result<()> {
    log.write_csv(&dir.join(format!("{name}_log.csv")))
}

/// Trains and evaluates a classifier; returns the model for reuse.
fn classifier_cell(
    config: &RunConfig,
    split: &Split,
    train: &[LabeledImage],
    key: &str,
    dir: &Path,
) -> Result<(ClassifierModel<f32>, ClassificationReport)> {
    let (mut model, log) = train_classifier::<f32>(
        train,
        None,
        &config.classifier_train(),
        cell_seed(config, key),
    )?;
    create_dir(dir)?;
    classifier_to_checkpoint(&model)?.save(&dir.join("classifier.usgn"))?;
    save_log(dir, "classifier", &log)?;
    let report = evaluate(&mut model, &split.test)?;
    Ok((model, report))
}

struct ClassPools {
    diseased: Vec<GrayImage>,
    healthy: Vec<GrayImage>,
    quality: GanQuality,
}

/// Synthesizes the class pool, resized to the evaluation side, and scores
/// it against the real training images of that class.
fn score_pool(
    config: &RunConfig,
    model: &mut GanModel<f32>,
    extractor: &mut ClassifierModel<f32>,
    real: &[GrayImage],
    need: usize,
    seed: u64,
) -> Result<(Vec<GrayImage>, f64, f64, f64)> {
    let side = extractor.resolution;
    let n = config.synth_per_class.max(need);
    let pool = resize_all(synthesize_images(model, n, seed)?, side)?;
    let scored = &pool[..config.synth_per_class.min(n)];
    let (fake_f, fake_p) = feature_extract(extractor, scored)?;
    let (real_f, _) = feature_extract(extractor, real)?;
    let splits = match config.is_splits {
        0 => default_is_splits(scored.len()),
        s => s,
    };
    let (is_mean, is_std) = inception_score(&fake_p, splits)?;
    let fid = frechet_distance(&real_f, &fake_f)?;
    Ok((pool, is_mean, is_std, fid))
}

/// Trains the Stage-I pair of one backbone once per class and evaluates
/// every requested variant of that backbone on top of it.
fn backbone_unit(
    config: &RunConfig,
    split: &Split,
    backbone: Backbone,
    variants: &[Variant],
    extractor: &ClassifierModel<f32>,
    out: &Path,
) -> Vec<CellResult> {
    let r = split.repeat;
    let mut stage1: BTreeMap<Label, Result<GanModel<f32>>> = BTreeMap::new();
    let s1_dir = out.join(format!("r{r}_{backbone}_stage1"));
    for label in [Label::Diseased, Label::Healthy] {
        let result = (|| {
            let gan = config.gan_config(Variant {
                backbone,
                stage2: false,
            });
            let real = real_class(split, label, gan.r1)?;
            let seed = cell_seed(config, &format!("r{r}/{backbone}/{label}/stage1"));
            let (model, log) = train_stage1::<f32>(&real, &gan, &config.stage1_train(), seed)?;
            create_dir(&s1_dir)?;
            gan_to_checkpoint(&model)?.save(&s1_dir.join(format!("gan_{label}.usgn")))?;
            save_log(&s1_dir, &format!("gan_{label}"), &log)?;
            Ok(model)
        })();
        stage1.insert(label, result);
    }

    variants
        .iter()
        .map(|&variant| {
            let outcome = (|| -> Result<MetricsReport> {
                let dir = out.join(format!("r{r}_{variant}"));
                let mut ex = extractor.clone();
                let mut pools = ClassPools {
                    diseased: Vec::new(),
                    healthy: Vec::new(),
                    quality: GanQuality::default(),
                };
                for label in [Label::Diseased, Label::Healthy] {
                    let base = match &stage1[&label] {
                        Ok(m) => m,
                        Err(e) => {
                            return Err(Error::InvalidArgument(format!(
                                "Stage-I {label} failed: {e}"
                            )))
                        }
                    };
                    let mut model = if variant.stage2 {
                        let gan = config.gan_config(variant);
                        let real = real_class(split, label, gan.r2)?;
                        let seed = cell_seed(config, &format!("r{r}/{variant}/{label}/stage2"));
                        let (m, log) =
                            train_stage2(base, &real, &gan, &config.stage2_train(), seed)?;
                        create_dir(&dir)?;
                        gan_to_checkpoint(&m)?.save(&dir.join(format!("gan_{label}.usgn")))?;
                        save_log(&dir, &format!("gan_{label}"), &log)?;
                        m
                    } else {
                        base.clone()
                    };
                    let real = real_class(split, label, ex.resolution)?;
                    let need = config.target_per_class.saturating_sub(real.len());
                    let seed = cell_seed(config, &format!("r{r}/{variant}/{label}/synth"));
                    let (pool, is_mean, is_std, fid) =
                        score_pool(config, &mut model, &mut ex, &real, need, seed)?;
                    let q = &mut pools.quality;
                    match label {
                        Label::Diseased => {
                            (q.is_mean_abn, q.is_std_abn, q.fid_abn) = (is_mean, is_std, fid);
                            pools.diseased = pool;
                        }
                        Label::Healthy => {
                            (q.is_mean_norm, q.is_std_norm, q.fid_norm) = (is_mean, is_std, fid);
                            pools.healthy = pool;
                        }
                    }
                }
                let augmented = assemble_augmented_trainset(
                    &split.train,
                    &pools.diseased,
                    &pools.healthy,
                    config.target_per_class,
                )?;
                let key = format!("r{r}/{variant}/classifier");
                let (_, report) = classifier_cell(config, split, &augmented, &key, &dir)?;
                Ok(MetricsReport {
                    variant: variant.name(),
                    gan: Some(pools.quality),
                    classification: Some(report),
                })
            })();
            CellResult {
                repeat: r,
                variant: variant.name(),
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect()
}

fn real_class(split: &Split, label: Label, side: usize) -> Result<Vec<GrayImage>> {
    resize_all(
        split
            .train
            .iter()
            .filter(|i| i.label == label)
            .map(|i| i.image.clone()),
        side,
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn detail_row(c: &CellResult) -> String {
    let (status, gan, cls) = match &c.outcome {
        Ok(m) => ("ok".to_string(), m.gan, m.classification),
        Err(e) => (
            format!("failed: {}", e.replace([',', '\n'], ";")),
            None,
            None,
        ),
    };
    let g = |f: fn(&GanQuality) -> f64| fmt_opt(gan.as_ref().map(f));
    let k = |f: fn(&ClassificationReport) -> f64| fmt_opt(cls.as_ref().map(f));
    format!(
        "{},{},{status},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        c.repeat,
        c.variant,
        g(|q| q.is_mean_abn),
        g(|q| q.is_std_abn),
        g(|q| q.is_mean_norm),
        g(|q| q.is_std_norm),
        g(|q| q.fid_abn),
        g(|q| q.fid_norm),
        k(|r| r.accuracy),
        k(|r| r.precision),
        k(|r| r.recall),
        k(|r| r.f1),
        k(|r| r.macro_precision),
        k(|r| r.macro_recall),
        k(|r| r.macro_f1),
    )
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

type Metric = (&'static str, fn(&MetricsReport) -> Option<f64>);

const GAN_METRICS: [Metric; 4] = [
    ("is_mean_abn", |m| m.gan.map(|g| g.is_mean_abn)),
    ("is_mean_norm", |m| m.gan.map(|g| g.is_mean_norm)),
    ("fid_abn", |m| m.gan.map(|g| g.fid_abn)),
    ("fid_norm", |m| m.gan.map(|g| g.fid_norm)),
];

const CLASSIFIER_METRICS: [Metric; 4] = [
    ("accuracy", |m| m.classification.map(|c| c.accuracy)),
    ("precision", |m| m.classification.map(|c| c.precision)),
    ("recall", |m| m.classification.map(|c| c.recall)),
    ("f1", |m| m.classification.map(|c| c.f1)),
];

fn successes<'a>(cells: &'a [CellResult], variant: &str) -> Vec<(usize, &'a MetricsReport)> {
    cells
        .iter()
        .filter(|c| c.variant == variant)
        .filter_map(|c| c.outcome.as_ref().ok().map(|m| (c.repeat, m)))
        .collect()
}

fn ttest_rows(
    cells: &[CellResult],
    variant: &str,
    baseline: &str,
    metrics: &[Metric],
    out: &mut String,
) {
    let a = successes(cells, variant);
    let b: BTreeMap<usize, &MetricsReport> = successes(cells, baseline).into_iter().collect();
    for (name, get) in metrics {
        let pairs: Vec<(f64, f64)> = a
            .iter()
            .filter_map(|(r, m)| Some((get(m)?, get(b.get(r)?)?)))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let line = match paired_t_test(&xs, &ys) {
            Ok(t) => format!(
                "{},{},{},{},ok",
                pairs.len(),
                t.t_statistic,
                t.degrees_of_freedom,
                t.p_value
            ),
            Err(Error::Degenerate(_)) => format!(
                "{},,{},,degenerate",
                pairs.len(),
                pairs.len().saturating_sub(1)
            ),
            Err(_) => format!("{},,,,insufficient_pairs", pairs.len()),
        };
        let _ = writeln!(out, "{variant},{baseline},{name},{line}");
    }
}

fn render_tables(config: &RunConfig, cells: &[CellResult]) -> (String, String, String, String) {
    let mut detail = format!("{DETAIL_HEADER}\n");
    for c in cells {
        let _ = writeln!(detail, "{}", detail_row(c));
    }

    let mut table1 = format!("{TABLE1_HEADER}\n");
    let mut table2 = format!("{TABLE2_HEADER}\n");
    let names: Vec<String> = std::iter::once(ORIGINAL.to_string())
        .chain(config.variants.iter().map(Variant::name))
        .collect();
    for name in &names {
        let ok: Vec<&MetricsReport> = successes(cells, name).into_iter().map(|(_, m)| m).collect();
        let avg = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            mean(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
        };
        if name != ORIGINAL {
            let q = GanQuality {
                is_mean_abn: avg(&|m| m.gan.map(|g| g.is_mean_abn)),
                is_std_abn: avg(&|m| m.gan.map(|g| g.is_std_abn)),
                is_mean_norm: avg(&|m| m.gan.map(|g| g.is_mean_norm)),
                is_std_norm: avg(&|m| m.gan.map(|g| g.is_std_norm)),
                fid_abn: avg(&|m| m.gan.map(|g| g.fid_abn)),
                fid_norm: avg(&|m| m.gan.map(|g| g.fid_norm)),
            };
            let row = MetricsReport {
                variant: name.clone(),
                gan: Some(q),
                classification: None,
            };
            let _ = writeln!(table1, "{}", row.table1_row().expect("gan set"));
        }
        let c = ClassificationReport {
            accuracy: avg(&|m| m.classification.map(|c| c.accuracy)),
            precision: avg(&|m| m.classification.map(|c| c.precision)),
            recall: avg(&|m| m.classification.map(|c| c.recall)),
            f1: avg(&|m| m.classification.map(|c| c.f1)),
            macro_precision: f64::NAN,
            macro_recall: f64::NAN,
            macro_f1: f64::NAN,
        };
        let row = MetricsReport {
            variant: name.clone(),
            gan: None,
            classification: Some(c),
        };
        let _ = writeln!(table2, "{}", row.table2_row().expect("classification set"));
    }

    let mut ttests = format!("{TTEST_HEADER}\n");
    let base = Variant {
        backbone: Backbone::Dcgan,
        stage2: false,
    };
    for v in &config.variants {
        ttest_rows(cells, &v.name(), ORIGINAL, &CLASSIFIER_METRICS, &mut ttests);
        let mut baselines = Vec::new();
        if v.stage2
            && config.variants.contains(&Variant {
                stage2: false,
                ..*v
            })
        {
            baselines.push(Variant {
                stage2: false,
                ..*v
            });
        }
        if *v != base && config.variants.contains(&base) && !baselines.contains(&base) {
            baselines.push(base);
        }
        for b in baselines {
            let all: Vec<Metric> = GAN_METRICS
                .iter()
                .chain(&CLASSIFIER_METRICS)
                .copied()
                .collect();
            ttest_rows(cells, &v.name(), &b.name(), &all, &mut ttests);
        }
    }
    (table1, table2, ttests, detail)
}

pub struct ExperimentArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
}

/// Runs the full grid. Failed cells are recorded and excluded from the
/// means; the caller decides how to report them.
pub fn cmd_experiment(args: &ExperimentArgs) -> Result<ExperimentOutcome> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(d) = &args.data {
        config.data_dir = Some(d.clone());
    }
    let data_dir = config
        .data_dir
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data.dir".into()))?;
    let ds = load_dataset(&data_dir)?;
    let workers = config.effective_workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    create_dir(&args.out)?;
    write_file(
        &args.out.join(super::commands::RESOLVED_CONFIG_FILE),
        &config.to_text(),
    )?;
    let cell_dir = args.out.join("cells");
    let outcome = pool.install(|| run_grid(&config, &ds, &cell_dir))?;
    for (name, text) in [
        ("table1.csv", &outcome.table1),
        ("table2.csv", &outcome.table2),
        ("ttests.csv", &outcome.ttests),
        ("detail.csv", &outcome.detail),
    ] {
        write_file(&args.out.join(name), text)?;
    }
    Ok(outcome)
}

fn run_grid(config: &RunConfig, ds: &PhantomDataset, out: &Path) -> Result<ExperimentOutcome> {
    let side = config.gan.r2;
    let splits: Vec<Split> = (0..config.repeats)
        .map(|r| {
            let plan = split_dataset(ds, config.split_seed, r)?;
            Ok(Split {
                repeat: r,
                train: resize_labeled(&ds.images_of(&plan.train_subjects), side)?,
                test: resize_labeled(&ds.images_of(&plan.test_subjects), side)?,
            })
        })
        .collect::<Result<_>>()?;

    let originals: Vec<(CellResult, Option<ClassifierModel<f32>>)> = splits
        .par_iter()
        .map(|s| {
            let dir = out.join(format!("r{}_{ORIGINAL}", s.repeat));
            let key = format!("r{}/{ORIGINAL}/classifier", s.repeat);
            let res = classifier_cell(config, s, &s.train, &key, &dir);
            let (outcome, model) = match res {
                Ok((m, report)) => (
                    Ok(MetricsReport {
                        variant: ORIGINAL.into(),
                        gan: None,
                        classification: Some(report),
                    }),
                    Some(m),
                ),
                Err(e) => (Err(e.to_string()), None),
            };
            (
                CellResult {
                    repeat: s.repeat,
                    variant: ORIGINAL.into(),
                    outcome,
                },
                model,
            )
        })
        .collect();

    let mut backbones: Vec<Backbone> = config.variants.iter().map(|v| v.backbone).collect();
    backbones.sort();
    backbones.dedup();
    let units: Vec<(usize, Backbone)> = (0..splits.len())
        .flat_map(|i| backbones.iter().map(move |&b| (i, b)))
        .collect();
    let gan_cells: Vec<CellResult> = units
        .par_iter()
        .flat_map_iter(|&(i, backbone)| {
            let variants: Vec<Variant> = config
                .variants
                .iter()
                .copied()
                .filter(|v| v.backbone == backbone)
                .collect();
            match &originals[i].1 {
                Some(extractor) => {
                    backbone_unit(config, &splits[i], backbone, &variants, extractor, out)
                }
                None => variants
                    .iter()
                    .map(|v| CellResult {
                        repeat: splits[i].repeat,
                        variant: v.name(),
                        outcome: Err(
                            "feature extractor unavailable: baseline classifier failed".into()
                        ),
                    })
                    .collect(),
            }
        })
        .collect();

    let order: Vec<String> = std::iter::once(ORIGINAL.to_string())
        .chain(config.variants.iter().map(Variant::name))
        .collect();
    let mut cells: Vec<CellResult> = originals
        .into_iter()
        .map(|(c, _)| c)
        .chain(gan_cells)
        .collect();
    cells.sort_by_key(|c| (c.repeat, order.iter().position(|n| *n == c.variant)));
    let (table1, table2, ttests, detail) = render_tables(config, &cells);
    Ok(ExperimentOutcome {
        cells,
        table1,
        table2,
        ttests,
        detail,
    })
}
