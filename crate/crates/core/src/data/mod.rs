//! Phantom liver datasets, subject-grouped splits and augmented training sets.

mod image;
mod phantom;

pub use image::{
    center_crop_resize, denormalize, images_to_tensor, normalize, read_pgm, resize_image,
    tensor_to_images, write_pgm, GrayImage, Plane, Resample,
};
pub use phantom::{generate_subject, Subject, SUPPORTED_RESOLUTIONS, VIEWS_PER_SUBJECT};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "subject_id,label,view_index,relative_path,sha256";
pub const TEST_SUBJECTS_PER_CLASS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Healthy = 0,
    Diseased = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Diseased];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Healthy),
            1 => Ok(Label::Diseased),
            _ => Err(Error::InvalidArgument(format!(
                "class index {i} is not binary"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Diseased => "diseased",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" | "normal" => Ok(Label::Healthy),
            "diseased" | "abnormal" => Ok(Label::Diseased),
            other => Err(Error::InvalidArgument(format!("unknown class `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub n_diseased: usize,
    pub n_healthy: usize,
    pub resolution: usize,
    pub pixel_spacing_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_diseased: 38,
            n_healthy: 17,
            resolution: 64,
            pixel_spacing_mm: 0.373,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomDataset {
    pub subjects: Vec<Subject>,
    pub config: PhantomConfig,
    pub master_seed: u64,
}

impl PhantomDataset {
    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn num_images(&self) -> usize {
        self.subjects.iter().map(|s| s.images.len()).sum()
    }

    pub fn subject(&self, id: usize) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    /// All images of the given subjects, in subject-id order.
    pub fn images_of(&self, ids: &[usize]) -> Vec<LabeledImage> {
        self.subjects
            .iter()
            .filter(|s| ids.contains(&s.id))
            .flat_map(|s| {
                s.images.iter().map(|img| LabeledImage {
                    image: img.clone(),
                    label: s.label,
                    provenance: Provenance::Real,
                })
            })
            .collect()
    }

    pub fn all_images(&self) -> Vec<LabeledImage> {
        let ids: Vec<usize> = self.subjects.iter().map(|s| s.id).collect();
        self.images_of(&ids)
    }

    pub fn image_path(subject: usize, view: usize) -> String {
        format!("subject_{subject:03}/view_{view:02}.pgm")
    }
}

/// Seed of subject `id`: the `id`-th splitmix64 child of the master seed.
pub fn subject_seed(master_seed: u64, id: usize) -> u64 {
    rng::derive(master_seed, id as u64)
}

/// Builds the dataset in memory. Subjects `0..n_diseased` are diseased, the
/// rest healthy.
pub fn build_dataset(config: &PhantomConfig, master_seed: u64) -> Result<PhantomDataset> {
    if config.n_diseased == 0 || config.n_healthy == 0 {
        return Err(Error::Config(
            "phantom dataset needs at least one subject per class".into(),
        ));
    }
    let total = config.n_diseased + config.n_healthy;
    let subjects = (0..total)
        .into_par_iter()
        .map(|id| {
            let label = if id < config.n_diseased {
                Label::Diseased
            } else {
                Label::Healthy
            };
            let mut s = generate_subject(label, subject_seed(master_seed, id), config.resolution)?;
            s.id = id;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomDataset {
        subjects,
        config: config.clone(),
        master_seed,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Atomic write: temp file in the same directory, then rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Generates the dataset and writes one PGM per image plus the manifest.
/// The manifest is written last, so its presence marks a complete dataset.
pub fn generate_dataset(
    config: &PhantomConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<PhantomDataset> {
    let dataset = build_dataset(config, master_seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = format!(
        "# phantom dataset\n# master_seed={master_seed}\n# resolution={}\n# pixel_spacing_mm={}\n# n_diseased={}\n# n_healthy={}\n{MANIFEST_HEADER}\n",
        config.resolution, config.pixel_spacing_mm, config.n_diseased, config.n_healthy
    );
    for s in &dataset.subjects {
        let dir = out_dir.join(format!("subject_{:03}", s.id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (v, img) in s.images.iter().enumerate() {
            let rel = PhantomDataset::image_path(s.id, v);
            let bytes = img.to_pgm();
            let path = out_dir.join(&rel);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            manifest.push_str(&format!(
                "{},{},{v},{rel},{}\n",
                s.id,
                s.label,
                sha256_hex(&bytes)
            ));
        }
    }
    write_atomic(&out_dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    Ok(dataset)
}

fn manifest_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        what: "manifest",
        offset: line,
        msg: msg.into(),
    }
}

/// Reads a dataset written by [`generate_dataset`], verifying every hash.
/// Format errors report the 1-based line number as the offset.
pub fn load_dataset(dir: &Path) -> Result<PhantomDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut config = PhantomConfig::default();
    let mut master_seed = None;
    let mut subjects: Vec<Subject> = Vec::new();
    let mut seen_header = false;
    for (n, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                let v = v.trim();
                let bad = |_| manifest_error(n, format!("bad value for `{}`", k.trim()));
                match k.trim() {
                    "master_seed" => master_seed = Some(v.parse().map_err(bad)?),
                    "resolution" => config.resolution = v.parse().map_err(bad)?,
                    "pixel_spacing_mm" => {
                        config.pixel_spacing_mm = v
                            .parse()
                            .map_err(|_| manifest_error(n, "bad pixel spacing"))?
                    }
                    "n_diseased" => config.n_diseased = v.parse().map_err(bad)?,
                    "n_healthy" => config.n_healthy = v.parse().map_err(bad)?,
                    _ => {}
                }
            }
            continue;
        }
        if !seen_header {
            if line != MANIFEST_HEADER {
                return Err(manifest_error(n, "missing column header"));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let [id, label, view, rel, hash] = cols[..] else {
            return Err(manifest_error(
                n,
                format!("expected 5 columns, got {}", cols.len()),
            ));
        };
        let id: usize = id
            .parse()
            .map_err(|_| manifest_error(n, "bad subject id"))?;
        let label: Label = label.parse().map_err(|_| manifest_error(n, "bad label"))?;
        let view: usize = view
            .parse()
            .map_err(|_| manifest_error(n, "bad view index"))?;
        let img_path = dir.join(rel);
        let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
        if sha256_hex(&bytes) != hash {
            return Err(manifest_error(n, format!("sha256 mismatch for {rel}")));
        }
        let image = GrayImage::from_pgm(&bytes)?;
        if !image.is_square(config.resolution) {
            return Err(manifest_error(
                n,
                format!("{rel} is not {0}x{0}", config.resolution),
            ));
        }
        if subjects.last().map(|s| s.id) != Some(id) {
            subjects.push(Subject {
                id,
                label,
                anatomy_seed: 0,
                images: Vec::new(),
            });
        }
        let s = subjects.last_mut().expect("pushed above");
        if s.label != label || s.images.len() != view {
            return Err(manifest_error(
                n,
                format!("records of subject {id} are out of order"),
            ));
        }
        s.images.push(image);
    }
    let master_seed = master_seed.ok_or_else(|| manifest_error(1, "missing `# master_seed=`"))?;
    for s in &mut subjects {
        s.anatomy_seed = subject_seed(master_seed, s.id);
    }
    Ok(PhantomDataset {
        subjects,
        config,
        master_seed,
    })
}

/// Subject-level train/test partition for one repeat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_subjects: Vec<usize>,
    pub test_subjects: Vec<usize>,
    pub repeat_index: usize,
    pub seed: u64,
}

/// Samples 7 test subjects per class without replacement; the remaining
/// subjects form the training set.
pub fn split_dataset(
    dataset: &PhantomDataset,
    seed: u64,
    repeat_index: usize,
) -> Result<SplitPlan> {
    let mut test = Vec::new();
    for label in Label::ALL {
        let ids: Vec<usize> = dataset
            .subjects
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.id)
            .collect();
        if ids.len() <= TEST_SUBJECTS_PER_CLASS {
            return Err(Error::InvalidArgument(format!(
                "need at least {} {label} subjects to split, have {}",
                TEST_SUBJECTS_PER_CLASS + 1,
                ids.len()
            )));
        }
        let stream = rng::derive(rng::derive(seed, repeat_index as u64), label.index() as u64);
        let mut r = rng::rng(stream);
        test.extend(
            index::sample(&mut r, ids.len(), TEST_SUBJECTS_PER_CLASS)
                .iter()
                .map(|i| ids[i]),
        );
    }
    test.sort_unstable();
    let train = dataset
        .subjects
        .iter()
        .map(|s| s.id)
        .filter(|id| !test.contains(id))
        .collect();
    Ok(SplitPlan {
        train_subjects: train,
        test_subjects: test,
        repeat_index,
        seed,
    })
}

/// Tops each class up to `target_per_class` with synthetic images. All real
/// images are kept; synthetic images are taken from the front of each pool.
pub fn assemble_augmented_trainset(
    real_train: &[LabeledImage],
    synth_diseased_pool: &[GrayImage],
    synth_healthy_pool: &[GrayImage],
    target_per_class: usize,
) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(2 * target_per_class);
    for (label, pool) in [
        (Label::Diseased, synth_diseased_pool),
        (Label::Healthy, synth_healthy_pool),
    ] {
        let real: Vec<&LabeledImage> = real_train.iter().filter(|i| i.label == label).collect();
        if real.len() > target_per_class {
            return Err(Error::InvalidArgument(format!(
                "{} real {label} images exceed the target of {target_per_class}",
                real.len()
            )));
        }
        let need = target_per_class - real.len();
        if pool.len() < need {
            return Err(Error::InvalidArgument(format!(
                "synthetic {label} pool has {} images, {need} needed (short by {})",
                pool.len(),
                need - pool.len()
            )));
        }
        out.extend(real.into_iter().cloned());
        out.extend(pool[..need].iter().map(|img| LabeledImage {
            image: img.clone(),
            label,
            provenance: Provenance::Synthetic,
        }));
    }
    Ok(out)
}
