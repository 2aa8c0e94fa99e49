//! Procedural B-mode phantoms: random scatterers under a tissue reflectivity
//! map, Gaussian PSF on the I/Q channels, envelope detection and log
//! compression to 8 bits.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{GrayImage, Label};
use crate::error::{Error, Result};
use crate::rng;

pub const VIEWS_PER_SUBJECT: usize = 10;
pub const SUPPORTED_RESOLUTIONS: [usize; 4] = [32, 64, 128, 256];

/// Displayed dynamic range of the log compression, dB.
const DYNAMIC_RANGE_DB: f64 = 50.0;
/// Envelope amplitude mapped to 0 dB (full white) for every image.
const REFERENCE_AMPLITUDE: f64 = 45.0;

/// Class-dependent tissue parameters.
#[derive(Clone, Copy, Debug)]
struct TissueModel {
    echogenicity_db: f64,
    attenuation_db: f64,
    vessel_reflectivity: f64,
}

impl TissueModel {
    fn for_label(label: Label) -> Self {
        match label {
            Label::Healthy => TissueModel {
                echogenicity_db: 0.0,
                attenuation_db: 1.0,
                vessel_reflectivity: 0.04,
            },
            // steatosis: brighter parenchyma, stronger depth attenuation,
            // vessels washed out
            Label::Diseased => TissueModel {
                echogenicity_db: 6.0,
                attenuation_db: 5.0,
                vessel_reflectivity: 0.45,
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Vessel {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Vessel {
    /// 0 outside, 1 deep inside, smooth over a thin rim (unit-square coordinates).
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        let r = (u * u + v * v).sqrt();
        ((1.15 - r) / 0.3).clamp(0.0, 1.0)
    }
}

/// Per-subject anatomy, shared by all views.
#[derive(Clone, Debug)]
struct Anatomy {
    density: f64,
    gain_db: f64,
    capsule_depth: f64,
    vessels: Vec<Vessel>,
}

impl Anatomy {
    fn sample(seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let density = r.random_range(0.3..1.0);
        let gain_db = r.random_range(-2.0..2.0);
        let capsule_depth = r.random_range(0.06..0.14);
        let count = r.random_range(1..=3);
        let vessels = (0..count)
            .map(|_| {
                let a = r.random_range(0.04..0.10);
                Vessel {
                    cx: r.random_range(0.2..0.8),
                    cy: r.random_range(0.3..0.85),
                    a,
                    b: a * r.random_range(0.5..1.0),
                    angle: r.random_range(0.0..std::f64::consts::PI),
                }
            })
            .collect();
        Anatomy {
            density,
            gain_db,
            capsule_depth,
            vessels,
        }
    }
}

/// Normalized 1-D Gaussian taps with unit sum of squares, so filtering
/// white noise preserves its variance.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.into_iter().map(|t| t / norm).collect()
}

/// Separable convolution with zero padding.
fn blur(field: &[f64], n: usize, tx: &[f64], ty: &[f64]) -> Vec<f64> {
    let (rx, ry) = ((tx.len() / 2) as isize, (ty.len() / 2) as isize);
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for (k, t) in tx.iter().enumerate() {
                let xx = x as isize + k as isize - rx;
                if (0..n as isize).contains(&xx) {
                    acc += t * field[y * n + xx as usize];
                }
            }
            tmp[y * n + x] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for (k, t) in ty.iter().enumerate() {
            let yy = y as isize + k as isize - ry;
            if (0..n as isize).contains(&yy) {
                let src = &tmp[yy as usize * n..(yy as usize + 1) * n];
                for (o, s) in out[y * n..(y + 1) * n].iter_mut().zip(src) {
                    *o += t * s;
                }
            }
        }
    }
    out
}

fn render_view(label: Label, anatomy: &Anatomy, view_seed: u64, n: usize) -> GrayImage {
    let tissue = TissueModel::for_label(label);
    let mut r = rng::rng(view_seed);
    let shift_x = r.random_range(-0.1..0.1);
    let shift_y = r.random_range(-0.06..0.06);
    let view_gain_db = r.random_range(-0.5..0.5);

    let scale = n as f64 / 64.0;
    let tx = gaussian_taps((1.4 * scale).max(0.5));
    let ty = gaussian_taps((0.7 * scale).max(0.5));

    let mut in_phase = vec![0.0; n * n];
    let mut quadrature = vec![0.0; n * n];
    for y in 0..n {
        let depth = (y as f64 + 0.5) / n as f64;
        let depth_db = -tissue.attenuation_db * depth;
        for x in 0..n {
            let u = (x as f64 + 0.5) / n as f64 + shift_x;
            let v = depth + shift_y;
            let vessel = anatomy
                .vessels
                .iter()
                .map(|ves| ves.coverage(u, v))
                .fold(0.0, f64::max);
            let capsule = (-((v - anatomy.capsule_depth) / 0.012).powi(2)).exp();
            let db = tissue.echogenicity_db + anatomy.gain_db + view_gain_db + depth_db;
            let mut reflectivity = 10f64.powf(db / 10.0);
            reflectivity *= 1.0 - vessel * (1.0 - tissue.vessel_reflectivity);
            reflectivity *= 1.0 + 6.0 * capsule;

            let i = y * n + x;
            let ni: f64 = r.sample(StandardNormal);
            let nq: f64 = r.sample(StandardNormal);
            if r.random::<f64>() < anatomy.density {
                let amp = (reflectivity / anatomy.density).sqrt();
                in_phase[i] = amp * ni;
                quadrature[i] = amp * nq;
            }
        }
    }
    let i_f = blur(&in_phase, n, &tx, &ty);
    let q_f = blur(&quadrature, n, &tx, &ty);
    let pixels = i_f
        .iter()
        .zip(&q_f)
        .map(|(i, q)| {
            let envelope = (i * i + q * q).sqrt().max(1e-12);
            let db = 20.0 * (envelope / REFERENCE_AMPLITUDE).log10();
            let level = 255.0 * (db + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB;
            level.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: n,
        height: n,
        pixels,
    }
}

/// One simulated subject. The id is assigned by the dataset builder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subject {
    pub id: usize,
    pub label: Label,
    pub anatomy_seed: u64,
    pub images: Vec<GrayImage>,
}

/// Renders the ten views of one liver. Views share the anatomy drawn from
/// `anatomy_seed` and differ in probe position and speckle.
pub fn generate_subject(label: Label, anatomy_seed: u64, resolution: usize) -> Result<Subject> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::InvalidArgument(format!(
            "unsupported phantom resolution {resolution}; expected one of {SUPPORTED_RESOLUTIONS:?}"
        )));
    }
    let anatomy = Anatomy::sample(rng::derive(anatomy_seed, 0));
    let images = (0..VIEWS_PER_SUBJECT)
        .map(|v| {
            render_view(
                label,
                &anatomy,
                rng::derive(anatomy_seed, 1 + v as u64),
                resolution,
            )
        })
        .collect();
    Ok(Subject {
        id: 0,
        label,
        anatomy_seed,
        images,
    })
}
