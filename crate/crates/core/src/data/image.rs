//! 8-bit grayscale images, binary PGM (P5) I/O and resampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Pixel value to the in-memory range: `x/127.5 − 1`.
pub fn normalize(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize`] with round-half-up and clamping to [0, 255].
pub fn denormalize(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    ((x + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not form a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Square image from normalized values in [−1, 1].
    pub fn from_normalized(side: usize, values: &[f64]) -> Result<Self> {
        Self::new(side, side, values.iter().map(|&v| denormalize(v)).collect())
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| normalize(p)).collect()
    }

    pub fn is_square(&self, side: usize) -> bool {
        self.width == side && self.height == side
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, msg: &str| Error::Format {
            what: "PGM",
            offset,
            msg: msg.to_string(),
        };
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(err(0, "expected magic `P5`"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for (i, field) in fields.iter_mut().enumerate() {
            // whitespace and comments before each header number
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            if i == 0 && pos == 2 {
                return Err(err(pos, "expected whitespace after magic"));
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(err(pos, "expected a decimal header field"));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
            *field = text
                .parse()
                .map_err(|_| err(start, "header field out of range"))?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(err(pos, "zero image extent"));
        }
        if maxval != 255 {
            return Err(err(pos, "only maxval 255 is supported"));
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(err(pos, "expected single whitespace before raster")),
        }
        let need = width
            .checked_mul(height)
            .ok_or_else(|| err(pos, "image extent overflows"))?;
        let payload = &bytes[pos..];
        if payload.len() < need {
            return Err(err(
                bytes.len(),
                &format!("truncated raster: {} of {need} bytes", payload.len()),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels: payload[..need].to_vec(),
        })
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GrayImage::from_pgm(&bytes).map_err(|e| match e {
        Error::Format { offset, msg, .. } => Error::Format {
            what: "PGM",
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.to_pgm()).map_err(|e| Error::io(path, e))
}

/// Stacks square images into a `(B, 1, side, side)` tensor of normalized values.
pub fn images_to_tensor<T: Scalar>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::ShapeMismatch {
                op: "images_to_tensor",
                lhs: vec![h, w],
                rhs: vec![img.height, img.width],
            });
        }
        data.extend(img.pixels.iter().map(|&p| T::of(normalize(p))));
    }
    Tensor::from_vec(data, &[images.len(), 1, h, w])
}

/// Splits a `(B, 1, H, W)` tensor into quantized images.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Result<Vec<GrayImage>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::shape(
            "tensor_to_images",
            format!("expected (B,1,H,W), got {s:?}"),
        ));
    }
    let plane = s[2] * s[3];
    Ok(t.data()
        .chunks(plane)
        .map(|c| GrayImage {
            width: s[3],
            height: s[2],
            pixels: c.iter().map(|v| denormalize(v.as_f64())).collect(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Nearest,
    Bilinear,
}

/// Real-valued single-channel image used for resampling and synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Source coordinate for output index `i` with half-pixel centres, plus the
/// two neighbours and the weight of the second.
fn taps(i: usize, scale: f64, n: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, s - lo as f64)
}

/// Central crop covering `crop_fraction` of each side, then resampling to
/// `out × out`.
pub fn center_crop_resize(
    image: &Plane,
    crop_fraction: f64,
    out: usize,
    mode: Resample,
) -> Result<Plane> {
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "crop_fraction {crop_fraction} not in (0, 1]"
        )));
    }
    if out < 2 {
        return Err(Error::InvalidArgument(format!(
            "output resolution {out} < 2"
        )));
    }
    let cw = (image.width as f64 * crop_fraction).round() as usize;
    let ch = (image.height as f64 * crop_fraction).round() as usize;
    if cw < 2 || ch < 2 {
        return Err(Error::InvalidArgument(format!(
            "crop of {cw}x{ch} px is degenerate"
        )));
    }
    let (ox, oy) = ((image.width - cw) / 2, (image.height - ch) / 2);
    let (sx, sy) = (cw as f64 / out as f64, ch as f64 / out as f64);
    let mut data = Vec::with_capacity(out * out);
    for y in 0..out {
        for x in 0..out {
            let v = match mode {
                Resample::Nearest => {
                    let px = (((x as f64 + 0.5) * sx).floor() as usize).min(cw - 1);
                    let py = (((y as f64 + 0.5) * sy).floor() as usize).min(ch - 1);
                    image.at(ox + px, oy + py)
                }
                Resample::Bilinear => {
                    let (x0, x1, fx) = taps(x, sx, cw);
                    let (y0, y1, fy) = taps(y, sy, ch);
                    let row = |yy: usize| {
                        image.at(ox + x0, oy + yy) * (1.0 - fx) + image.at(ox + x1, oy + yy) * fx
                    };
                    row(y0) * (1.0 - fy) + row(y1) * fy
                }
            };
            data.push(v);
        }
    }
    Plane::new(out, out, data)
}

/// Bilinear resize of a quantized square image.
pub fn resize_image(image: &GrayImage, out: usize) -> Result<GrayImage> {
    let plane = Plane::new(
        image.width,
        image.height,
        image.pixels.iter().map(|&p| p as f64).collect(),
    )?;
    let r = center_crop_resize(&plane, 1.0, out, Resample::Bilinear)?;
    GrayImage::new(
        out,
        out,
        r.data
            .iter()
            .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize(0), -1.0);
        assert_eq!(normalize(255), 1.0);
        assert_eq!(denormalize(-1.0), 0);
        assert_eq!(denormalize(1.0), 255);
        assert_eq!(denormalize(3.0), 255);
        for p in 0..=255u8 {
            assert_eq!(denormalize(normalize(p)), p);
        }
    }

    #[test]
    fn hand_written_pgm() {
        let mut bytes = b"P5\n# fixture\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 128, 254, 255]);
        let img = GrayImage::from_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, [0, 10, 20, 128, 254, 255]);
        assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
    }

    #[test]
    fn pgm_errors_carry_offsets() {
        match GrayImage::from_pgm(b"P6\n1 1\n255\n\0") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match GrayImage::from_pgm(b"P5\n2 2\n255\n\0\0") {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset, 13);
                assert!(msg.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(GrayImage::from_pgm(b"P5\n2 x\n255\n").is_err());
        assert!(GrayImage::from_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
    }

    #[test]
    fn resize_examples() {
        let board = Plane::new(
            4,
            4,
            (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect(),
        )
        .unwrap();
        let down = center_crop_resize(&board, 1.0, 2, Resample::Bilinear).unwrap();
        assert_eq!(down.data, [0.5; 4]);
        assert_eq!(
            center_crop_resize(&board, 1.0, 4, Resample::Bilinear).unwrap(),
            board
        );

        let small = Plane::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = center_crop_resize(&small, 1.0, 4, Resample::Nearest).unwrap();
        #[rustfmt::skip]
        let expected = [1.0, 1.0, 2.0, 2.0,
                        1.0, 1.0, 2.0, 2.0,
                        3.0, 3.0, 4.0, 4.0,
                        3.0, 3.0, 4.0, 4.0];
        assert_eq!(up.data, expected);
    }

    #[test]
    fn crop_takes_centre() {
        let p = Plane::new(4, 4, (0..16).map(f64::from).collect()).unwrap();
        let c = center_crop_resize(&p, 0.5, 2, Resample::Nearest).unwrap();
        assert_eq!(c.data, [5.0, 6.0, 9.0, 10.0]);
        assert!(center_crop_resize(&p, 0.25, 2, Resample::Nearest).is_err());
        assert!(center_crop_resize(&p, 0.0, 2, Resample::Nearest).is_err());
        assert!(center_crop_resize(&p, 1.0, 1, Resample::Nearest).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let a = GrayImage::new(2, 2, vec![0, 64, 128, 255]).unwrap();
        let b = GrayImage::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let t = images_to_tensor::<f32>(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(tensor_to_images(&t).unwrap(), vec![a, b]);
    }
}
