//! Binary checkpoint format.
//!
//! ```text
//! "USGN"  u32 version
//! u16 kind length, kind (UTF-8)
//! u32 meta length, meta (UTF-8 `key = value` lines)
//! u32 entry count, then per entry:
//!   u16 name length, name, u8 dtype (0 = f32, 1 = f64), u8 rank,
//!   rank × u64 extents, payload
//! ```
//! All integers and payloads are little-endian. Entries are sorted by name.

use std::path::Path;

use super::config::{parse_kv, parse_value};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanModel, GanNetworks};
use crate::nn::{ParamDecl, ParamKind, ParameterTree};
use crate::optim::{ClassifierModel, ClassifierNet};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"USGN";
pub const FORMAT_VERSION: u32 = 1;
pub const KIND_GAN: &str = "gan";
pub const KIND_CLASSIFIER: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub payload: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size());
        t.data().iter().for_each(|v| v.write_le(&mut payload));
        Entry {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "entry `{}` is {:?}, expected {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let data = self
            .payload
            .chunks(T::DTYPE.size())
            .map(T::read_le)
            .collect();
        Tensor::from_vec(data, &self.shape)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: String,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                offset: self.pos,
                msg: format!(
                    "truncated while reading {what} ({n} bytes needed, {} left)",
                    self.bytes.len() - self.pos
                ),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<String> {
        let at = self.pos;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format {
            what: "checkpoint",
            offset: at,
            msg: format!("{what} is not UTF-8"),
        })
    }
}

impl Checkpoint {
    pub fn new(kind: &str, meta: String) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            entries: Vec::new(),
        }
    }

    /// Adds every parameter and buffer of `tree`, keeping entries sorted.
    pub fn add_tree<T: Scalar>(&mut self, tree: &ParameterTree<T>) -> Result<()> {
        for (name, t) in tree.params().chain(tree.buffers()) {
            if self.entry(name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
            }
            self.entries.push(Entry::from_tensor(name, t));
        }
        self.entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Builds a tree holding exactly the declared tensors, checking each
    /// shape against its declaration.
    pub fn tree<T: Scalar>(&self, decls: &[ParamDecl]) -> Result<ParameterTree<T>> {
        let mut tree = ParameterTree::new();
        for d in decls {
            let e = self
                .entry(&d.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{}`", d.name)))?;
            if e.shape != d.shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` has shape {:?}, expected {:?}",
                    d.name, e.shape, d.shape
                )));
            }
            let t = e.to_tensor::<T>()?;
            match d.kind {
                ParamKind::Learnable => tree.insert_param(&d.name, &t)?,
                ParamKind::Buffer => tree.insert_buffer(&d.name, &t)?,
            }
        }
        Ok(tree)
    }

    /// Errors on the first entry not covered by `decls`.
    fn check_no_extra(&self, decls: &[&ParamDecl]) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|e| !decls.iter().any(|d| d.name == e.name))
        {
            Some(e) => Err(Error::Checkpoint(format!("unexpected entry `{}`", e.name))),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let kind_len = u16::try_from(self.kind.len())
            .map_err(|_| Error::Checkpoint("kind too long".into()))?;
        out.extend_from_slice(&kind_len.to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        let meta_len = u32::try_from(self.meta.len())
            .map_err(|_| Error::Checkpoint("meta too long".into()))?;
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name_len = u16::try_from(e.name.len())
                .map_err(|_| Error::Checkpoint(format!("name `{}` too long", e.name)))?;
            let rank = u8::try_from(e.shape.len())
                .map_err(|_| Error::Checkpoint(format!("`{}` rank > 255", e.name)))?;
            let numel: usize = e.shape.iter().product();
            if e.payload.len() != numel * e.dtype.size() {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` payload does not match its shape",
                    e.name
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.code());
            out.push(rank);
            e.shape
                .iter()
                .for_each(|&x| out.extend_from_slice(&(x as u64).to_le_bytes()));
            out.extend_from_slice(&e.payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                what: "checkpoint",
                offset: 0,
                msg: "bad magic (not a checkpoint file)".into(),
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let kind_len = r.u16("kind length")? as usize;
        let kind = r.text(kind_len, "kind")?;
        let meta_len = r.u32("meta length")? as usize;
        let meta = r.text(meta_len, "meta")?;
        let count = r.u32("entry count")? as usize;
        let mut entries: Vec<Entry> = Vec::new();
        for i in 0..count {
            let at = r.pos;
            let name_len = r.u16("entry name length")? as usize;
            let name = r.text(name_len, "entry name")?;
            let code = r.u8("dtype")?;
            let dtype = DType::from_code(code).ok_or_else(|| Error::Format {
                what: "checkpoint",
                offset: r.pos - 1,
                msg: format!("entry `{name}`: unknown dtype code {code}"),
            })?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let x = r.u64("extent")?;
                shape.push(
                    usize::try_from(x)
                        .map_err(|_| Error::Checkpoint(format!("`{name}` extent overflows")))?,
                );
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &x| a.checked_mul(x))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` is too large")))?;
            let payload = r.take(numel, &format!("payload of `{name}`"))?.to_vec();
            if entries.last().is_some_and(|p| p.name >= name) {
                return Err(Error::Format {
                    what: "checkpoint",
                    offset: at,
                    msg: format!("entry {i} `{name}` is out of order or duplicated"),
                });
            }
            entries.push(Entry {
                name,
                dtype,
                shape,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                what: "checkpoint",
                offset: r.pos,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            kind,
            meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn gan_config_to_meta(c: &GanConfig) -> String {
    format!(
        "nz = {}\nngf = {}\nndf = {}\nr1 = {}\nr2 = {}\nuse_sn = {}\nuse_sa = {}\nuse_stage2 = {}\nsa_resolution = {}\nimage_channels = {}\n",
        c.nz, c.ngf, c.ndf, c.r1, c.r2, c.use_sn, c.use_sa, c.use_stage2, c.sa_resolution, c.image_channels
    )
}

pub fn gan_config_from_meta(meta: &str) -> Result<GanConfig> {
    let mut c = GanConfig::default();
    for (line, k, v) in parse_kv(meta)? {
        match k.as_str() {
            "nz" => c.nz = parse_value(line, &k, &v)?,
            "ngf" => c.ngf = parse_value(line, &k, &v)?,
            "ndf" => c.ndf = parse_value(line, &k, &v)?,
            "r1" => c.r1 = parse_value(line, &k, &v)?,
            "r2" => c.r2 = parse_value(line, &k, &v)?,
            "use_sn" => c.use_sn = parse_value(line, &k, &v)?,
            "use_sa" => c.use_sa = parse_value(line, &k, &v)?,
            "use_stage2" => c.use_stage2 = parse_value(line, &k, &v)?,
            "sa_resolution" => c.sa_resolution = parse_value(line, &k, &v)?,
            "image_channels" => c.image_channels = parse_value(line, &k, &v)?,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown model setting `{other}`"
                )))
            }
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn gan_to_checkpoint<T: Scalar>(model: &GanModel<T>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(KIND_GAN, gan_config_to_meta(&model.config));
    ck.add_tree(&model.g1)?;
    ck.add_tree(&model.d1)?;
    if let (Some(g2), Some(d2)) = (&model.g2, &model.d2) {
        ck.add_tree(g2)?;
        ck.add_tree(d2)?;
    }
    Ok(ck)
}

/// Restores a GAN. A Stage-I-only checkpoint of a two-stage configuration
/// loads with `g2`/`d2` absent.
pub fn gan_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<GanModel<T>> {
    ck.expect_kind(KIND_GAN)?;
    let mut config = gan_config_from_meta(&ck.meta)?;
    let stage2_present = ck.entries.iter().any(|e| e.name.starts_with("g2/"));
    config.use_stage2 &= stage2_present;
    let nets = GanNetworks::new(&config)?;
    let (g1d, d1d) = (nets.g1.declare(), nets.d1.declare());
    let g2d = nets.g2.as_ref().map(|g| g.declare()).unwrap_or_default();
    let d2d = nets.d2.as_ref().map(|d| d.declare()).unwrap_or_default();
    let all: Vec<&ParamDecl> = g1d.iter().chain(&d1d).chain(&g2d).chain(&d2d).collect();
    ck.check_no_extra(&all)?;
    Ok(GanModel {
        g1: ck.tree(&g1d)?,
        d1: ck.tree(&d1d)?,
        g2: config.use_stage2.then(|| ck.tree(&g2d)).transpose()?,
        d2: config.use_stage2.then(|| ck.tree(&d2d)).transpose()?,
        config,
    })
}

pub fn classifier_to_checkpoint<T: Scalar>(model: &ClassifierModel<T>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(
        KIND_CLASSIFIER,
        format!("resolution = {}\n", model.resolution),
    );
    ck.add_tree(&model.params)?;
    Ok(ck)
}

pub fn classifier_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<ClassifierModel<T>> {
    ck.expect_kind(KIND_CLASSIFIER)?;
    let mut resolution = None;
    for (line, k, v) in parse_kv(&ck.meta)? {
        match k.as_str() {
            "resolution" => resolution = Some(parse_value(line, &k, &v)?),
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown classifier setting `{other}`"
                )))
            }
        }
    }
    let resolution =
        resolution.ok_or_else(|| Error::Checkpoint("classifier resolution missing".into()))?;
    let decls = ClassifierNet::new(resolution)?.declare();
    ck.check_no_extra(&decls.iter().collect::<Vec<_>>())?;
    ClassifierModel::from_params(resolution, ck.tree(&decls)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GanConfig {
        GanConfig {
            nz: 4,
            ngf: 2,
            ndf: 2,
            r1: 8,
            r2: 16,
            use_sn: true,
            use_stage2: true,
            ..GanConfig::default()
        }
    }

    #[test]
    fn bytes_round_trip() {
        let model = GanModel::<f32>::new(&small(), 3).unwrap();
        let ck = gan_to_checkpoint(&model).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let restored = gan_from_checkpoint::<f32>(&back).unwrap();
        assert_eq!(gan_to_checkpoint(&restored).unwrap(), ck);
        assert_eq!(restored.config, model.config);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let model = GanModel::<f64>::new(
            &GanConfig {
                use_stage2: false,
                ..small()
            },
            1,
        )
        .unwrap();
        let bytes = gan_to_checkpoint(&model).unwrap().to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(
                Checkpoint::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_and_magic_checks() {
        let ck = Checkpoint::new("x", String::new());
        let mut bytes = ck.to_bytes().unwrap();
        bytes[4] = 9;
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }

    #[test]
    fn shape_mismatch_names_entry() {
        let model = GanModel::<f32>::new(
            &GanConfig {
                use_stage2: false,
                ..small()
            },
            1,
        )
        .unwrap();
        let mut ck = gan_to_checkpoint(&model).unwrap();
        ck.meta = ck.meta.replace("ngf = 2", "ngf = 3");
        let err = gan_from_checkpoint::<f32>(&ck).unwrap_err().to_string();
        assert!(err.contains("g1/"), "{err}");
        assert!(gan_from_checkpoint::<f64>(&gan_to_checkpoint(&model).unwrap()).is_err());
    }
}
