use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Stage-I backbone variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backbone {
    Dcgan,
    DcganSn,
    DcganSnSa,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Dcgan, Backbone::DcganSn, Backbone::DcganSnSa];

    pub fn use_sn(self) -> bool {
        !matches!(self, Backbone::Dcgan)
    }

    pub fn use_sa(self) -> bool {
        matches!(self, Backbone::DcganSnSa)
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Dcgan => "dcgan",
            Backbone::DcganSn => "dcgan_sn",
            Backbone::DcganSnSa => "dcgan_sn_sa",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected dcgan, dcgan_sn or dcgan_sn_sa)"
                ))
            })
    }
}

/// A cell of the ablation grid: backbone, with or without the refinement stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub backbone: Backbone,
    pub stage2: bool,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        Backbone::ALL
            .into_iter()
            .flat_map(|backbone| [false, true].map(|stage2| Variant { backbone, stage2 }))
            .collect()
    }

    /// `dcgan`, `dcgan_ours`, `dcgan_sn_sa_ours`, ...
    pub fn name(&self) -> String {
        if self.stage2 {
            format!("{}_ours", self.backbone)
        } else {
            self.backbone.to_string()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, stage2) = match s.strip_suffix("_ours").or_else(|| s.strip_suffix("+ours")) {
            Some(base) => (base, true),
            None => (s, false),
        };
        Ok(Variant {
            backbone: base.parse()?,
            stage2,
        })
    }
}

/// Architecture knobs shared by both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub nz: usize,
    pub ngf: usize,
    pub ndf: usize,
    /// Stage-I output side length.
    pub r1: usize,
    /// Stage-II output side length.
    pub r2: usize,
    pub use_sn: bool,
    pub use_sa: bool,
    pub use_stage2: bool,
    /// Feature-map side length at which self-attention is inserted.
    pub sa_resolution: usize,
    pub image_channels: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            nz: 100,
            ngf: 64,
            ndf: 64,
            r1: 32,
            r2: 64,
            use_sn: false,
            use_sa: false,
            use_stage2: false,
            sa_resolution: 16,
            image_channels: 1,
        }
    }
}

impl GanConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.use_sn = variant.backbone.use_sn();
        self.use_sa = variant.backbone.use_sa();
        self.use_stage2 = variant.stage2;
        self
    }

    pub fn backbone(&self) -> Backbone {
        match (self.use_sn, self.use_sa) {
            (false, _) => Backbone::Dcgan,
            (true, false) => Backbone::DcganSn,
            (true, true) => Backbone::DcganSnSa,
        }
    }

    /// Final output resolution of the configured pipeline.
    pub fn output_resolution(&self) -> usize {
        if self.use_stage2 {
            self.r2
        } else {
            self.r1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |r: usize| r.is_power_of_two();
        if !(pow2(self.r1) && pow2(self.r2)) {
            return Err(Error::Config(format!(
                "resolutions must be powers of two (r1={}, r2={})",
                self.r1, self.r2
            )));
        }
        if !(8 <= self.r1 && self.r1 <= self.r2 && self.r2 <= 256) {
            return Err(Error::Config(format!(
                "need 8 ≤ r1 ≤ r2 ≤ 256 (r1={}, r2={})",
                self.r1, self.r2
            )));
        }
        if self.r2 / self.r1 > 2 {
            return Err(Error::Config(format!(
                "r2/r1 must be 1 or 2 (r1={}, r2={})",
                self.r1, self.r2
            )));
        }
        if self.use_sa
            && !(self.sa_resolution.is_power_of_two()
                && self.sa_resolution >= 4
                && self.sa_resolution <= self.r1 / 2)
        {
            return Err(Error::Config(format!(
                "sa_resolution {} must be a power of two in [4, r1/2 = {}]",
                self.sa_resolution,
                self.r1 / 2
            )));
        }
        if self.nz == 0 || self.ngf == 0 || self.ndf == 0 {
            return Err(Error::Config("nz, ngf and ndf must be positive".into()));
        }
        if self.image_channels != 1 {
            return Err(Error::Config(
                "only single-channel images are supported".into(),
            ));
        }
        Ok(())
    }
}
