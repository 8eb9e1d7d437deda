use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How many of the last backbone stages carry an attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionLevel {
    L0,
    L1,
    L2,
    L3,
}

impl AttentionLevel {
    pub const ALL: [AttentionLevel; 4] = [Self::L0, Self::L1, Self::L2, Self::L3];

    pub fn stages(self) -> usize {
        match self {
            Self::L0 => 0,
            Self::L1 => 1,
            Self::L2 => 2,
            Self::L3 => 3,
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::L0 => "baseline",
            Self::L1 => "aaa-l1",
            Self::L2 => "aaa-l2",
            Self::L3 => "aaa-l3",
        }
    }
}

impl fmt::Display for AttentionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.stages())
    }
}

impl FromStr for AttentionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l0" | "0" | "baseline" => Ok(Self::L0),
            "l1" | "1" | "aaa-l1" => Ok(Self::L1),
            "l2" | "2" | "aaa-l2" => Ok(Self::L2),
            "l3" | "3" | "aaa-l3" => Ok(Self::L3),
            _ => Err(Error::InvalidArgument(format!("unknown attention level {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pooling {
    Pwap,
    Gem,
    Average,
    Max,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Self::Pwap, Self::Gem, Self::Average, Self::Max];
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pwap => "pwap",
            Self::Gem => "gem",
            Self::Average => "average",
            Self::Max => "max",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pwap" => Ok(Self::Pwap),
            "gem" => Ok(Self::Gem),
            "average" | "avg" | "mean" => Ok(Self::Average),
            "max" => Ok(Self::Max),
            _ => Err(Error::InvalidArgument(format!("unknown pooling {s:?}"))),
        }
    }
}

/// What an attended stage does with the anatomy masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    Aaa,
    /// Features multiplied by `lung OR heart`.
    Hardmask,
    /// Masks ignored.
    None,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aaa => "aaa",
            Self::Hardmask => "hardmask",
            Self::None => "none",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aaa" => Ok(Self::Aaa),
            "hardmask" | "hard-mask" => Ok(Self::Hardmask),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown fusion {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub mask_size: usize,
    pub attention_level: AttentionLevel,
    pub pooling: Pooling,
    /// Initial GeM exponent.
    pub gem_p: f64,
    /// Encoder hidden width is `round(C / r)`.
    pub r: f64,
    pub backbone_widths: Vec<usize>,
    pub n_classes: usize,
    pub fusion: Fusion,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 48,
            mask_size: 16,
            attention_level: AttentionLevel::L2,
            pooling: Pooling::Pwap,
            gem_p: 3.0,
            r: 0.5,
            backbone_widths: vec![8, 8, 12, 16],
            n_classes: 2,
            fusion: Fusion::Aaa,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 9] = [
        "image_size",
        "mask_size",
        "attention_level",
        "pooling",
        "gem_p",
        "r",
        "backbone_widths",
        "n_classes",
        "fusion",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size == 0 || self.mask_size == 0 {
            return bad("image_size and mask_size must be positive".into());
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return bad(format!("bad backbone widths {:?}", self.backbone_widths));
        }
        if self.attention_level.stages() > self.backbone_widths.len() {
            return bad(format!(
                "attention level {} needs {} stages, backbone has {}",
                self.attention_level,
                self.attention_level.stages(),
                self.backbone_widths.len()
            ));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("reduction ratio must be positive, got {}", self.r));
        }
        if !(self.gem_p > 0.0 && self.gem_p.is_finite()) {
            return bad(format!("gem_p must be positive, got {}", self.gem_p));
        }
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        Ok(())
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: expected an integer, got {v:?}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: expected a number, got {v:?}")))
        };
        match key {
            "image_size" => self.image_size = num(value)?,
            "mask_size" => self.mask_size = num(value)?,
            "attention_level" => self.attention_level = value.trim().parse()?,
            "pooling" => self.pooling = value.trim().parse()?,
            "gem_p" => self.gem_p = real(value)?,
            "r" => self.r = real(value)?,
            "backbone_widths" => {
                self.backbone_widths = value.split(',').map(num).collect::<Result<_>>()?
            }
            "n_classes" => self.n_classes = num(value)?,
            "fusion" => self.fusion = value.trim().parse()?,
            _ => return Err(Error::InvalidArgument(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs that [`ModelConfig::set`] parses back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let widths: Vec<String> = self.backbone_widths.iter().map(|w| w.to_string()).collect();
        vec![
            ("image_size", self.image_size.to_string()),
            ("mask_size", self.mask_size.to_string()),
            ("attention_level", self.attention_level.to_string()),
            ("pooling", self.pooling.to_string()),
            ("gem_p", format!("{:?}", self.gem_p)),
            ("r", format!("{:?}", self.r)),
            ("backbone_widths", widths.join(",")),
            ("n_classes", self.n_classes.to_string()),
            ("fusion", self.fusion.to_string()),
        ]
    }
}
