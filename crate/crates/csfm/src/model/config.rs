//! Network hyperparameters and their validity rules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which residual block variant the network is built from.
///
/// `Base` is the plain two-conv residual block; `Channel` adds channel
/// attention only, `Spatial` spatial attention only, and `Fused` applies
/// both and merges them with a 1x1 convolution before the skip connection.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum BlockVariant {
    Base,
    Channel,
    Spatial,
    Fused,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [
        BlockVariant::Base,
        BlockVariant::Channel,
        BlockVariant::Spatial,
        BlockVariant::Fused,
    ];

    /// Stable identifier used in configs and checkpoints.
    pub fn key(self) -> &'static str {
        match self {
            BlockVariant::Base => "br",
            BlockVariant::Channel => "car",
            BlockVariant::Spatial => "sar",
            BlockVariant::Fused => "csar",
        }
    }

    /// Numeric code for the checkpoint header.
    pub fn code(self) -> u32 {
        match self {
            BlockVariant::Base => 0,
            BlockVariant::Channel => 1,
            BlockVariant::Spatial => 2,
            BlockVariant::Fused => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown block variant code {code}")))
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.key() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown block variant {s:?} (expected br, car, sar, or csar)"
                ))
            })
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Architecture hyperparameters of the super-resolution network.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CsfmConfig {
    /// Upscaling factor; 2, 3, or 4.
    pub scale: usize,
    /// Feature width of every residual block.
    pub channels: usize,
    /// Number of memory modules chained in the feature-transform stage.
    pub modules: usize,
    /// Residual blocks per memory module.
    pub blocks: usize,
    /// Channel-attention bottleneck: squeeze width is `channels / reduction`.
    pub reduction: usize,
    /// Spatial-attention expansion: hidden width is `channels * expansion`.
    pub expansion: usize,
    /// Residual block flavor used throughout.
    pub variant: BlockVariant,
}

impl Default for CsfmConfig {
    /// The reference configuration: x2 upscaling, 64 channels, 8 modules of
    /// 16 fused-attention blocks, reduction 16, expansion 2.
    fn default() -> Self {
        CsfmConfig {
            scale: 2,
            channels: 64,
            modules: 8,
            blocks: 16,
            reduction: 16,
            expansion: 2,
            variant: BlockVariant::Fused,
        }
    }
}

impl CsfmConfig {
    /// Checks every structural invariant, returning a message naming the
    /// first violated one.
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale must be 2, 3, or 4, got {}",
                self.scale
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.modules == 0 {
            return Err(Error::Config("modules must be >= 1".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be >= 1".into()));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "channels ({}) must be divisible by reduction ({})",
                self.channels, self.reduction
            )));
        }
        if self.expansion == 0 {
            return Err(Error::Config("expansion must be >= 1".into()));
        }
        Ok(())
    }

    /// Squeeze width of the channel-attention bottleneck.
    pub fn squeezed(&self) -> usize {
        self.channels / self.reduction
    }

    /// Hidden width of the spatial-attention unit.
    pub fn expanded(&self) -> usize {
        self.channels * self.expansion
    }

    /// Pixel-shuffle stages of the upsampler as (channel multiplier, shuffle
    /// factor) pairs: one stage for x2/x3, two cascaded x2 stages for x4.
    pub fn upsample_stages(&self) -> Vec<(usize, usize)> {
        match self.scale {
            2 => vec![(4, 2)],
            3 => vec![(9, 3)],
            4 => vec![(4, 2), (4, 2)],
            _ => unreachable!("validate() rejects other scales"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(CsfmConfig::default().validate().is_ok());
    }

    #[test]
    fn invariants_reject_bad_values() {
        let base = CsfmConfig::default();
        let cases = [
            CsfmConfig { scale: 5, ..base },
            CsfmConfig { scale: 1, ..base },
            CsfmConfig { channels: 0, ..base },
            CsfmConfig { modules: 0, ..base },
            CsfmConfig { blocks: 0, ..base },
            CsfmConfig {
                channels: 60,
                reduction: 16,
                ..base
            },
            CsfmConfig { reduction: 0, ..base },
            CsfmConfig { expansion: 0, ..base },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "should reject {c:?}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in BlockVariant::ALL {
            assert_eq!(v.key().parse::<BlockVariant>().unwrap(), v);
            assert_eq!(BlockVariant::from_code(v.code()).unwrap(), v);
        }
        assert!("dense".parse::<BlockVariant>().is_err());
        assert!(BlockVariant::from_code(9).is_err());
        assert_eq!("CSAR".parse::<BlockVariant>().unwrap(), BlockVariant::Fused);
    }

    #[test]
    fn upsample_stages_cover_all_scales() {
        let mk = |scale| CsfmConfig {
            scale,
            ..CsfmConfig::default()
        };
        assert_eq!(mk(2).upsample_stages(), vec![(4, 2)]);
        assert_eq!(mk(3).upsample_stages(), vec![(9, 3)]);
        assert_eq!(mk(4).upsample_stages(), vec![(4, 2), (4, 2)]);
    }
}
