use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BlockKind;
use crate::phc::AlgebraInit;

/// Declarative description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum ModelConfig {
    Phresnet(PhResNetConfig),
    Phybonet(PhyboNetConfig),
    Physenet(PhyseNetConfig),
    Phunet(PhUNetConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhResNetConfig {
    pub n: usize,
    /// Defaults to `n`: one channel per stacked view.
    pub in_channels: Option<usize>,
    pub blocks: Vec<usize>,
    pub width: usize,
    pub block: BlockKind,
    pub refiners: usize,
    pub heads: usize,
    pub algebra: AlgebraInit,
}

impl Default for PhResNetConfig {
    fn default() -> Self {
        PhResNetConfig {
            n: 2,
            in_channels: None,
            blocks: vec![2, 2, 2, 2],
            width: 64,
            block: BlockKind::Basic,
            refiners: 4,
            heads: 1,
            algebra: AlgebraInit::Fixed,
        }
    }
}

impl PhResNetConfig {
    pub fn in_channels(&self) -> usize {
        self.in_channels.unwrap_or(self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhyboNetConfig {
    pub encoder_n: usize,
    pub bottleneck_n: usize,
    /// Views per side.
    pub in_channels: usize,
    /// Block counts of all four stages; the encoders get the first two,
    /// the bottleneck the last two.
    pub blocks: Vec<usize>,
    pub width: usize,
    pub refiners: usize,
    pub algebra: AlgebraInit,
}

impl Default for PhyboNetConfig {
    fn default() -> Self {
        PhyboNetConfig {
            encoder_n: 2,
            bottleneck_n: 4,
            in_channels: 2,
            blocks: vec![2, 2, 2, 2],
            width: 64,
            refiners: 4,
            algebra: AlgebraInit::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhyseNetConfig {
    pub n: usize,
    pub in_channels: usize,
    pub blocks: Vec<usize>,
    pub width: usize,
    pub refiners: usize,
    pub algebra: AlgebraInit,
}

impl Default for PhyseNetConfig {
    fn default() -> Self {
        PhyseNetConfig {
            n: 2,
            in_channels: 2,
            blocks: vec![2, 2, 2, 2],
            width: 64,
            refiners: 4,
            algebra: AlgebraInit::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhUNetConfig {
    pub n: usize,
    pub in_channels: Option<usize>,
    pub width: usize,
    /// Number of 2×2 poolings; inputs must be divisible by `2^depth`.
    pub depth: usize,
    pub algebra: AlgebraInit,
}

impl Default for PhUNetConfig {
    fn default() -> Self {
        PhUNetConfig {
            n: 2,
            in_channels: None,
            width: 8,
            depth: 3,
            algebra: AlgebraInit::Fixed,
        }
    }
}

impl PhUNetConfig {
    pub fn in_channels(&self) -> usize {
        self.in_channels.unwrap_or(self.n)
    }
}

impl ModelConfig {
    pub fn arch(&self) -> &'static str {
        match self {
            ModelConfig::Phresnet(_) => "phresnet",
            ModelConfig::Phybonet(_) => "phybonet",
            ModelConfig::Physenet(_) => "physenet",
            ModelConfig::Phunet(_) => "phunet",
        }
    }

    /// Number of input tensors the forward pass takes.
    pub fn inputs(&self) -> usize {
        match self {
            ModelConfig::Phybonet(_) | ModelConfig::Physenet(_) => 2,
            _ => 1,
        }
    }

    /// The same architecture with every hypercomplex order set to 1.
    pub fn real_valued(&self) -> ModelConfig {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Phresnet(r) => {
                r.in_channels = Some(r.in_channels());
                r.n = 1;
            }
            ModelConfig::Phybonet(b) => {
                b.encoder_n = 1;
                b.bottleneck_n = 1;
            }
            ModelConfig::Physenet(s) => s.n = 1,
            ModelConfig::Phunet(u) => {
                u.in_channels = Some(u.in_channels());
                u.n = 1;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: usize, what: &str| -> Result<()> {
            if v == 0 {
                Err(Error::config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        let div = |v: usize, n: usize, what: &str| -> Result<()> {
            if v % n != 0 {
                Err(Error::config(format!("{what} {v} is not divisible by n={n}")))
            } else {
                Ok(())
            }
        };
        match self {
            ModelConfig::Phresnet(r) => {
                pos(r.n, "n")?;
                pos(r.width, "width")?;
                pos(r.heads, "heads")?;
                div(r.width, r.n, "width")?;
                div(r.in_channels(), r.n, "input channels")?;
                if r.blocks.is_empty() {
                    return Err(Error::config("blocks must list at least one stage"));
                }
            }
            ModelConfig::Phybonet(b) => {
                pos(b.encoder_n, "encoder-n")?;
                pos(b.bottleneck_n, "bottleneck-n")?;
                pos(b.width, "width")?;
                div(b.width, b.encoder_n, "width")?;
                div(b.in_channels, b.encoder_n, "input channels")?;
                div(4 * b.width, b.bottleneck_n, "bottleneck input channels")?;
                if b.blocks.len() != 4 {
                    return Err(Error::config("phybonet needs exactly four stage block counts"));
                }
            }
            ModelConfig::Physenet(s) => {
                pos(s.n, "n")?;
                pos(s.width, "width")?;
                div(s.width, s.n, "width")?;
                div(s.in_channels, s.n, "input channels")?;
                if s.blocks.is_empty() {
                    return Err(Error::config("blocks must list at least one stage"));
                }
            }
            ModelConfig::Phunet(u) => {
                pos(u.n, "n")?;
                pos(u.width, "width")?;
                div(u.width, u.n, "width")?;
                div(u.in_channels(), u.n, "input channels")?;
            }
        }
        Ok(())
    }
}
