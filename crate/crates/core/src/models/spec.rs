use std::fmt;
use std::str::FromStr;

use crate::bam::BamConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockType {
    /// Two 3x3 convolutions with an identity or projection shortcut.
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand (inner width = channels / 4), with the
    /// stage stride on the first 1x1 convolution.
    Bottleneck,
    /// Two 3x3 convolutions without a shortcut.
    Plain,
}

impl FromStr for BlockType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(BlockType::Basic),
            "bottleneck" | "bottleneck_resblock" => Ok(BlockType::Bottleneck),
            "plain" => Ok(BlockType::Plain),
            other => Err(Error::Config(format!("unknown block type `{other}`"))),
        }
    }
}

/// Where attention modules (or the extra-block control) are inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Attention {
    #[default]
    None,
    /// One module after the last block of every stage but the final one,
    /// i.e. right before each downsampling transition.
    Bottleneck,
    /// One module inside every block, on the residual branch.
    PerBlock,
    /// An additional block of the stage's own type at each bottleneck.
    ExtraBlock,
}

impl fmt::Display for Attention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attention::None => "off",
            Attention::Bottleneck => "bottleneck",
            Attention::PerBlock => "per-block",
            Attention::ExtraBlock => "convblock",
        })
    }
}

impl FromStr for Attention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Attention::None),
            "bottleneck" | "on" => Ok(Attention::Bottleneck),
            "per-block" | "bam-c" => Ok(Attention::PerBlock),
            "convblock" | "extra-block" => Ok(Attention::ExtraBlock),
            other => Err(Error::Config(format!("unknown attention placement `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 3x3 stride-2 max pooling after the stem convolution.
    pub max_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub block: BlockType,
    pub blocks: usize,
    pub channels: usize,
    /// Stride of the stage's first block.
    pub stride: usize,
}

/// Declarative backbone description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub input_channels: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub attention: Attention,
    pub bam: BamConfig,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Names accepted by [`ModelSpec::named`].
    pub const LIBRARY: [&'static str; 5] = ["tiny", "small", "resnet18-cifar", "resnet50-cifar", "resnet50-imagenet"];

    /// A spec from the bundled library, without attention.
    pub fn named(name: &str) -> Result<Self> {
        let cifar_stem = |channels| StemSpec {
            channels,
            kernel: 3,
            stride: 1,
            max_pool: false,
        };
        let stages = |block, plan: &[(usize, usize)]| -> Vec<StageSpec> {
            plan.iter()
                .enumerate()
                .map(|(i, &(channels, blocks))| StageSpec {
                    block,
                    blocks,
                    channels,
                    stride: if i == 0 { 1 } else { 2 },
                })
                .collect()
        };
        let resnet50 = [(256, 3), (512, 4), (1024, 6), (2048, 3)];
        let (stem, stages, num_classes) = match name {
            "tiny" => (cifar_stem(16), stages(BlockType::Basic, &[(16, 1), (32, 1), (64, 1)]), 10),
            "small" => (
                StemSpec {
                    channels: 32,
                    kernel: 3,
                    stride: 2,
                    max_pool: false,
                },
                stages(BlockType::Basic, &[(32, 1), (64, 1), (128, 1)]),
                10,
            ),
            "resnet18-cifar" => (
                cifar_stem(64),
                stages(BlockType::Basic, &[(64, 2), (128, 2), (256, 2), (512, 2)]),
                100,
            ),
            "resnet50-cifar" => (cifar_stem(64), stages(BlockType::Bottleneck, &resnet50), 100),
            "resnet50-imagenet" => (
                StemSpec {
                    channels: 64,
                    kernel: 7,
                    stride: 2,
                    max_pool: true,
                },
                stages(BlockType::Bottleneck, &resnet50),
                1000,
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown model `{other}`; known models: {}",
                    Self::LIBRARY.join(", ")
                )))
            }
        };
        Ok(ModelSpec {
            name: name.to_string(),
            input_channels: 3,
            stem,
            stages,
            attention: Attention::None,
            bam: BamConfig::default(),
            num_classes,
        })
    }

    pub fn with_attention(mut self, attention: Attention) -> Self {
        self.attention = attention;
        self
    }

    pub fn with_bam(mut self, bam: BamConfig) -> Self {
        self.bam = bam;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    /// Channel widths at which bottleneck modules attach.
    pub fn bottleneck_channels(&self) -> Vec<usize> {
        let n = self.stages.len();
        self.stages[..n.saturating_sub(1)].iter().map(|s| s.channels).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.blocks == 0 || s.channels == 0 || s.stride == 0) {
            return Err(Error::Config(format!("model `{}` has an empty stage", self.name)));
        }
        if self.num_classes == 0 || self.stem.channels == 0 || self.stem.kernel == 0 || self.stem.stride == 0 {
            return Err(Error::Config(format!("model `{}` has a zero-sized stem or head", self.name)));
        }
        for stage in &self.stages {
            if stage.block == BlockType::Bottleneck && stage.channels % 4 != 0 {
                return Err(Error::Config(format!(
                    "bottleneck stage width {} is not divisible by 4",
                    stage.channels
                )));
            }
        }
        let attached: Vec<usize> = match self.attention {
            Attention::None | Attention::ExtraBlock => Vec::new(),
            Attention::Bottleneck => self.bottleneck_channels(),
            Attention::PerBlock => self.stages.iter().map(|s| s.channels).collect(),
        };
        for c in attached {
            self.bam.validate(c)?;
        }
        Ok(())
    }
}
