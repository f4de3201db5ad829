use serde::{Deserialize, Serialize};
use tensornet::{ConvSpec, OptimizerConfig};

use crate::error::{Error, Result};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub batch_norm: bool,
}

const fn conv(out_channels: usize, k: usize, s: usize, p: usize, batch_norm: bool) -> ConvLayerSpec {
    ConvLayerSpec {
        out_channels,
        kernel: (k, k),
        stride: (s, s),
        padding: (p, p),
        batch_norm,
    }
}

/// Convolutional encoder over `[D, a, c]` NLI tensors, followed by quadrant
/// pooling. ReLU follows every convolution except the last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    pub layers: Vec<ConvLayerSpec>,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        Self::with_channels(768, [768, 512, 512, 256, 256])
    }
}

impl ConvEncoderConfig {
    /// The default kernel, stride and padding schedule with custom widths.
    pub fn with_channels(in_channels: usize, c: [usize; 5]) -> Self {
        Self {
            in_channels,
            layers: vec![
                conv(c[0], 1, 1, 1, true),
                conv(c[1], 3, 1, 2, true),
                conv(c[2], 3, 2, 1, false),
                conv(c[3], 2, 1, 1, true),
                conv(c[4], 3, 1, 2, false),
            ],
        }
    }

    pub fn scaled_down() -> Self {
        Self::with_channels(8, [8, 6, 6, 4, 4])
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut in_channels = self.in_channels;
        self.layers
            .iter()
            .map(|l| {
                let spec = ConvSpec {
                    in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    stride: l.stride,
                    padding: l.padding,
                };
                in_channels = l.out_channels;
                spec
            })
            .collect()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.out_channels)
    }

    /// Width of the pooled embedding, four quadrants per output channel.
    pub fn pooled_dim(&self) -> usize {
        4 * self.out_channels()
    }

    /// Spatial size before the first layer and after each layer.
    pub fn spatial_trace(&self, a: usize, c: usize) -> Result<Vec<(usize, usize)>> {
        let mut trace = vec![(a, c)];
        for spec in self.conv_specs() {
            let (h, w) = *trace.last().expect("non-empty");
            trace.push(spec.output_size(h, w)?);
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for spec in self.conv_specs() {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Layer widths of the two classifier heads, input first, output `1` last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub filter: Vec<usize>,
    pub pair: Vec<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            filter: vec![3824, 2048, 1024, 512, 512, 256, 64, 1],
            pair: vec![7648, 3824, 2048, 1024, 512, 512, 256, 64, 1],
        }
    }
}

impl HeadConfig {
    pub fn scaled_down() -> Self {
        Self {
            filter: vec![48, 24, 16, 8, 8, 8, 4, 1],
            pair: vec![96, 48, 24, 16, 8, 8, 8, 4, 1],
        }
    }
}

/// Dimensions of the joint model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointConfig {
    pub encoder: ConvEncoderConfig,
    pub heads: HeadConfig,
    /// RQE embedding width `D`.
    pub rqe_dim: usize,
    /// Metadata width `M`.
    pub meta_dim: usize,
    /// Metadata TF-IDF width.
    pub vocab_size: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            encoder: ConvEncoderConfig::default(),
            heads: HeadConfig::default(),
            rqe_dim: 768,
            meta_dim: 2032,
            vocab_size: 2000,
        }
    }
}

impl JointConfig {
    pub fn scaled_down() -> Self {
        Self {
            encoder: ConvEncoderConfig::scaled_down(),
            heads: HeadConfig::scaled_down(),
            rqe_dim: 8,
            meta_dim: 24,
            vocab_size: 16,
        }
    }

    pub fn joint_dim(&self) -> usize {
        self.encoder.pooled_dim() + self.rqe_dim + self.meta_dim
    }

    /// Checks that the joint embedding feeds both heads exactly.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let joint = self.joint_dim();
        let check = |name: &str, widths: &[usize], input: usize| -> Result<()> {
            if widths.len() < 2 || widths.contains(&0) {
                return Err(Error::Config(format!("{name} head needs at least two positive widths")));
            }
            if widths[0] != input {
                return Err(Error::Dimension(format!(
                    "{name} head input is {} but the joint input is {input}",
                    widths[0]
                )));
            }
            if *widths.last().expect("non-empty") != 1 {
                return Err(Error::Config(format!("{name} head must end in a single output")));
            }
            Ok(())
        };
        check("filter", &self.heads.filter, joint)?;
        check("pair", &self.heads.pair, 2 * joint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the pairwise loss.
    pub alpha: f64,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub augmentation: bool,
    pub retrieval: RetrievalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            epochs: 20,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            augmentation: true,
            retrieval: RetrievalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        self.retrieval.validate()
    }
}
