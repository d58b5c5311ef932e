use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 5;
pub const MAX_WIDTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvDim {
    None,
    Conv1d,
    Conv2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Two outputs followed by log-softmax, trained with NLL.
    #[default]
    TwoNode,
    /// One output followed by a sigmoid, trained with binary cross-entropy.
    OneNode,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::TwoNode => "two-node",
            Head::OneNode => "one-node",
        })
    }
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::TwoNode => 2,
            Head::OneNode => 1,
        }
    }
}

/// The convolutional part of an architecture: `fc`, `conv1d:D:W` or `conv2d:D:W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub conv_dim: ConvDim,
    pub depth: usize,
    pub width: usize,
}

impl Architecture {
    pub const FC: Architecture = Architecture {
        conv_dim: ConvDim::None,
        depth: 0,
        width: 0,
    };

    pub fn conv(conv_dim: ConvDim, depth: usize, width: usize) -> Result<Self> {
        let a = Architecture { conv_dim, depth, width };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        match self.conv_dim {
            ConvDim::None if self.depth != 0 => Err(Error::Config(
                "a fully-connected network has no convolutional layers".into(),
            )),
            ConvDim::None => Ok(()),
            _ if !(1..=MAX_DEPTH).contains(&self.depth) => Err(Error::Config(format!(
                "convolutional depth {} outside 1..={MAX_DEPTH}",
                self.depth
            ))),
            _ if !(1..=MAX_WIDTH).contains(&self.width) => Err(Error::Config(format!(
                "convolutional width {} outside 1..={MAX_WIDTH}",
                self.width
            ))),
            _ => Ok(()),
        }
    }

    /// Depth 1..=5 by width 1..=20 for `conv_dim`, then the FC baseline.
    pub fn grid(conv_dim: ConvDim) -> Vec<Architecture> {
        let mut out: Vec<Architecture> = (1..=MAX_DEPTH)
            .flat_map(|depth| (1..=MAX_WIDTH).map(move |width| Architecture { conv_dim, depth, width }))
            .collect();
        out.push(Architecture::FC);
        out
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.conv_dim {
            ConvDim::None => f.write_str("fc"),
            ConvDim::Conv1d => write!(f, "conv1d:{}:{}", self.depth, self.width),
            ConvDim::Conv2d => write!(f, "conv2d:{}:{}", self.depth, self.width),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "invalid architecture `{s}` (expected fc, conv1d:D:W or conv2d:D:W)"
            ))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["fc"] => Ok(Architecture::FC),
            [kind, depth, width] => {
                let conv_dim = match *kind {
                    "conv1d" => ConvDim::Conv1d,
                    "conv2d" => ConvDim::Conv2d,
                    _ => return Err(bad()),
                };
                let depth = depth.parse().map_err(|_| bad())?;
                let width = width.parse().map_err(|_| bad())?;
                Architecture::conv(conv_dim, depth, width)
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Architecture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `channels x height x width`; 1-D signals use `height = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: Architecture,
    pub head: Head,
    pub input: Shape,
    pub fc_hidden: Option<usize>,
}

impl NetworkSpec {
    pub fn new(arch: Architecture, head: Head, input: Shape) -> Self {
        NetworkSpec {
            arch,
            head,
            input,
            fc_hidden: None,
        }
    }

    pub fn conv_dim(&self) -> ConvDim {
        self.arch.conv_dim
    }

    pub fn depth(&self) -> usize {
        self.arch.depth
    }

    pub fn width(&self) -> usize {
        self.arch.width
    }

    /// Spatial shapes through the convolution stack: one entry per conv
    /// layer, then the pooled shape. Empty for FC-only networks.
    pub fn conv_trace(&self) -> Result<Vec<Shape>> {
        self.arch.validate()?;
        let input = self.input;
        if input.is_empty() {
            return Err(Error::Build {
                layer: "input".into(),
                message: format!("empty input shape {input}"),
            });
        }
        let (kh, pool_h) = match self.arch.conv_dim {
            ConvDim::None => return Ok(Vec::new()),
            ConvDim::Conv1d => {
                if input.height != 1 {
                    return Err(Error::Build {
                        layer: "input".into(),
                        message: format!("1-D convolution needs height 1, got {input}"),
                    });
                }
                (1, 1)
            }
            ConvDim::Conv2d => (3, 2),
        };
        let mut trace = Vec::with_capacity(self.depth() + 1);
        let mut cur = Shape::new(self.width(), input.height, input.width);
        trace.push(cur);
        for layer in 2..=self.depth() {
            let (h, w) = (cur.height as isize - (kh as isize - 1), cur.width as isize - 2);
            if h < 1 || w < 1 {
                return Err(Error::Build {
                    layer: format!("conv{layer}"),
                    message: format!("unpadded 3-wide kernel on {cur} leaves no output"),
                });
            }
            cur = Shape::new(self.width(), h as usize, w as usize);
            trace.push(cur);
        }
        let pooled = Shape::new(self.width(), cur.height / pool_h, cur.width / 2);
        if pooled.is_empty() {
            return Err(Error::Build {
                layer: "maxpool".into(),
                message: format!("2-wide pooling on {cur} leaves no output"),
            });
        }
        trace.push(pooled);
        Ok(trace)
    }

    /// Inputs of the final fully-connected layer stack.
    pub fn fc_inputs(&self) -> Result<usize> {
        Ok(self.conv_trace()?.last().map_or(self.input.len(), Shape::len))
    }
}
