//! Abundance-to-color binning.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeatureKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb(pub [f64; 3]);

impl Rgb {
    pub const WHITE: Rgb = Rgb([1.0, 1.0, 1.0]);
    pub const BLACK: Rgb = Rgb([0.0, 0.0, 0.0]);

    pub fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let mut c = [0.0; 3];
        for (k, out) in c.iter_mut().enumerate() {
            *out = self.0[k] + (other.0[k] - self.0[k]) * t;
        }
        Rgb(c)
    }
}

/// Anchors of the default heat gradient at positions 0, 0.25, 0.5, 0.75, 1.
pub const GRADIENT_ANCHORS: [Rgb; 5] = [
    Rgb([0.0, 0.0, 0.55]),
    Rgb([0.0, 0.45, 1.0]),
    Rgb([0.0, 1.0, 0.65]),
    Rgb([1.0, 0.85, 0.0]),
    Rgb([0.8, 0.0, 0.0]),
];

/// Samples the default gradient at `t` in [0, 1].
pub fn gradient_at(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let segments = (GRADIENT_ANCHORS.len() - 1) as f64;
    let pos = t * segments;
    let i = (pos.floor() as usize).min(GRADIENT_ANCHORS.len() - 2);
    GRADIENT_ANCHORS[i].lerp(GRADIENT_ANCHORS[i + 1], pos - i as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    scale: Scale,
    lo: f64,
    hi: f64,
    palette: Vec<Rgb>,
    /// Interior break-points (k - 1 of them) fitted from data; `None` means
    /// equal-width bins on the scale.
    breaks: Option<Vec<f64>>,
}

pub const DEFAULT_LOG_FLOOR: f64 = 1e-7;
pub const DEFAULT_BINS: usize = 10;

impl BinningScheme {
    pub fn new(scale: Scale, lo: f64, hi: f64, palette: Vec<Rgb>) -> Result<Self> {
        let k = palette.len();
        if k < 2 {
            return Err(Error::Config(format!("bin count must be at least 2, got {k}")));
        }
        let bounds_ok = match scale {
            Scale::Log => 0.0 < lo && lo < hi && hi <= 1.0,
            Scale::Linear => 0.0 <= lo && lo < hi,
        };
        if !bounds_ok || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid {scale:?} bounds lo={lo}, hi={hi}")));
        }
        for (i, c) in palette.iter().enumerate() {
            if c.0.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("palette color {i} outside [0, 1]")));
            }
            if *c == Rgb::WHITE {
                return Err(Error::Config(format!("palette color {i} is white")));
            }
            if palette[..i].contains(c) {
                return Err(Error::Config(format!("palette color {i} is repeated")));
            }
        }
        Ok(BinningScheme {
            scale,
            lo,
            hi,
            palette,
            breaks: None,
        })
    }

    /// Log scale on [1e-7, 1] with `k` colors from the default gradient.
    pub fn default_log(k: usize) -> Result<Self> {
        Self::with_gradient(Scale::Log, k, DEFAULT_LOG_FLOOR, 1.0)
    }

    pub fn with_gradient(scale: Scale, k: usize, lo: f64, hi: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("bin count must be at least 2, got {k}")));
        }
        let palette = (0..k).map(|i| gradient_at(i as f64 / (k - 1) as f64)).collect();
        Self::new(scale, lo, hi, palette)
    }

    /// Replaces equal-width bins by quantile break-points of the positive
    /// values in `training` that fall inside `[lo, hi]`.
    pub fn fit_quantiles(mut self, training: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut vals: Vec<f64> = training
            .into_iter()
            .filter(|&v| v > 0.0 && v >= self.lo)
            .map(|v| v.min(self.hi))
            .map(|v| self.transform(v))
            .collect();
        if vals.is_empty() {
            return Err(Error::Degenerate(
                "no positive training abundances above the binning floor".into(),
            ));
        }
        vals.sort_by(f64::total_cmp);
        let k = self.k();
        let breaks = (1..k)
            .map(|i| {
                let q = i as f64 / k as f64;
                let pos = q * (vals.len() - 1) as f64;
                let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
                vals[a] + (vals[b] - vals[a]) * (pos - a as f64)
            })
            .collect();
        self.breaks = Some(breaks);
        Ok(self)
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn k(&self) -> usize {
        self.palette.len()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn palette(&self) -> &[Rgb] {
        &self.palette
    }

    pub fn breaks(&self) -> Option<&[f64]> {
        self.breaks.as_deref()
    }

    fn transform(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Log => v.log10(),
            Scale::Linear => v,
        }
    }

    /// Bin of abundance `v`, or `None` when it is absent (zero or below `lo`).
    pub fn bin_index(&self, v: f64) -> Option<usize> {
        if v <= 0.0 || v < self.lo {
            return None;
        }
        let k = self.k();
        if v >= self.hi {
            return Some(k - 1);
        }
        let x = self.transform(v);
        let idx = match &self.breaks {
            Some(b) => b.partition_point(|&edge| edge <= x),
            None => {
                let (lo, hi) = (self.transform(self.lo), self.transform(self.hi));
                (k as f64 * (x - lo) / (hi - lo)).floor() as usize
            }
        };
        Some(idx.min(k - 1))
    }

    pub fn color_of(&self, v: f64, kind: FeatureKind) -> Rgb {
        match kind {
            FeatureKind::Presence => {
                if v > 0.0 {
                    Rgb::BLACK
                } else {
                    Rgb::WHITE
                }
            }
            FeatureKind::Abundance => match self.bin_index(v) {
                Some(i) => self.palette[i],
                None => Rgb::WHITE,
            },
        }
    }

    /// One line per color: `index<TAB>r<TAB>g<TAB>b`.
    pub fn write_palette<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, c) in self.palette.iter().enumerate() {
            writeln!(w, "{i}\t{}\t{}\t{}", c.0[0], c.0[1], c.0[2])?;
        }
        Ok(())
    }
}

/// User-facing binning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub scale: Scale,
    pub k: usize,
    pub lo: f64,
    pub hi: f64,
    /// Fit break-points to training-split quantiles.
    pub quantiles: bool,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            scale: Scale::Log,
            k: DEFAULT_BINS,
            lo: DEFAULT_LOG_FLOOR,
            hi: 1.0,
            quantiles: false,
        }
    }
}

impl BinningConfig {
    /// The data-independent part of the scheme.
    pub fn base_scheme(&self) -> Result<BinningScheme> {
        BinningScheme::with_gradient(self.scale, self.k, self.lo, self.hi)
    }

    /// Builds the scheme for one training split; only training values may be passed.
    pub fn fit(&self, training: impl IntoIterator<Item = f64>) -> Result<BinningScheme> {
        let base = self.base_scheme()?;
        if self.quantiles {
            base.fit_quantiles(training)
        } else {
            Ok(base)
        }
    }
}
