//! Row-major "fill-up" images: feature `i` of a phylogenetically ordered row
//! occupies cell `(i / side, i % side)` of the smallest square grid holding
//! all features.

use serde::{Deserialize, Serialize};

use crate::binning::{BinningScheme, Rgb};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::ingest::FeatureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    side: usize,
    d: usize,
}

impl GridLayout {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("fill-up layout needs at least one feature".into()));
        }
        let mut side = (d as f64).sqrt().ceil() as usize;
        while side * side < d {
            side += 1;
        }
        while side > 1 && (side - 1) * (side - 1) >= d {
            side -= 1;
        }
        Ok(GridLayout { side, d })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn empty_cells(&self) -> usize {
        self.side * self.side - self.d
    }

    pub fn cell_of(&self, feature: usize) -> (usize, usize) {
        debug_assert!(feature < self.d);
        (feature / self.side, feature % self.side)
    }

    /// Feature occupying `(row, col)`, if any.
    pub fn feature_at(&self, row: usize, col: usize) -> Option<usize> {
        let i = row * self.side + col;
        (row < self.side && col < self.side && i < self.d).then_some(i)
    }
}

pub fn layout_for(d: usize) -> Result<GridLayout> {
    GridLayout::new(d)
}

/// How the fill-up grid reaches the target canvas size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Grid at the top-left of a white canvas, one pixel per feature.
    #[default]
    Pad,
    /// Nearest-neighbour upscaling of the grid to the whole canvas.
    Scale,
}

/// Numeric value of empty space seen by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// White is 1.0 in every channel.
    #[default]
    White,
    /// All channels inverted, so empty space is 0.0.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillupOptions {
    pub target: usize,
    pub placement: Placement,
    pub background: Background,
}

impl Default for FillupOptions {
    fn default() -> Self {
        FillupOptions {
            target: 32,
            placement: Placement::Pad,
            background: Background::White,
        }
    }
}

/// Fill-up image with default placement and background.
pub fn render_fillup(sample: &[f64], scheme: &BinningScheme, kind: FeatureKind, target: usize) -> Result<ImageTensor> {
    let opts = FillupOptions {
        target,
        ..Default::default()
    };
    render_fillup_with(sample, scheme, kind, &opts)
}

pub fn render_fillup_with(
    sample: &[f64],
    scheme: &BinningScheme,
    kind: FeatureKind,
    opts: &FillupOptions,
) -> Result<ImageTensor> {
    let layout = GridLayout::new(sample.len())?;
    let side = layout.side();
    let target = opts.target;
    if target < side {
        return Err(Error::Config(format!(
            "fill-up target {target} is smaller than the {side}x{side} grid"
        )));
    }
    let mut img = ImageTensor::white(target, target);
    match opts.placement {
        Placement::Pad => {
            for (i, &v) in sample.iter().enumerate() {
                let (r, c) = layout.cell_of(i);
                img.set_pixel(r, c, scheme.color_of(v, kind));
            }
        }
        Placement::Scale => {
            for r in 0..target {
                for c in 0..target {
                    let color = layout
                        .feature_at(r * side / target, c * side / target)
                        .map_or(Rgb::WHITE, |i| scheme.color_of(sample[i], kind));
                    img.set_pixel(r, c, color);
                }
            }
        }
    }
    if opts.background == Background::Zero {
        img.invert();
    }
    Ok(img)
}

/// The raw 1-D control signal: the abundances themselves, one channel.
pub fn render_raw_1d(sample: &[f64]) -> Vec<f64> {
    sample.to_vec()
}
