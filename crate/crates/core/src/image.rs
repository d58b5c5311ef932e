//! Channel-major image tensors and PNM export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::binning::Rgb;
use crate::error::{Error, Result};

/// `channels x height x width` reals in [0, 1], channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn white(height: usize, width: usize) -> Self {
        Self::filled(3, height, width, 1.0)
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        Rgb([self.get(0, row, col), self.get(1, row, col), self.get(2, row, col)])
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, color: Rgb) {
        let plane = self.height * self.width;
        let off = row * self.width + col;
        for c in 0..3 {
            self.data[c * plane + off] = color.0[c];
        }
    }

    pub fn is_white(&self, row: usize, col: usize) -> bool {
        self.pixel(row, col) == Rgb::WHITE
    }

    /// Maps every value `v` to `1 - v`.
    pub fn invert(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 1.0 - *v);
    }

    /// Binary PNM: P6 for three channels, P5 for one. Values quantized by `round(v * 255)`.
    pub fn write_pnm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let magic = match self.channels {
            3 => "P6",
            1 => "P5",
            c => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("cannot encode {c}-channel image as PNM"),
                ))
            }
        };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let plane = self.height * self.width;
        let mut bytes = Vec::with_capacity(plane * self.channels);
        for p in 0..plane {
            for c in 0..self.channels {
                bytes.push(quantize(self.data[c * plane + p]));
            }
        }
        w.write_all(&bytes)?;
        w.flush()
    }

    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_pnm(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
