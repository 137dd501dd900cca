//! Per-pixel medium labels stored as 8-bit grayscale PNG.
//!
//! Canonical values: 0 = land, 255 = water, 128 = ignore. Any other value is
//! binarized against a threshold on `[0, 1]`.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{IoContext, Result};

pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MediumLabel {
    Land,
    Water,
    Ignore,
}

impl MediumLabel {
    pub fn from_byte(v: u8, threshold: f64) -> Self {
        match v {
            0 => Self::Land,
            255 => Self::Water,
            128 => Self::Ignore,
            _ if v as f64 / 255.0 >= threshold => Self::Water,
            _ => Self::Land,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Self::Land => 0,
            Self::Water => 255,
            Self::Ignore => 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediumMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<MediumLabel>,
}

impl MediumMask {
    pub fn filled(width: u32, height: u32, label: MediumLabel) -> Self {
        Self {
            width,
            height,
            labels: vec![label; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> MediumLabel {
        self.labels[(row * self.width + col) as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, label: MediumLabel) {
        self.labels[(row * self.width + col) as usize] = label;
    }

    pub fn count(&self, label: MediumLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn read_png(path: &Path, threshold: f64) -> Result<Self> {
        let img = image::open(path).with_path(path)?.into_luma8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            labels: img
                .pixels()
                .map(|p| MediumLabel::from_byte(p.0[0], threshold))
                .collect(),
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width, self.height, |c, r| Luma([self.get(c, r).to_byte()]));
        img.save(path).with_path(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_and_thresholded_values() {
        assert_eq!(MediumLabel::from_byte(0, 0.5), MediumLabel::Land);
        assert_eq!(MediumLabel::from_byte(255, 0.5), MediumLabel::Water);
        assert_eq!(MediumLabel::from_byte(128, 0.5), MediumLabel::Ignore);
        assert_eq!(MediumLabel::from_byte(200, 0.5), MediumLabel::Water);
        assert_eq!(MediumLabel::from_byte(100, 0.5), MediumLabel::Land);
        assert_eq!(MediumLabel::from_byte(100, 0.3), MediumLabel::Water);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MediumMask::filled(5, 3, MediumLabel::Land);
        m.set(1, 1, MediumLabel::Water);
        m.set(4, 2, MediumLabel::Ignore);
        let p = dir.path().join("m.png");
        m.write_png(&p).unwrap();
        assert_eq!(MediumMask::read_png(&p, 0.5).unwrap(), m);
    }
}
