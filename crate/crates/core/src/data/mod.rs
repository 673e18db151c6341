//! Samples, synthetic generation, augmentation, and on-disk formats.

mod augment;
mod galt;
mod manifest;
mod raster;
mod synth;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentParams};
pub use galt::{decode_galt, encode_galt, load_galt, save_galt};
pub use manifest::{load_manifest, load_samples, write_manifest, ManifestEntry};
pub use raster::{
    decode_raster, encode_pgm, encode_ppm, load_label_raster, load_raster, save_pgm, Raster,
};
pub use synth::{synth_generate, SynthConfig};

/// Input modality of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Disp,
    TDisp,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Disp, Modality::TDisp];

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Disp | Modality::TDisp => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Disp => "disp",
            Modality::TDisp => "tdisp",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "disp" => Ok(Modality::Disp),
            "tdisp" => Ok(Modality::TDisp),
            other => Err(Error::Value(format!("unknown modality `{other}` (rgb, disp, tdisp)"))),
        }
    }
}

/// Binary per-pixel labels; 1 marks a pothole.
#[derive(Clone, PartialEq, Eq)]
pub struct ClassMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl fmt::Debug for ClassMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClassMask({}x{}, {} positive)", self.height, self.width, self.count_positive())
    }
}

impl ClassMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "{}-value mask for {height}x{width}",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Value(format!("mask value {bad} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// One image with its label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub modality: Modality,
    /// H×W×C, C = 1 for disparity modalities, 3 for rgb.
    pub image: Tensor<f32>,
    pub label: ClassMask,
}

impl SegSample {
    pub fn new(id: impl Into<String>, modality: Modality, image: Tensor<f32>, label: ClassMask) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != label.height() || s[1] != label.width() {
            return Err(Error::Shape(format!(
                "image {s:?} does not match a {}x{} label",
                label.height(),
                label.width()
            )));
        }
        Ok(Self { id: id.into(), modality, image, label })
    }

    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rejects_non_binary() {
        assert!(ClassMask::new(1, 2, vec![0, 2]).is_err());
        assert!(ClassMask::new(2, 2, vec![0, 1]).is_err());
        assert_eq!(ClassMask::new(1, 3, vec![1, 0, 1]).unwrap().count_positive(), 2);
    }

    #[test]
    fn modality_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert!("depth".parse::<Modality>().is_err());
    }

    #[test]
    fn sample_shapes_must_agree() {
        let img = Tensor::zeros(&[4, 4, 1]);
        assert!(SegSample::new("a", Modality::TDisp, img.clone(), ClassMask::zeros(4, 4)).is_ok());
        assert!(SegSample::new("a", Modality::TDisp, img, ClassMask::zeros(4, 5)).is_err());
    }
}
