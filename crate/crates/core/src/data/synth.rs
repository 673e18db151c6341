//! Synthetic pothole scenes in three modalities.
//!
//! Every scene holds zero to three elliptical depressions; the label is the union of
//! their interiors. The modalities differ only in how the road surface is
//! rendered:
//!
//! * `tdisp`: near-constant background, depressions lower the value;
//! * `disp`: background rises linearly down the rows, shallower depressions;
//! * `rgb`: textured three-channel asphalt, darkened potholes, plus one or two
//!   unlabeled stains that are darkened the same way.
//!
//! Additive Gaussian noise (σ = `noise` × dynamic range, range = 1) is applied
//! last and values are clamped to [0, 1].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassMask, Modality, SegSample};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub modality: Modality,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Noise standard deviation as a fraction of the dynamic range.
    pub noise: f64,
    /// Inclusive range of potholes per scene.
    pub potholes: (usize, usize),
    /// Smallest semi-axis, pixels.
    pub min_axis: f64,
    /// Largest semi-axis, pixels. Defaults to 3/8 of the shorter side.
    pub max_axis: Option<f64>,
}

impl SynthConfig {
    pub fn new(modality: Modality, count: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            modality,
            count,
            height,
            width,
            seed,
            noise: 0.02,
            potholes: (0, 3),
            min_axis: 3.0,
            max_axis: None,
        }
    }

    fn max_axis(&self) -> f64 {
        self.max_axis
            .unwrap_or(0.375 * self.height.min(self.width) as f64)
            .max(self.min_axis)
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "frame {}x{} must be non-empty and divisible by 4",
                self.height, self.width
            )));
        }
        if self.potholes.0 > self.potholes.1 {
            return Err(Error::Config(format!("empty pothole range {:?}", self.potholes)));
        }
        if !(self.min_axis >= 1.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("min_axis must be >= 1 and noise >= 0".into()));
        }
        let span = 2.0 * self.min_axis + 1.0;
        if span > self.height as f64 || span > self.width as f64 {
            return Err(Error::Config(format!(
                "a {}px semi-axis cannot fit a {}x{} frame",
                self.min_axis, self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Squared normalized radius of pixel center (y, x).
    fn rho2(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v
    }

    fn half_extent(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let hy = (self.a * self.a * s * s + self.b * self.b * c * c).sqrt();
        let hx = (self.a * self.a * c * c + self.b * self.b * s * s).sqrt();
        (hy, hx)
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        let (hy, hx) = self.half_extent();
        self.cy - hy >= 0.0
            && self.cy + hy <= (height - 1) as f64
            && self.cx - hx >= 0.0
            && self.cx + hx <= (width - 1) as f64
    }
}

/// Rejection-samples an ellipse that lies entirely inside the frame.
fn sample_ellipse(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Ellipse> {
    let (lo, hi) = (cfg.min_axis, cfg.max_axis());
    for _ in 0..10_000 {
        let e = Ellipse {
            cy: rng.gen_range(0.0..(cfg.height - 1) as f64),
            cx: rng.gen_range(0.0..(cfg.width - 1) as f64),
            a: rng.gen_range(lo..=hi),
            b: rng.gen_range(lo..=hi),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        };
        if e.fits(cfg.height, cfg.width) {
            return Ok(e);
        }
    }
    Err(Error::Config(format!(
        "could not place a {lo}..{hi}px ellipse in a {}x{} frame",
        cfg.height, cfg.width
    )))
}

/// Depression depth profile: a step of half the depth at the rim, deepening
/// quadratically toward the center. Zero outside.
fn bowl(rho2: f64) -> f64 {
    if rho2 < 1.0 {
        0.5 + 0.5 * (1.0 - rho2)
    } else {
        0.0
    }
}

/// Generates `cfg.count` samples. Sample `i` depends only on `cfg.seed` and
/// `i`, so a longer run extends a shorter one.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SegSample>> {
    cfg.validate()?;
    let data_seed = seed::derive(cfg.seed, stream::DATA);
    (0..cfg.count)
        .map(|i| synth_one(cfg, i, seed::derive(data_seed, i as u64)))
        .collect()
}

fn synth_one(cfg: &SynthConfig, index: usize, sample_seed: u64) -> Result<SegSample> {
    let mut rng = seed::rng(sample_seed);
    let (h, w) = (cfg.height, cfg.width);
    let n_holes = rng.gen_range(cfg.potholes.0..=cfg.potholes.1);
    let holes: Vec<Ellipse> = (0..n_holes).map(|_| sample_ellipse(&mut rng, cfg)).collect::<Result<_>>()?;

    let mut label = ClassMask::zeros(h, w);
    // per-pixel depression profile, max over overlapping potholes
    let mut depression = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = holes.iter().map(|e| bowl(e.rho2(y as f64, x as f64))).fold(0.0, f64::max);
            if d > 0.0 {
                label.set(y, x, 1);
            }
            depression[y * w + x] = d;
        }
    }

    let channels = cfg.modality.channels();
    let mut img = vec![0.0f64; h * w * channels];
    match cfg.modality {
        Modality::TDisp => {
            let level = rng.gen_range(0.55..0.65);
            let depth = rng.gen_range(0.15..0.30);
            for (p, v) in img.iter_mut().enumerate() {
                *v = level - depth * depression[p];
            }
        }
        Modality::Disp => {
            let base = rng.gen_range(0.2..0.3);
            let slope = rng.gen_range(0.3..0.5);
            let depth = rng.gen_range(0.06..0.15);
            for y in 0..h {
                let row = base + slope * y as f64 / (h - 1) as f64;
                for x in 0..w {
                    img[y * w + x] = row - depth * depression[y * w + x];
                }
            }
        }
        Modality::Rgb => render_rgb(&mut rng, cfg, &depression, &mut img)?,
    }

    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let noise_on = cfg.noise > 0.0;
    let data: Vec<f32> = img
        .into_iter()
        .map(|v| {
            let n = if noise_on { normal.sample(&mut rng) } else { 0.0 };
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    let image = Tensor::new(&[h, w, channels], data)?;
    SegSample::new(format!("{}-{index:04}", cfg.modality), cfg.modality, image, label)
}

fn render_rgb(rng: &mut ChaCha8Rng, cfg: &SynthConfig, depression: &[f64], img: &mut [f64]) -> Result<()> {
    let (h, w) = (cfg.height, cfg.width);
    let base: [f64; 3] = [
        0.45 + rng.gen_range(-0.05..0.05),
        0.45 + rng.gen_range(-0.05..0.05),
        0.47 + rng.gen_range(-0.05..0.05),
    ];
    // low-frequency shading waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.05),
            )
        })
        .collect();
    let n_stains = rng.gen_range(1..=2);
    let stains: Vec<Ellipse> = (0..n_stains).map(|_| sample_ellipse(rng, cfg)).collect::<Result<_>>()?;
    let hole_dark = rng.gen_range(0.25..0.40);
    let stain_dark = rng.gen_range(0.25..0.40);
    let tint = [1.0, 0.95, 0.85];

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (yf, xf) = (y as f64, x as f64);
            let shade: f64 = waves.iter().map(|&(fy, fx, ph, amp)| amp * (fy * yf + fx * xf + ph).sin()).sum();
            let grain = rng.gen_range(-0.06..0.06);
            let stain = stains.iter().any(|e| e.rho2(yf, xf) < 1.0);
            let mut factor = 1.0 - hole_dark * depression[p];
            if stain {
                factor = factor.min(1.0 - stain_dark);
            }
            for c in 0..3 {
                let mut v = base[c] + shade + grain;
                if depression[p] > 0.0 {
                    v *= tint[c];
                }
                img[p * 3 + c] = v * factor;
            }
        }
    }
    Ok(())
}
