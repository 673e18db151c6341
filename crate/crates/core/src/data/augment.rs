//! Training-time geometric augmentation.
//!
//! One draw picks a horizontal flip (p = 0.5), a rotation in [−10°, +10°]
//! about the frame center, and a translation of up to ±5 % of each side
//! (rounded to whole pixels). Image and label receive the same transform;
//! the image is resampled bilinearly, the label by nearest neighbor, and
//! pixels mapped from outside the frame are zero.

use rand::Rng;

use super::{ClassMask, SegSample};
use crate::seed;
use crate::tensor::Tensor;

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const MAX_SHIFT_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
    /// Whole-pixel shift (rows, cols).
    pub shift: (i64, i64),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { flip: false, angle_deg: 0.0, shift: (0, 0) };

    pub fn sample(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        let flip = rng.gen_bool(0.5);
        let angle_deg = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let dy = rng.gen_range(-MAX_SHIFT_FRACTION..=MAX_SHIFT_FRACTION) * height as f64;
        let dx = rng.gen_range(-MAX_SHIFT_FRACTION..=MAX_SHIFT_FRACTION) * width as f64;
        Self { flip, angle_deg, shift: (dy.round() as i64, dx.round() as i64) }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Applies the transform to one sample.
    pub fn apply(&self, s: &SegSample) -> SegSample {
        let (h, w) = (s.height(), s.width());
        let c = s.image.last_dim();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let src = s.image.data();
        let mut image = vec![0.0f32; h * w * c];
        let mut label = ClassMask::zeros(h, w);

        for y in 0..h {
            for x in 0..w {
                // undo the shift, then the rotation, then the flip
                let ty = y as f64 - self.shift.0 as f64 - cy;
                let tx = x as f64 - self.shift.1 as f64 - cx;
                let sy = cos * ty - sin * tx + cy;
                let mut sx = sin * ty + cos * tx + cx;
                if self.flip {
                    sx = (w - 1) as f64 - sx;
                }

                let (ny, nx) = (sy.round(), sx.round());
                if ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w {
                    label.set(y, x, s.label.get(ny as usize, nx as usize));
                }

                let dst = &mut image[(y * w + x) * c..][..c];
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let wgt = wy * wx;
                        if wgt == 0.0 {
                            continue;
                        }
                        let (py, px) = (y0 + oy, x0 + ox);
                        if py < 0.0 || px < 0.0 || py as usize >= h || px as usize >= w {
                            continue;
                        }
                        let p = (py as usize * w + px as usize) * c;
                        for (d, &v) in dst.iter_mut().zip(&src[p..p + c]) {
                            *d += (wgt * v as f64) as f32;
                        }
                    }
                }
            }
        }
        SegSample {
            id: s.id.clone(),
            modality: s.modality,
            image: Tensor::new(&[h, w, c], image).expect("same shape"),
            label,
        }
    }
}

/// Draws augmentation parameters from `seed` and applies them.
pub fn augment(s: &SegSample, seed: u64) -> SegSample {
    let mut rng = seed::rng(seed);
    AugmentParams::sample(&mut rng, s.height(), s.width()).apply(s)
}
