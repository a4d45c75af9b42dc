use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::Frame;

/// One geometric transform: crop at (`top`, `left`), then optional
/// horizontal flip, vertical flip and transpose, in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentOp {
    pub crop: usize,
    pub top: usize,
    pub left: usize,
    pub flip_h: bool,
    pub flip_v: bool,
    pub transpose: bool,
}

impl AugmentOp {
    pub fn identity(crop: usize) -> Self {
        Self {
            crop,
            top: 0,
            left: 0,
            flip_h: false,
            flip_v: false,
            transpose: false,
        }
    }

    pub fn sample<R: Rng>(height: usize, width: usize, crop: usize, rng: &mut R) -> Result<Self> {
        if crop == 0 || height < crop || width < crop {
            return Err(Error::param(format!("cannot crop {crop}×{crop} from a {height}×{width} image")));
        }
        Ok(Self {
            crop,
            top: rng.random_range(0..=height - crop),
            left: rng.random_range(0..=width - crop),
            flip_h: rng.random(),
            flip_v: rng.random(),
            transpose: rng.random(),
        })
    }

    pub fn apply(&self, f: &Frame) -> Result<Frame> {
        let (c, h, w) = f.dims();
        let s = self.crop;
        if self.top + s > h || self.left + s > w {
            return Err(Error::param(format!(
                "crop {s}×{s} at ({}, {}) exceeds a {h}×{w} image",
                self.top, self.left
            )));
        }
        let mut out = vec![0f32; c * s * s];
        for ch in 0..c {
            let src = f.plane(ch);
            let dst = &mut out[ch * s * s..(ch + 1) * s * s];
            for y in 0..s {
                for x in 0..s {
                    // Output (y, x) reads the crop at (sy, sx).
                    let (mut sy, mut sx) = if self.transpose { (x, y) } else { (y, x) };
                    if self.flip_v {
                        sy = s - 1 - sy;
                    }
                    if self.flip_h {
                        sx = s - 1 - sx;
                    }
                    dst[y * s + x] = src[(self.top + sy) * w + self.left + sx];
                }
            }
        }
        Frame::new(c, s, s, out)
    }
}

/// Applies one random transform to every member of a group of spatially
/// aligned frames.
pub fn augment<R: Rng>(frames: &[&Frame], crop: usize, rng: &mut R) -> Result<Vec<Frame>> {
    let first = frames.first().ok_or_else(|| Error::param("augment needs at least one frame"))?;
    let (h, w) = (first.height(), first.width());
    if frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
        return Err(Error::param("augment: frames in a group must share spatial dims"));
    }
    let op = AugmentOp::sample(h, w, crop, rng)?;
    frames.iter().map(|f| op.apply(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqa::psnr;
    use crate::turbsim::scenes::random_scene;
    use crate::turbsim::{degrade, SimConfig, TurbulenceParams};
    use rand::SeedableRng;

    #[test]
    fn identity_op_is_plain_crop() {
        let f = random_scene(20, 24, 1);
        let op = AugmentOp {
            top: 3,
            left: 5,
            ..AugmentOp::identity(12)
        };
        let out = op.apply(&f).unwrap();
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    assert_eq!(out.at(c, y, x), f.at(c, y + 3, x + 5));
                }
            }
        }
    }

    #[test]
    fn flips_and_transpose_are_involutions() {
        let f = random_scene(16, 16, 2);
        for (h, v, t) in [(true, false, false), (false, true, false), (false, false, true)] {
            let op = AugmentOp {
                flip_h: h,
                flip_v: v,
                transpose: t,
                ..AugmentOp::identity(16)
            };
            assert_eq!(op.apply(&op.apply(&f).unwrap()).unwrap(), f);
        }
    }

    #[test]
    fn undersized_input_is_rejected() {
        let f = random_scene(16, 40, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&[&f], 32, &mut rng).is_err());
    }

    #[test]
    fn paired_transform_preserves_psnr() {
        let clean = random_scene(48, 48, 4);
        let p = TurbulenceParams::generate(48, 48, 1.5, 8.0, 1, &SimConfig::default()).unwrap();
        let degraded = degrade(&clean, &p, &SimConfig::default()).unwrap();
        for seed in 0..8 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let op = AugmentOp::sample(48, 48, 32, &mut rng).unwrap();
            let plain = AugmentOp {
                flip_h: false,
                flip_v: false,
                transpose: false,
                ..op
            };
            let (a, b) = (op.apply(&clean).unwrap(), op.apply(&degraded).unwrap());
            let (pa, pb) = (plain.apply(&clean).unwrap(), plain.apply(&degraded).unwrap());
            // Same pixel multiset; only the summation order differs.
            let (x, y) = (psnr(&a, &b).unwrap(), psnr(&pa, &pb).unwrap());
            assert!((x - y).abs() < 1e-9 * y.abs(), "{x} vs {y}");
        }
    }
}
