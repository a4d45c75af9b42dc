use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::imgproc::{gaussian_blur, reflect_index, Boundary};

use super::params::{SimConfig, TurbulenceParams};

/// Applies tilt (bilinear warp) then spatially varying Gaussian blur.
pub fn degrade(x: &Frame, p: &TurbulenceParams, cfg: &SimConfig) -> Result<Frame> {
    let (c, h, w) = x.dims();
    if (h, w) != (p.height, p.width) {
        return Err(Error::param(format!(
            "turbulence fields are {}x{}, image is {h}x{w}",
            p.height, p.width
        )));
    }
    if cfg.blur_levels < 2 {
        return Err(Error::param("at least two blur levels are required"));
    }
    let smax = p.sigma.iter().fold(0f32, |m, &s| m.max(s)) as f64;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let warped = warp_plane(x.plane(ch), h, w, p.tilt_x(), p.tilt_y());
        let plane = if smax > 0.0 {
            blend_blur(&warped, h, w, &p.sigma, smax, cfg.blur_levels)
        } else {
            warped
        };
        out.extend(plane.into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
    }
    Frame::new(c, h, w, out)
}

fn warp_plane(plane: &[f32], h: usize, w: usize, dx: &[f32], dy: &[f32]) -> Vec<f64> {
    let mut out = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + dx[i] as f64;
            let sy = y as f64 + dy[i] as f64;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let xa = reflect_index(x0, w);
            let xb = reflect_index(x0 + 1, w);
            let ya = reflect_index(y0, h);
            let yb = reflect_index(y0 + 1, h);
            let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
            out[i] = (1.0 - fy) * ((1.0 - fx) * at(ya, xa) + fx * at(ya, xb))
                + fy * ((1.0 - fx) * at(yb, xa) + fx * at(yb, xb));
        }
    }
    out
}

/// Blends `levels` copies blurred at evenly spaced sigmas in `[0, smax]`,
/// linearly interpolating per pixel between the two bracketing levels.
fn blend_blur(plane: &[f64], h: usize, w: usize, sigma: &[f32], smax: f64, levels: usize) -> Vec<f64> {
    let step = smax / (levels - 1) as f64;
    let copies: Vec<Vec<f64>> = (0..levels)
        .map(|k| gaussian_blur(plane, h, w, k as f64 * step, Boundary::Reflect))
        .collect();
    sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = (s as f64 / step).clamp(0.0, (levels - 1) as f64);
            let k = (t.floor() as usize).min(levels - 2);
            let frac = t - k as f64;
            (1.0 - frac) * copies[k][i] + frac * copies[k + 1][i]
        })
        .collect()
}
