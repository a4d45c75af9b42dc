//! Procedural clean images: a fixed test card and seeded random scenes with
//! edges, gradients, and texture at several scales.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::frame::Frame;
use crate::imgproc::{gaussian_blur, Boundary};
use crate::rng::rng_for;

/// Deterministic textured card: checkerboard, radial chirp and a color ramp.
pub fn test_card(height: usize, width: usize) -> Frame {
    let mut f = Frame::filled(3, height, width, 0.0);
    let (hf, wf) = (height as f32, width as f32);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f32 / wf, y as f32 / hf);
            let checker = if ((x / 8) + (y / 8)) % 2 == 0 { 0.8 } else { 0.2 };
            let r2 = (u - 0.5).powi(2) + (v - 0.5).powi(2);
            let chirp = 0.5 + 0.5 * (60.0 * r2).cos();
            let i = y * width + x;
            let n = height * width;
            let d = f.data_mut();
            d[i] = 0.6 * checker + 0.4 * u;
            d[n + i] = 0.5 * chirp + 0.5 * v;
            d[2 * n + i] = 0.5 * checker + 0.5 * chirp * (1.0 - u);
        }
    }
    f.clamp_unit();
    f
}

/// A random scene drawn from `seed`.
pub fn random_scene(height: usize, width: usize, seed: u64) -> Frame {
    let mut rng = rng_for(seed, &[0x5CE4E]);
    let n = height * width;
    let mut planes = vec![vec![0f64; n]; 3];

    // Background: a linear gradient between two random colors.
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..height {
        for x in 0..width {
            let t = 0.5
                + 0.5 * ((x as f64 / width as f64 - 0.5) * ca + (y as f64 / height as f64 - 0.5) * sa);
            for c in 0..3 {
                planes[c][y * width + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    // Shapes with hard edges and occasional stripe texture.
    let shapes = rng.random_range(4..9);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.08..0.35) * width as f64;
        let ry = rng.random_range(0.08..0.35) * height as f64;
        let ellipse = rng.random_bool(0.5);
        let striped = rng.random_bool(0.35);
        let period = rng.random_range(2.5..7.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                let shade = if striped {
                    let s = ((x as f64 * phi.cos() + y as f64 * phi.sin()) / period * std::f64::consts::TAU).sin();
                    0.75 + 0.25 * s
                } else {
                    1.0
                };
                for c in 0..3 {
                    planes[c][y * width + x] = color[c] * shade;
                }
            }
        }
    }

    // Fine texture.
    let grain: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let grain = gaussian_blur(&grain, height, width, 0.8, Boundary::Reflect);
    let amp = rng.random_range(0.02..0.08);
    let data = planes
        .into_iter()
        .flat_map(|p| {
            p.into_iter()
                .zip(grain.iter())
                .map(|(v, g)| (v + amp * g).clamp(0.0, 1.0) as f32)
                .collect::<Vec<_>>()
        })
        .collect();
    Frame::new(3, height, width, data).expect("dims are positive")
}
