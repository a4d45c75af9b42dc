use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, Boundary};
use crate::rng::rng_for;

/// Strength laws and field statistics of the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Tilt RMS in pixels at `D/r0 = 1`; RMS grows as `(D/r0)^(5/6)`.
    pub tilt_scale: f64,
    /// Blur sigma in pixels at `D/r0 = 1`; grows linearly.
    pub blur_scale: f64,
    /// Relative spatial modulation of the blur sigma (0.3 gives a factor in `[0.7, 1.3]`).
    pub blur_modulation: f64,
    /// Number of fixed-sigma copies blended to realize the varying blur.
    pub blur_levels: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            tilt_scale: 1.2,
            blur_scale: 1.0,
            blur_modulation: 0.3,
            blur_levels: 4,
        }
    }
}

/// Full per-sample degradation state.
#[derive(Clone, Debug, PartialEq)]
pub struct TurbulenceParams {
    pub d_r0: f64,
    pub height: usize,
    pub width: usize,
    /// Two planes: horizontal then vertical displacement, in pixels.
    pub tilt: Vec<f32>,
    /// Per-pixel Gaussian blur standard deviation, in pixels.
    pub sigma: Vec<f32>,
    pub corr_length: f64,
    pub seed: u64,
}

impl TurbulenceParams {
    /// Deterministically builds the fields for a given strength and seed.
    pub fn generate(
        height: usize,
        width: usize,
        d_r0: f64,
        corr_length: f64,
        seed: u64,
        cfg: &SimConfig,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param(format!("image shape must be positive, got {height}x{width}")));
        }
        if !(d_r0.is_finite() && d_r0 >= 0.0) {
            return Err(Error::param(format!("D/r0 must be finite and non-negative, got {d_r0}")));
        }
        if !(corr_length.is_finite() && corr_length >= 0.0) {
            return Err(Error::param(format!("correlation length must be non-negative, got {corr_length}")));
        }
        let n = height * width;
        let mut rng = rng_for(seed, &[0x7417]);
        let mut white = || -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let tx = white();
        let ty = white();
        let modulation = white();

        let tx = gaussian_blur(&tx, height, width, corr_length, Boundary::Reflect);
        let ty = gaussian_blur(&ty, height, width, corr_length, Boundary::Reflect);
        let rms = (tx.iter().chain(&ty).map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let target = cfg.tilt_scale * d_r0.powf(5.0 / 6.0);
        let gain = if rms > 0.0 { target / rms } else { 0.0 };
        let tilt = tx.iter().chain(&ty).map(|v| (v * gain) as f32).collect();

        let m = gaussian_blur(&modulation, height, width, corr_length, Boundary::Reflect);
        let (lo, hi) = m
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let base = cfg.blur_scale * d_r0;
        let sigma = m
            .iter()
            .map(|&v| {
                let unit = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                let factor = 1.0 - cfg.blur_modulation + 2.0 * cfg.blur_modulation * unit;
                (base * factor).max(0.0) as f32
            })
            .collect();

        Ok(Self {
            d_r0,
            height,
            width,
            tilt,
            sigma,
            corr_length,
            seed,
        })
    }

    /// Parameters that leave every image untouched.
    pub fn zero(height: usize, width: usize) -> Self {
        Self {
            d_r0: 0.0,
            height,
            width,
            tilt: vec![0.0; 2 * height * width],
            sigma: vec![0.0; height * width],
            corr_length: 0.0,
            seed: 0,
        }
    }

    pub fn tilt_x(&self) -> &[f32] {
        &self.tilt[..self.height * self.width]
    }

    pub fn tilt_y(&self) -> &[f32] {
        &self.tilt[self.height * self.width..]
    }

    /// Per-pixel displacement magnitude.
    pub fn tilt_magnitude(&self) -> Vec<f32> {
        self.tilt_x()
            .iter()
            .zip(self.tilt_y())
            .map(|(&x, &y)| (x * x + y * y).sqrt())
            .collect()
    }

    /// Root-mean-square displacement magnitude over the field.
    pub fn tilt_rms(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        (self.tilt.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n).sqrt()
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma.iter().map(|&v| v as f64).sum::<f64>() / self.sigma.len() as f64
    }
}

/// Draws a strength from `d_r0_range` and generates matching fields.
pub fn sample_params<R: RngCore>(
    height: usize,
    width: usize,
    d_r0_range: (f64, f64),
    corr_length: f64,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<TurbulenceParams> {
    let (lo, hi) = d_r0_range;
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
        return Err(Error::param(format!("invalid D/r0 interval [{lo}, {hi}]")));
    }
    let d_r0 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let seed = rng.next_u64();
    TurbulenceParams::generate(height, width, d_r0, corr_length, seed, cfg)
}

/// Compact spatial summary of a degradation at latent resolution.
///
/// Channel 0 is the mean tilt magnitude and channel 1 the mean blur sigma
/// over each cell's input region.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DegradationMap {
    pub fn tilt(&self) -> &[f32] {
        &self.data[..self.height * self.width]
    }

    pub fn blur(&self) -> &[f32] {
        &self.data[self.height * self.width..]
    }
}

pub fn param_map(p: &TurbulenceParams, latent: (usize, usize)) -> Result<DegradationMap> {
    fields_to_map(&p.tilt_magnitude(), &p.sigma, p.height, p.width, latent)
}

/// Area-averages per-pixel tilt magnitude and blur sigma planes onto a latent grid.
pub fn fields_to_map(
    tilt_mag: &[f32],
    sigma: &[f32],
    height: usize,
    width: usize,
    latent: (usize, usize),
) -> Result<DegradationMap> {
    let (lh, lw) = latent;
    if lh == 0 || lw == 0 || !height.is_multiple_of(lh) || !width.is_multiple_of(lw) {
        return Err(Error::param(format!(
            "latent grid {lh}x{lw} does not tile input {height}x{width}"
        )));
    }
    if tilt_mag.len() != height * width || sigma.len() != height * width {
        return Err(Error::param("field sizes do not match the stated shape"));
    }
    let (ch, cw) = (height / lh, width / lw);
    let area = (ch * cw) as f64;
    let mut data = vec![0f32; 2 * lh * lw];
    for (c, plane) in [tilt_mag, sigma].into_iter().enumerate() {
        for cy in 0..lh {
            for cx in 0..lw {
                let mut acc = 0f64;
                for y in cy * ch..(cy + 1) * ch {
                    for x in cx * cw..(cx + 1) * cw {
                        acc += plane[y * width + x] as f64;
                    }
                }
                data[(c * lh + cy) * lw + cx] = (acc / area) as f32;
            }
        }
    }
    Ok(DegradationMap {
        height: lh,
        width: lw,
        data,
    })
}
