//! Perception-based no-reference quality score over MSCN blocks.
//!
//! Lower scores mean better quality; an image without spatially active blocks
//! scores 100.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::imgproc::{convolve_separable, gaussian_kernel, Boundary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiqeConfig {
    pub block_size: usize,
    /// Blocks whose MSCN variance exceeds this are spatially active.
    pub activity_threshold: f64,
    /// Edge segments whose standard deviation falls below this are impaired.
    pub impaired_threshold: f64,
    /// Length of the edge segments scanned for noticeable artifacts.
    pub segment_length: usize,
    pub aggregation_constant: f64,
}

impl Default for PiqeConfig {
    fn default() -> Self {
        Self {
            block_size: 16,
            activity_threshold: 0.1,
            impaired_threshold: 0.1,
            segment_length: 6,
            aggregation_constant: 1.0,
        }
    }
}

const MSCN_WINDOW: usize = 7;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
const MSCN_C: f64 = 1.0;

/// MSCN coefficients of a luminance plane on the 8-bit intensity scale.
pub fn mscn_plane(lum: &[f64], height: usize, width: usize) -> Vec<f64> {
    let k = gaussian_kernel(MSCN_SIGMA, MSCN_WINDOW / 2);
    let mu = convolve_separable(lum, height, width, &k, Boundary::Replicate);
    let sq: Vec<f64> = lum.iter().map(|v| v * v).collect();
    let mu_sq = convolve_separable(&sq, height, width, &k, Boundary::Replicate);
    lum.iter()
        .zip(mu.iter().zip(&mu_sq))
        .map(|(&v, (&m, &m2))| {
            let sigma = (m2 - m * m).abs().sqrt();
            (v - m) / (sigma + MSCN_C)
        })
        .collect()
}

/// MSCN map of a frame's luminance, scaled to `[0, 255]` first so the
/// stabilizing constant has its customary meaning.
pub fn mscn(a: &Frame) -> Vec<f64> {
    let lum: Vec<f64> = a.luminance().into_iter().map(|v| v * 255.0).collect();
    mscn_plane(&lum, a.height(), a.width())
}

pub fn piqe(a: &Frame) -> Result<f64> {
    piqe_with(a, &PiqeConfig::default())
}

pub fn piqe_with(a: &Frame, cfg: &PiqeConfig) -> Result<f64> {
    let bs = cfg.block_size;
    let (h, w) = (a.height(), a.width());
    if h < bs || w < bs {
        return Err(Error::param(format!("piqe: image {h}x{w} is smaller than one {bs}x{bs} block")));
    }
    // Replicate-pad up to whole blocks.
    let (ph, pw) = (h.div_ceil(bs) * bs, w.div_ceil(bs) * bs);
    let lum = a.luminance();
    let mut padded = vec![0.0; ph * pw];
    for y in 0..ph {
        for x in 0..pw {
            padded[y * pw + x] = 255.0 * lum[y.min(h - 1) * w + x.min(w - 1)];
        }
    }
    let map = mscn_plane(&padded, ph, pw);

    let mut active = 0usize;
    let mut distortion = 0.0;
    let mut block = vec![0.0; bs * bs];
    for by in (0..ph).step_by(bs) {
        for bx in (0..pw).step_by(bs) {
            for y in 0..bs {
                block[y * bs..(y + 1) * bs].copy_from_slice(&map[(by + y) * pw + bx..(by + y) * pw + bx + bs]);
            }
            let var = sample_var(&block);
            if var <= cfg.activity_threshold {
                continue;
            }
            active += 1;
            let v = var.min(1.0);
            let noticeable = has_impaired_edge(&block, bs, cfg);
            let noisy = noise_criterion(&block, bs, var);
            if noticeable {
                distortion += 1.0 - v;
            }
            if noisy {
                distortion += v;
            }
        }
    }
    let c = cfg.aggregation_constant;
    Ok(100.0 * (distortion + c) / (active as f64 + c))
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Noticeable-artifact test: any window of `segment_length` consecutive
/// samples along one of the four block edges is nearly uniform.
fn has_impaired_edge(block: &[f64], bs: usize, cfg: &PiqeConfig) -> bool {
    let top: Vec<f64> = block[..bs].to_vec();
    let bottom: Vec<f64> = block[(bs - 1) * bs..].to_vec();
    let left: Vec<f64> = (0..bs).map(|y| block[y * bs]).collect();
    let right: Vec<f64> = (0..bs).map(|y| block[y * bs + bs - 1]).collect();
    [top, right, bottom, left].iter().any(|edge| {
        edge.windows(cfg.segment_length)
            .any(|seg| sample_var(seg).sqrt() < cfg.impaired_threshold)
    })
}

/// Gaussian-noise test comparing the block deviation with the ratio of the
/// deviations of its two central columns and the remaining columns.
fn noise_criterion(block: &[f64], bs: usize, var: f64) -> bool {
    let (c1, c2) = (bs / 2 - 1, bs / 2);
    let mut center = Vec::with_capacity(2 * bs);
    let mut surround = Vec::with_capacity(bs * (bs - 2));
    for x in 0..bs {
        for y in 0..bs {
            let v = block[y * bs + x];
            if x == c1 || x == c2 {
                center.push(v);
            } else {
                surround.push(v);
            }
        }
    }
    let surround_dev = sample_var(&surround).sqrt();
    let cen_sur = if surround_dev > 0.0 {
        sample_var(&center).sqrt() / surround_dev
    } else {
        0.0
    };
    let sigma = var.sqrt();
    let denom = sigma.max(cen_sur);
    let beta = if denom > 0.0 { (sigma - cen_sur).abs() / denom } else { 0.0 };
    sigma > 2.0 * beta
}
