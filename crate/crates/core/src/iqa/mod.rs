//! Full-reference (PSNR, SSIM) and no-reference (PIQE) image quality metrics.

mod evaluate;
mod piqe;

pub use evaluate::{evaluate, ImageMetrics, MetricReport};
pub use piqe::{mscn, mscn_plane, piqe, piqe_with, PiqeConfig};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::imgproc::{convolve_separable_valid, gaussian_kernel};

/// Peak signal-to-noise ratio in dB with unit peak.
///
/// Identical inputs return `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::param(format!(
            "psnr: shapes differ ({:?} vs {:?})",
            a.dims(),
            b.dims()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Single-scale SSIM on luminance with an 11×11 Gaussian window (σ = 1.5),
/// averaged over all fully-contained windows.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::param("ssim: shapes differ"));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::param(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (la, lb) = (a.luminance(), b.luminance());
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let filt = |p: &[f64]| convolve_separable_valid(p, h, w, &k).0;
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filt(&la);
    let mu_b = filt(&lb);
    let aa = filt(&prod(&la, &la));
    let bb = filt(&prod(&lb, &lb));
    let ab = filt(&prod(&la, &lb));
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}
