//! Separable filtering on single planes, shared by the simulator and the metrics.

/// How samples outside the plane are synthesized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Mirror about the edge pixel without repeating it (`dcb|abcd|cba`).
    Reflect,
    /// Repeat the edge pixel.
    Replicate,
}

#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

#[inline]
pub fn boundary_index(i: isize, n: usize, b: Boundary) -> usize {
    match b {
        Boundary::Reflect => reflect_index(i, n),
        Boundary::Replicate => i.clamp(0, n as isize - 1) as usize,
    }
}

/// Normalized 1-D Gaussian taps over `[-radius, radius]`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        let mut k = vec![0.0; 2 * radius + 1];
        k[radius] = 1.0;
        return k;
    }
    let taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Radius covering three standard deviations.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(0.0) as usize
}

/// Same-size separable convolution with a symmetric odd-length kernel.
pub fn convolve_separable(
    plane: &[f64],
    height: usize,
    width: usize,
    kernel: &[f64],
    boundary: Boundary,
) -> Vec<f64> {
    debug_assert_eq!(plane.len(), height * width);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; height * width];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let xi = boundary_index(x as isize + k as isize - r, width, boundary);
                acc += t * row[xi];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                let yi = boundary_index(y as isize + k as isize - r, height, boundary);
                acc += t * tmp[yi * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn gaussian_blur(plane: &[f64], height: usize, width: usize, sigma: f64, boundary: Boundary) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let kernel = gaussian_kernel(sigma, gaussian_radius(sigma));
    convolve_separable(plane, height, width, &kernel, boundary)
}

/// "Valid"-mode separable correlation: output is `(h - k + 1) × (w - k + 1)`.
pub fn convolve_separable_valid(plane: &[f64], height: usize, width: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let (oh, ow) = (height + 1 - k, width + 1 - k);
    let mut tmp = vec![0.0; height * ow];
    for y in 0..height {
        for x in 0..ow {
            tmp[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, &t)| t * plane[y * width + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, &t)| t * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}
