//! Static line charts rendered straight into PNG files.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 720;
const HEIGHT: u32 = 420;
const LEFT: i64 = 78;
const RIGHT: i64 = 24;
const TOP: i64 = 36;
const BOTTOM: i64 = 44;
const SCALE: i64 = 2;

pub const BLUE: [u8; 3] = [31, 119, 180];
pub const ORANGE: [u8; 3] = [255, 127, 14];
pub const GREEN: [u8; 3] = [44, 160, 44];
const BLACK: [u8; 3] = [0, 0, 0];
const GRID: [u8; 3] = [225, 225, 225];

pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
    /// Draw a marker at every point.
    pub markers: bool,
}

/// 3×5 glyphs, one 3-bit row per entry, top row first.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '_' => [0, 0, 0, 0, 7],
        '/' => [1, 1, 2, 4, 4],
        '(' => [2, 4, 4, 4, 2],
        ')' => [2, 1, 1, 1, 2],
        ':' => [0, 2, 0, 2, 0],
        _ => [0; 5],
    }
}

fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 4 * SCALE
}

struct Canvas(RgbImage);

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.0.width() && (y as u32) < self.0.height() {
            self.0.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3], thick: bool) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if thick {
                self.put(x + 1, y, c);
                self.put(x, y + 1, c);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let g = glyph(ch.to_ascii_uppercase());
            let ox = x + i as i64 * 4 * SCALE;
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.rect(ox + col * SCALE, y + row as i64 * SCALE, SCALE, SCALE, c);
                    }
                }
            }
        }
    }
}

/// Spacing of 1, 2 or 5 times a power of ten giving about five ticks.
fn tick_step((lo, hi): (f64, f64)) -> f64 {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(r: (f64, f64)) -> Vec<f64> {
    let step = tick_step(r);
    let first = (r.0 / step).ceil() as i64;
    let last = (r.1 / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64, r: (f64, f64)) -> String {
    let step = tick_step(r);
    let a = v.abs();
    if a < step * 1e-6 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.decimals$}")
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        let pad = 0.5 * hi.abs().max(1e-3);
        return Some((lo - pad, hi + pad));
    }
    let pad = 0.05 * (hi - lo);
    Some((lo - pad, hi + pad))
}

/// Renders the series into `path`. Non-finite points are skipped; an empty
/// chart still gets axes and the title.
pub fn line_chart(path: &Path, title: &str, x_label: &str, series: &[Series]) -> Result<()> {
    let mut c = Canvas(RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])));
    let (w, h) = (WIDTH as i64, HEIGHT as i64);
    let (pw, ph) = (w - LEFT - RIGHT, h - TOP - BOTTOM);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xr = range(all().filter(|p| p.1.is_finite()).map(|p| p.0)).unwrap_or((0.0, 1.0));
    let yr = range(all().filter(|p| p.0.is_finite()).map(|p| p.1)).unwrap_or((0.0, 1.0));
    let px = |x: f64| LEFT + ((x - xr.0) / (xr.1 - xr.0) * pw as f64).round() as i64;
    let py = |y: f64| TOP + ph - ((y - yr.0) / (yr.1 - yr.0) * ph as f64).round() as i64;

    for xv in ticks(xr) {
        let gx = px(xv);
        c.line((gx, TOP), (gx, TOP + ph), GRID, false);
        let l = tick_label(xv, xr);
        c.text(gx - text_width(&l) / 2, TOP + ph + 8, &l, BLACK);
    }
    for yv in ticks(yr) {
        let gy = py(yv);
        c.line((LEFT, gy), (LEFT + pw, gy), GRID, false);
        let l = tick_label(yv, yr);
        c.text(LEFT - 6 - text_width(&l), gy - 5, &l, BLACK);
    }
    c.line((LEFT, TOP), (LEFT, TOP + ph), BLACK, false);
    c.line((LEFT, TOP + ph), (LEFT + pw, TOP + ph), BLACK, false);
    c.text(LEFT, 10, title, BLACK);
    c.text(LEFT + pw - text_width(x_label), h - 16, x_label, BLACK);

    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for seg in pts.windows(2) {
            c.line(seg[0], seg[1], s.color, true);
        }
        if s.markers || pts.len() == 1 {
            for &(x, y) in &pts {
                c.rect(x - 3, y - 3, 7, 7, s.color);
            }
        }
    }

    let mut ly = TOP + 6;
    for s in series {
        let tw = text_width(&s.label);
        let x = LEFT + pw - tw - 22;
        c.rect(x - 2, ly - 2, tw + 24, 14, [255, 255, 255]);
        c.rect(x, ly, 14, 10, s.color);
        c.text(x + 20, ly, &s.label, BLACK);
        ly += 16;
    }

    c.0.save(path).with_context(|| format!("writing plot {}", path.display()))
}

/// Trailing moving average with window `k`.
pub fn moving_average(v: &[(f64, f64)], k: usize) -> Vec<(f64, f64)> {
    let k = k.max(1);
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(v.len());
    for (i, &(x, y)) in v.iter().enumerate() {
        sum += y;
        if i >= k {
            sum -= v[i - k].1;
        }
        out.push((x, sum / (i + 1).min(k) as f64));
    }
    out
}
