use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::turbsim::list_pngs;

use super::{piqe, psnr, ssim};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub piqe: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_piqe: f64,
    /// Files that could not be scored, with the reason.
    pub errors: Vec<String>,
    pub has_reference: bool,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) if x > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => String::new(),
    }
}

impl MetricReport {
    pub fn from_rows(rows: Vec<ImageMetrics>, errors: Vec<String>, has_reference: bool) -> Self {
        let mean_psnr = mean(rows.iter().filter_map(|r| r.psnr));
        let mean_ssim = mean(rows.iter().filter_map(|r| r.ssim));
        let mean_piqe = mean(rows.iter().map(|r| r.piqe)).unwrap_or(f64::NAN);
        Self {
            rows,
            mean_psnr,
            mean_ssim,
            mean_piqe,
            errors,
            has_reference,
        }
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    /// One row per image followed by a `MEAN` row; PSNR/SSIM columns only
    /// appear when references were supplied.
    pub fn write_table(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let header: &[&str] = if self.has_reference {
            &["name", "psnr_db", "ssim", "piqe"]
        } else {
            &["name", "piqe"]
        };
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        let mut push = |name: &str, p: Option<f64>, s: Option<f64>, q: f64| {
            let mut row = vec![name.to_string()];
            if self.has_reference {
                row.push(cell(p));
                row.push(cell(s));
            }
            row.push(cell(Some(q)));
            rows.push(row);
        };
        for r in &self.rows {
            push(&r.name, r.psnr, r.ssim, r.piqe);
        }
        push("MEAN", self.mean_psnr, self.mean_ssim, self.mean_piqe);
        for row in rows {
            w.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> Value {
        let mut v = json!({
            "count": self.count(),
            "mean_piqe": number(self.mean_piqe),
            "errors": self.errors,
        });
        if self.has_reference {
            v["mean_psnr_db"] = self.mean_psnr.map(number).unwrap_or(Value::Null);
            v["mean_ssim"] = self.mean_ssim.map(number).unwrap_or(Value::Null);
        }
        v
    }
}

/// Scores every PNG in `restored_dir`, pairing by filename with
/// `reference_dir` when given. Unpairable or unreadable files are reported
/// in `errors` and skipped.
pub fn evaluate(restored_dir: &Path, reference_dir: Option<&Path>) -> Result<MetricReport> {
    let files = list_pngs(restored_dir)?;
    if let Some(r) = reference_dir {
        if !r.is_dir() {
            return Err(Error::io(
                r,
                std::io::Error::new(std::io::ErrorKind::NotFound, "reference directory does not exist"),
            ));
        }
    }
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for path in &files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let scored = (|| -> Result<ImageMetrics> {
            let img = Frame::load_png(path)?;
            let (p, s) = match reference_dir {
                Some(dir) => {
                    let rpath = dir.join(&name);
                    if !rpath.is_file() {
                        return Err(Error::param(format!("no reference named {name}")));
                    }
                    let reference = Frame::load_png(&rpath)?;
                    (Some(psnr(&img, &reference)?), Some(ssim(&img, &reference)?))
                }
                None => (None, None),
            };
            Ok(ImageMetrics {
                name: name.clone(),
                psnr: p,
                ssim: s,
                piqe: piqe(&img)?,
            })
        })();
        match scored {
            Ok(m) => rows.push(m),
            Err(e) => errors.push(format!("{name}: {e}")),
        }
    }
    if let Some(dir) = reference_dir {
        for r in list_pngs(dir)? {
            let name = r.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if !restored_dir.join(&name).is_file() {
                errors.push(format!("{name}: no restored image for this reference"));
            }
        }
    }
    Ok(MetricReport::from_rows(rows, errors, reference_dir.is_some()))
}
