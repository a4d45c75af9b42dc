//! Paired (synthetic) and degraded-only (proxy-real) dataset fabrication.
//!
//! A dataset directory holds `manifest.jsonl` plus the PNGs it references,
//! with paths relative to the directory. The first line is a header, every
//! following line one record. Proxy-real datasets keep their ground truth in
//! `sealed/ground_truth.jsonl`, which the training view never references.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::rng::rng_for;

use super::degrade::degrade;
use super::params::{sample_params, SimConfig, TurbulenceParams};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SEALED_FILE: &str = "sealed/ground_truth.jsonl";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Synthetic,
    ProxyReal,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Domain::Synthetic),
            "proxy_real" | "proxy-real" => Ok(Domain::ProxyReal),
            other => Err(Error::param(format!("unknown domain `{other}`"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Synthetic => "synthetic",
            Domain::ProxyReal => "proxy_real",
        })
    }
}

/// Degradation settings that distinguish the two domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSettings {
    pub d_r0_range: (f64, f64),
    pub corr_length: f64,
    pub noise_std: f64,
}

impl Domain {
    /// The proxy-real domain sits outside the teacher's strength range, with
    /// shorter correlation and sensor noise.
    pub fn settings(self) -> DomainSettings {
        match self {
            Domain::Synthetic => DomainSettings {
                d_r0_range: (0.5, 2.0),
                corr_length: 16.0,
                noise_std: 0.0,
            },
            Domain::ProxyReal => DomainSettings {
                d_r0_range: (2.0, 3.0),
                corr_length: 8.0,
                noise_std: 0.01,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestView {
    Training,
    Sealed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema: u32,
    pub domain: Domain,
    pub view: ManifestView,
    pub global_seed: u64,
    pub settings: DomainSettings,
    pub sim: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<PathBuf>,
    pub degraded_path: PathBuf,
    pub d_r0: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<ManifestRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Regenerates the turbulence fields of record `i` for an image of the given shape.
    pub fn params_for(&self, i: usize, height: usize, width: usize) -> Result<TurbulenceParams> {
        let r = &self.records[i];
        TurbulenceParams::generate(
            height,
            width,
            r.d_r0,
            self.header.settings.corr_length,
            r.seed,
            &self.header.sim,
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let line = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{line}").expect("write to vec");
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(out, "{line}").expect("write to vec");
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths resolve against the dataset root, which
    /// is the manifest's directory (or its parent for sealed files).
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let malformed = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let header_line = lines
            .next()
            .ok_or_else(|| malformed("empty manifest".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader =
            serde_json::from_str(&header_line).map_err(|e| malformed(format!("header: {e}")))?;
        if header.schema != MANIFEST_SCHEMA {
            return Err(Error::Schema(format!(
                "manifest schema {} is not supported (expected {MANIFEST_SCHEMA})",
                header.schema
            )));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| malformed(format!("line {}: {e}", n + 2)))?;
            records.push(r);
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let root = match header.view {
            ManifestView::Training => dir.to_path_buf(),
            ManifestView::Sealed => dir.parent().unwrap_or(dir).to_path_buf(),
        };
        Ok(Self { header, records, root })
    }
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Degrades `count` images drawn cyclically from `clean_dir` into `out_dir`.
///
/// Returns the training-view manifest. Record `i` depends only on
/// `(seed, i)` and the clean image it draws from.
pub fn build_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    count: usize,
    domain: Domain,
    seed: u64,
    sim: &SimConfig,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::param("dataset count must be at least 1"));
    }
    let sources = list_pngs(clean_dir)?;
    if sources.is_empty() {
        return Err(Error::io(
            clean_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no PNG images in clean directory"),
        ));
    }
    let settings = domain.settings();
    let clean_sub = match domain {
        Domain::Synthetic => PathBuf::from("clean"),
        Domain::ProxyReal => PathBuf::from("sealed/clean"),
    };
    for sub in [Path::new("degraded"), clean_sub.as_path()] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut sealed = Vec::with_capacity(count);
    for i in 0..count {
        let src = &sources[i % sources.len()];
        let clean = Frame::load_png(src)?;
        let mut rng = rng_for(seed, &[i as u64]);
        let p = sample_params(
            clean.height(),
            clean.width(),
            settings.d_r0_range,
            settings.corr_length,
            sim,
            &mut rng,
        )?;
        let mut y = degrade(&clean, &p, sim)?;
        if settings.noise_std > 0.0 {
            let noise = Normal::new(0.0, settings.noise_std).expect("finite std");
            for v in y.data_mut() {
                *v = (*v as f64 + rng.sample(noise)).clamp(0.0, 1.0) as f32;
            }
        }
        let name = format!("{i:06}.png");
        let degraded_path = Path::new("degraded").join(&name);
        let clean_path = clean_sub.join(&name);
        y.save_png(&out_dir.join(&degraded_path))?;
        clean.save_png(&out_dir.join(&clean_path))?;
        sealed.push(ManifestRecord {
            clean_path: Some(clean_path),
            degraded_path,
            d_r0: p.d_r0,
            seed: p.seed,
        });
    }

    let header = |view| ManifestHeader {
        schema: MANIFEST_SCHEMA,
        domain,
        view,
        global_seed: seed,
        settings: settings.clone(),
        sim: sim.clone(),
    };
    let training_records = match domain {
        Domain::Synthetic => sealed.clone(),
        Domain::ProxyReal => sealed
            .iter()
            .map(|r| ManifestRecord {
                clean_path: None,
                ..r.clone()
            })
            .collect(),
    };
    let training = DatasetManifest {
        header: header(ManifestView::Training),
        records: training_records,
        root: out_dir.to_path_buf(),
    };
    training.write(&out_dir.join(MANIFEST_FILE))?;
    if domain == Domain::ProxyReal {
        let s = DatasetManifest {
            header: header(ManifestView::Sealed),
            records: sealed,
            root: out_dir.to_path_buf(),
        };
        s.write(&out_dir.join(SEALED_FILE))?;
    }
    Ok(training)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbsim::scenes::random_scene;

    fn clean_dir(n: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..n {
            random_scene(24, 24, i as u64)
                .save_png(&dir.path().join(format!("img{i}.png")))
                .unwrap();
        }
        dir
    }

    #[test]
    fn synthetic_records_all_have_clean_paths() {
        let src = clean_dir(3);
        let out = tempfile::tempdir().unwrap();
        let m = build_dataset(src.path(), out.path(), 10, Domain::Synthetic, 5, &SimConfig::default()).unwrap();
        assert_eq!(m.records.len(), 10);
        assert!(m.records.iter().all(|r| r.clean_path.is_some()));
        assert!(m.records.iter().all(|r| (0.5..=2.0).contains(&r.d_r0)));
        let back = DatasetManifest::read(&out.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn proxy_real_training_view_is_unpaired() {
        let src = clean_dir(2);
        let out = tempfile::tempdir().unwrap();
        let m = build_dataset(src.path(), out.path(), 10, Domain::ProxyReal, 5, &SimConfig::default()).unwrap();
        assert!(m.records.iter().all(|r| r.clean_path.is_none()));
        let text = fs::read_to_string(out.path().join(MANIFEST_FILE)).unwrap();
        assert!(!text.contains("clean_path"));
        let sealed = DatasetManifest::read(&out.path().join(SEALED_FILE)).unwrap();
        assert_eq!(sealed.records.len(), 10);
        for r in &sealed.records {
            assert!(sealed.resolve(r.clean_path.as_ref().unwrap()).is_file());
            assert!(sealed.resolve(&r.degraded_path).is_file());
            assert!((2.0..=3.0).contains(&r.d_r0));
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_manifests() {
        let src = clean_dir(2);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for out in [&a, &b] {
            build_dataset(src.path(), out.path(), 4, Domain::Synthetic, 9, &SimConfig::default()).unwrap();
        }
        let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
        assert_eq!(read(&a, MANIFEST_FILE), read(&b, MANIFEST_FILE));
        assert_eq!(read(&a, "degraded/000003.png"), read(&b, "degraded/000003.png"));
    }

    #[test]
    fn stored_seed_regenerates_fields() {
        let src = clean_dir(1);
        let out = tempfile::tempdir().unwrap();
        let m = build_dataset(src.path(), out.path(), 2, Domain::Synthetic, 1, &SimConfig::default()).unwrap();
        let p = m.params_for(1, 24, 24).unwrap();
        let clean = Frame::load_png(&m.resolve(m.records[1].clean_path.as_ref().unwrap())).unwrap();
        let mut y = degrade(&clean, &p, &SimConfig::default()).unwrap();
        y.quantize_8bit();
        let stored = Frame::load_png(&m.resolve(&m.records[1].degraded_path)).unwrap();
        assert_eq!(y, stored);
    }

    #[test]
    fn empty_clean_dir_is_an_io_error() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = build_dataset(src.path(), out.path(), 1, Domain::Synthetic, 0, &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
