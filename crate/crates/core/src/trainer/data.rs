//! In-memory training sets and deterministic batch assembly.
//!
//! Sample `k` of epoch `e` is a pure function of `(seed, e, k)`: its index
//! comes from a per-epoch permutation and its augmentation from a stream
//! keyed by `(seed, e, k)`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::rng::rng_for;
use crate::turbsim::{fields_to_map, DatasetManifest};

use super::augment::AugmentOp;

const TAG_TEACHER: u64 = 0x7465;
const TAG_STUDENT: u64 = 0x7374;
const TAG_PERM: u64 = 1;
const TAG_AUG: u64 = 2;

/// Clean/degraded pairs with the per-pixel degradation fields (tilt
/// magnitude, blur sigma) that produced them.
#[derive(Clone, Debug, Default)]
pub struct PairedSet {
    pub clean: Vec<Frame>,
    pub degraded: Vec<Frame>,
    pub fields: Vec<Frame>,
}

/// Degraded-only frames; nothing here can hold a clean frame.
#[derive(Clone, Debug, Default)]
pub struct DegradedSet {
    pub degraded: Vec<Frame>,
}

impl PairedSet {
    pub fn load(manifest: &Path, limit: usize) -> Result<Self> {
        let m = DatasetManifest::read(manifest)?;
        let n = if limit == 0 { m.records.len() } else { limit.min(m.records.len()) };
        let mut set = PairedSet::default();
        for i in 0..n {
            let r = &m.records[i];
            let clean_rel = r.clean_path.as_ref().ok_or_else(|| Error::Format {
                path: manifest.to_path_buf(),
                message: format!("record {i} has no clean frame; a paired manifest is required"),
            })?;
            let clean = Frame::load_png(&m.resolve(clean_rel))?;
            let degraded = Frame::load_png(&m.resolve(&r.degraded_path))?;
            if !clean.same_shape(&degraded) {
                return Err(Error::Format {
                    path: manifest.to_path_buf(),
                    message: format!("record {i}: clean and degraded shapes differ"),
                });
            }
            let p = m.params_for(i, clean.height(), clean.width())?;
            let mut fields = p.tilt_magnitude();
            fields.extend_from_slice(&p.sigma);
            set.fields.push(Frame::new(2, p.height, p.width, fields)?);
            set.clean.push(clean);
            set.degraded.push(degraded);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

impl DegradedSet {
    /// Reads only the degraded frames of a manifest.
    pub fn load(manifest: &Path, limit: usize) -> Result<Self> {
        let m = DatasetManifest::read(manifest)?;
        let n = if limit == 0 { m.records.len() } else { limit.min(m.records.len()) };
        let degraded = m.records[..n]
            .iter()
            .map(|r| Frame::load_png(&m.resolve(&r.degraded_path)))
            .collect::<Result<_>>()?;
        Ok(Self { degraded })
    }

    pub fn len(&self) -> usize {
        self.degraded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degraded.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TeacherBatch {
    pub clean: Tensor,
    pub degraded: Tensor,
    /// Degradation map at latent resolution, `N×2×H/2×W/2`.
    pub phi: Tensor,
}

#[derive(Clone, Debug)]
pub struct StudentBatch {
    pub degraded: Tensor,
}

/// Dataset index and augmentation of sample slot `k` in epoch `e`.
fn slot(seed: u64, tag: u64, n: usize, epoch: usize, k: usize) -> (usize, u64) {
    let pass = k / n;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[tag, TAG_PERM, epoch as u64, pass as u64]));
    (order[k % n], rng_seed_path(seed, tag, epoch, k))
}

fn rng_seed_path(seed: u64, tag: u64, epoch: usize, k: usize) -> u64 {
    crate::rng::derive_seed(seed, &[tag, TAG_AUG, epoch as u64, k as u64])
}

fn batch_slots(n: usize, batch: usize, iter_in_epoch: usize) -> Result<std::ops::Range<usize>> {
    if n == 0 || batch == 0 {
        return Err(Error::param("cannot draw a batch from an empty set"));
    }
    Ok(iter_in_epoch * batch..(iter_in_epoch + 1) * batch)
}

fn stack(frames: &[Frame], dtype: DType) -> Result<Tensor> {
    Frame::stack(&frames.iter().collect::<Vec<_>>(), dtype, &Device::Cpu)
}

pub fn teacher_batch(
    set: &PairedSet,
    seed: u64,
    epoch: usize,
    iter_in_epoch: usize,
    batch: usize,
    crop: usize,
    dtype: DType,
) -> Result<TeacherBatch> {
    let (mut clean, mut degraded, mut phi) = (Vec::new(), Vec::new(), Vec::new());
    for k in batch_slots(set.len(), batch, iter_in_epoch)? {
        let (i, aug_seed) = slot(seed, TAG_TEACHER, set.len(), epoch, k);
        let mut rng = rng_for(aug_seed, &[]);
        let (h, w) = (set.clean[i].height(), set.clean[i].width());
        let op = AugmentOp::sample(h, w, crop, &mut rng)?;
        clean.push(op.apply(&set.clean[i])?);
        degraded.push(op.apply(&set.degraded[i])?);
        let f = op.apply(&set.fields[i])?;
        let map = fields_to_map(f.plane(0), f.plane(1), crop, crop, (crop / 2, crop / 2))?;
        phi.push(Frame::new(2, map.height, map.width, map.data)?);
    }
    Ok(TeacherBatch {
        clean: stack(&clean, dtype)?,
        degraded: stack(&degraded, dtype)?,
        phi: stack(&phi, dtype)?,
    })
}

pub fn student_batch(
    set: &DegradedSet,
    seed: u64,
    epoch: usize,
    iter_in_epoch: usize,
    batch: usize,
    crop: usize,
    dtype: DType,
) -> Result<StudentBatch> {
    let mut degraded = Vec::new();
    for k in batch_slots(set.len(), batch, iter_in_epoch)? {
        let (i, aug_seed) = slot(seed, TAG_STUDENT, set.len(), epoch, k);
        let f = &set.degraded[i];
        let op = AugmentOp::sample(f.height(), f.width(), crop, &mut rng_for(aug_seed, &[]))?;
        degraded.push(op.apply(f)?);
    }
    Ok(StudentBatch {
        degraded: stack(&degraded, dtype)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbsim::scenes::random_scene;
    use crate::turbsim::{build_dataset, Domain};

    fn paired(n: usize) -> PairedSet {
        let mut s = PairedSet::default();
        for i in 0..n {
            let f = random_scene(40, 40, i as u64);
            s.degraded.push(f.clone());
            s.fields.push(Frame::filled(2, 40, 40, i as f32));
            s.clean.push(f);
        }
        s
    }

    #[test]
    fn batches_are_pure_functions_of_seed_epoch_slot() {
        let s = paired(5);
        let a = teacher_batch(&s, 3, 1, 2, 4, 32, DType::F32).unwrap();
        let b = teacher_batch(&s, 3, 1, 2, 4, 32, DType::F32).unwrap();
        let c = teacher_batch(&s, 3, 2, 2, 4, 32, DType::F32).unwrap();
        let v = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v(&a.clean), v(&b.clean));
        assert_ne!(v(&a.clean), v(&c.clean));
        assert_eq!(a.clean.dims(), &[4, 3, 32, 32]);
        assert_eq!(a.phi.dims(), &[4, 2, 16, 16]);
        // Identity pairs stay identical under the shared transform.
        assert_eq!(v(&a.clean), v(&a.degraded));
    }

    #[test]
    fn one_epoch_visits_every_sample_once() {
        let s = paired(6);
        let mut seen = Vec::new();
        for j in 0..3 {
            let b = teacher_batch(&s, 9, 0, j, 2, 32, DType::F32).unwrap();
            // Field frames are filled with the sample index.
            let phi = b.phi.to_dtype(DType::F64).unwrap();
            for n in 0..2 {
                let v = phi.get(n).unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap();
                seen.push(v.round() as usize);
            }
        }
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn student_loading_never_touches_clean_frames() {
        let dir = tempfile::tempdir().unwrap();
        let clean_dir = dir.path().join("clean");
        std::fs::create_dir_all(&clean_dir).unwrap();
        for i in 0..3 {
            random_scene(32, 32, i).save_png(&clean_dir.join(format!("{i}.png"))).unwrap();
        }
        let out = dir.path().join("synthetic");
        build_dataset(&clean_dir, &out, 3, Domain::Synthetic, 1, &Default::default()).unwrap();
        // Deleting the clean frames breaks the paired loader but not the degraded one.
        let manifest = DatasetManifest::read(&out.join("manifest.jsonl")).unwrap();
        for r in &manifest.records {
            std::fs::remove_file(manifest.resolve(r.clean_path.as_ref().unwrap())).unwrap();
        }
        assert!(PairedSet::load(&out.join("manifest.jsonl"), 0).is_err());
        let s = DegradedSet::load(&out.join("manifest.jsonl"), 0).unwrap();
        assert_eq!(s.len(), 3);
    }
}
