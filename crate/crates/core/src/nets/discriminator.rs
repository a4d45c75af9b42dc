use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{join, NamedVar, SpectralConv};
use super::ops::{leaky_relu, sigmoid};
use super::{Mode, NetConfig};

pub const DISC_LAYERS: usize = 11;
/// Zero-based indices of the layers both roles share.
pub const SHARED_LAYERS: std::ops::Range<usize> = 5..9;
pub const MIN_DISC_INPUT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

/// Output width and stride of each of the eleven layers.
fn layout(d: usize) -> [(usize, usize); DISC_LAYERS] {
    [
        (d, 2),
        (d, 1),
        (2 * d, 2),
        (2 * d, 1),
        (4 * d, 2),
        (4 * d, 1),
        (4 * d, 2),
        (4 * d, 1),
        (4 * d, 2),
        (4 * d, 1),
        (1, 1),
    ]
}

fn build<R: Rng>(idx: impl Iterator<Item = usize>, d: usize, k: usize, dtype: DType, rng: &mut R) -> Result<Vec<SpectralConv>> {
    let plan = layout(d);
    idx.map(|i| {
        let cin = if i == 0 { 3 } else { plan[i - 1].0 };
        let (cout, stride) = plan[i];
        SpectralConv::new(cin, cout, k, stride, dtype, rng)
    })
    .collect()
}

/// Teacher and student discriminators. Layers 6–9 (indices 5..9) are a
/// single set of parameters referenced by both.
#[derive(Debug)]
pub struct DiscriminatorPair {
    teacher: Vec<SpectralConv>,
    student: Vec<SpectralConv>,
    shared: Vec<SpectralConv>,
    slope: f64,
}

fn private_index(i: usize) -> usize {
    if i < SHARED_LAYERS.start {
        i
    } else {
        i - SHARED_LAYERS.len()
    }
}

impl DiscriminatorPair {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (d, k) = (cfg.disc_channels, cfg.kernel_size);
        let private = || (0..DISC_LAYERS).filter(|i| !SHARED_LAYERS.contains(i));
        let teacher = build(private(), d, k, dtype, rng)?;
        let student = build(private(), d, k, dtype, rng)?;
        let shared = build(SHARED_LAYERS, d, k, dtype, rng)?;
        Ok(Self {
            teacher,
            student,
            shared,
            slope: cfg.leaky_slope,
        })
    }

    /// Layer `i` (zero-based) as seen by `role`.
    pub fn layer(&self, role: Role, i: usize) -> &SpectralConv {
        if SHARED_LAYERS.contains(&i) {
            return &self.shared[i - SHARED_LAYERS.start];
        }
        let own = match role {
            Role::Teacher => &self.teacher,
            Role::Student => &self.student,
        };
        &own[private_index(i)]
    }

    pub fn layers(&self, role: Role) -> impl Iterator<Item = &SpectralConv> {
        (0..DISC_LAYERS).map(move |i| self.layer(role, i))
    }

    /// Per-patch probability map `N×1×h×w`.
    pub fn discriminate(&self, x: &Tensor, role: Role, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = x
            .dims4()
            .map_err(|_| Error::param(format!("discriminate: expected N×3×H×W, got {:?}", x.dims())))?;
        if c != 3 {
            return Err(Error::param(format!("discriminate: expected 3 channels, got {c}")));
        }
        if h < MIN_DISC_INPUT || w < MIN_DISC_INPUT {
            return Err(Error::param(format!(
                "discriminate: input {h}×{w} is smaller than {MIN_DISC_INPUT}×{MIN_DISC_INPUT}"
            )));
        }
        let mut t = x.clone();
        for i in 0..DISC_LAYERS {
            t = self.layer(role, i).forward(&t, mode)?;
            if i + 1 < DISC_LAYERS {
                t = leaky_relu(&t, self.slope)?;
            }
        }
        sigmoid(&t)
    }

    /// Parameters reachable from `role`, named by layer position.
    pub fn role_vars(&self, role: Role) -> Vec<NamedVar> {
        (0..DISC_LAYERS)
            .flat_map(|i| self.layer(role, i).vars(&format!("layer{}", i + 1)))
            .collect()
    }

    /// Every distinct parameter once, under storage names.
    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        let mut v = Vec::new();
        for (role, own) in [(Role::Teacher, &self.teacher), (Role::Student, &self.student)] {
            let idx = (0..DISC_LAYERS).filter(|i| !SHARED_LAYERS.contains(i));
            for (layer, i) in own.iter().zip(idx) {
                v.extend(layer.vars(&join(prefix, &format!("{}.layer{}", role.name(), i + 1))));
            }
        }
        for (layer, i) in self.shared.iter().zip(SHARED_LAYERS) {
            v.extend(layer.vars(&join(prefix, &format!("shared.layer{}", i + 1))));
        }
        v
    }

    /// Power-iteration vectors keyed like [`DiscriminatorPair::vars`].
    pub fn sn_states(&self, prefix: &str) -> Vec<(String, &SpectralConv)> {
        let mut v = Vec::new();
        for (role, own) in [(Role::Teacher, &self.teacher), (Role::Student, &self.student)] {
            let idx = (0..DISC_LAYERS).filter(|i| !SHARED_LAYERS.contains(i));
            for (layer, i) in own.iter().zip(idx) {
                v.push((join(prefix, &format!("{}.layer{}.u", role.name(), i + 1)), layer));
            }
        }
        for (layer, i) in self.shared.iter().zip(SHARED_LAYERS) {
            v.push((join(prefix, &format!("shared.layer{}.u", i + 1)), layer));
        }
        v
    }
}
