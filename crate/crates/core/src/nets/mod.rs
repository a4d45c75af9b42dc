//! Learnable networks: the shared generator, the partially shared
//! discriminator pair and the reproduce net.

mod discriminator;
mod generator;
mod layers;
pub mod ops;

use std::collections::HashSet;

use candle_core::{DType, TensorId};
use serde::{Deserialize, Serialize};

pub use discriminator::{DiscriminatorPair, Role, DISC_LAYERS, MIN_DISC_INPUT, SHARED_LAYERS};
pub use generator::{
    sample_latent, zero_latent, DdfBlock, DdfTrunk, Decoder, Encoder, Generator, LatentCode, LatentPosterior,
    ParamEstimator, ReproduceNet, LOGVAR_CLAMP,
};
pub use layers::{Conv, NamedVar, SpectralConv};
pub use ops::{conv2d, ddf_apply};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Training draws stochastic latents and advances spectral-norm power
/// iterations; test mode does neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    pub latent_channels: usize,
    pub kernel_size: usize,
    pub ddf_blocks: usize,
    pub ddf_kernel: usize,
    /// Channel reduction inside each DDF bottleneck.
    pub ddf_reduction: usize,
    pub disc_channels: usize,
    pub rnet_channels: usize,
    pub leaky_slope: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            latent_channels: 16,
            kernel_size: 3,
            ddf_blocks: 8,
            ddf_kernel: 3,
            ddf_reduction: 4,
            disc_channels: 64,
            rnet_channels: 32,
            leaky_slope: 0.2,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("latent_channels", self.latent_channels),
            ("ddf_reduction", self.ddf_reduction),
            ("disc_channels", self.disc_channels),
            ("rnet_channels", self.rnet_channels),
        ] {
            if v == 0 {
                problems.push(format!("net.{name} must be positive"));
            }
        }
        for (name, v) in [("kernel_size", self.kernel_size), ("ddf_kernel", self.ddf_kernel)] {
            if v % 2 == 0 {
                problems.push(format!("net.{name} must be odd, got {v}"));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            problems.push(format!("net.leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        problems
    }
}

/// All learnable state of the teacher-student system.
#[derive(Debug)]
pub struct Networks {
    pub cfg: NetConfig,
    pub dtype: DType,
    pub generator: Generator,
    pub discriminators: DiscriminatorPair,
    pub rnet: ReproduceNet,
}

impl Networks {
    pub fn new(cfg: &NetConfig, dtype: DType, seed: u64) -> Result<Self> {
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Self {
            cfg: cfg.clone(),
            dtype,
            generator: Generator::new(cfg, dtype, &mut rng_for(seed, &[0x6e65, 1]))?,
            discriminators: DiscriminatorPair::new(cfg, dtype, &mut rng_for(seed, &[0x6e65, 2]))?,
            rnet: ReproduceNet::new(cfg, dtype, &mut rng_for(seed, &[0x6e65, 3]))?,
        })
    }

    /// Parameters optimized by the generation objective.
    pub fn generation_vars(&self) -> Vec<NamedVar> {
        let mut v = self.generator.vars("gen");
        v.extend(self.rnet.vars("rnet"));
        v
    }

    /// Parameters optimized by the discrimination objective.
    pub fn discriminator_vars(&self) -> Vec<NamedVar> {
        self.discriminators.vars("disc")
    }

    pub fn all_vars(&self) -> Vec<NamedVar> {
        let mut v = self.generation_vars();
        v.extend(self.discriminator_vars());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.all_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    FullyShared,
    /// One-based layer numbers referenced by both roles.
    PartiallyShared(Vec<usize>),
    Private,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroupSharing {
    pub group: String,
    pub sharing: Sharing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SharingReport {
    pub groups: Vec<GroupSharing>,
}

impl SharingReport {
    pub fn get(&self, group: &str) -> Option<&Sharing> {
        self.groups.iter().find(|g| g.group == group).map(|g| &g.sharing)
    }
}

fn ids(vars: &[NamedVar]) -> Vec<TensorId> {
    vars.iter().map(|(_, v)| v.id()).collect()
}

fn classify(teacher: &[TensorId], student: &[TensorId]) -> Sharing {
    let s: HashSet<_> = student.iter().collect();
    if teacher.len() == student.len() && teacher.iter().all(|t| s.contains(t)) {
        Sharing::FullyShared
    } else {
        Sharing::Private
    }
}

/// Compares the storage reached from the teacher and student paths.
///
/// Both paths run the same generator and reproduce net objects; the
/// discriminator is resolved per role, layer by layer.
pub fn sharing_report(gen: &Generator, disc: &DiscriminatorPair, rnet: &ReproduceNet) -> SharingReport {
    let mut groups = Vec::new();
    let path_ids = |g: &Generator| ids(&g.vars(""));
    groups.push(GroupSharing {
        group: "generator".into(),
        sharing: classify(&path_ids(gen), &path_ids(gen)),
    });
    let mut shared_layers = Vec::new();
    let mut per_layer = Vec::new();
    for i in 0..DISC_LAYERS {
        let t = ids(&disc.layer(Role::Teacher, i).vars(""));
        let s = ids(&disc.layer(Role::Student, i).vars(""));
        let sharing = classify(&t, &s);
        if sharing == Sharing::FullyShared {
            shared_layers.push(i + 1);
        }
        per_layer.push(GroupSharing {
            group: format!("discriminator.layer{}", i + 1),
            sharing,
        });
    }
    groups.push(GroupSharing {
        group: "discriminator".into(),
        sharing: match shared_layers.len() {
            0 => Sharing::Private,
            DISC_LAYERS => Sharing::FullyShared,
            _ => Sharing::PartiallyShared(shared_layers),
        },
    });
    groups.extend(per_layer);
    groups.push(GroupSharing {
        group: "rnet".into(),
        sharing: classify(&ids(&rnet.vars("")), &ids(&rnet.vars(""))),
    });
    SharingReport { groups }
}

#[cfg(test)]
mod tests;
