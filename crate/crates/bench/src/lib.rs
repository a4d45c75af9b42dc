//! Fixtures shared by the benchmarks.

use std::path::Path;

use candle_core::{Device, Tensor};
use turbda_core::nets::NetConfig;
use turbda_core::trainer::{DataConfig, TrainConfig, TrainMode};
use turbda_core::turbsim::scenes::random_scene;
use turbda_core::turbsim::{build_dataset, Domain, SimConfig, MANIFEST_FILE};
use turbda_core::Result;

pub fn uniform(shape: &[usize]) -> Tensor {
    Tensor::rand(0f64, 1f64, shape, &Device::Cpu).expect("cpu tensor")
}

/// Writes `n` 64×64 scenes and degrades them into `<root>/<name>`.
pub fn dataset(root: &Path, name: &str, n: usize, domain: Domain) -> Result<()> {
    let clean = root.join(format!("clean_{name}"));
    std::fs::create_dir_all(&clean).expect("scratch directory");
    for i in 0..n {
        random_scene(64, 64, i as u64).save_png(&clean.join(format!("{i:03}.png")))?;
    }
    build_dataset(&clean, &root.join(name), n, domain, 1, &SimConfig::default())?;
    Ok(())
}

/// The configuration used by the toy experiments, over datasets in `root`.
pub fn toy_config(root: &Path, mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        batch_size: 8,
        crop_size: 32,
        net: NetConfig {
            base_channels: 16,
            latent_channels: 8,
            ddf_blocks: 4,
            ddf_reduction: 4,
            disc_channels: 8,
            rnet_channels: 16,
            ..NetConfig::default()
        },
        data: DataConfig {
            teacher_manifest: Some(root.join("teacher").join(MANIFEST_FILE)),
            student_manifest: Some(root.join("student").join(MANIFEST_FILE)),
            ..DataConfig::default()
        },
        ..TrainConfig::default()
    }
}
