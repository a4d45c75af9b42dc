//! Simulate, train, checkpoint, restore and score through the public API.

use std::path::Path;

use turbda_core::iqa::evaluate;
use turbda_core::nets::NetConfig;
use turbda_core::trainer::{
    load_checkpoint, restore_frame, DataConfig, TrainConfig, TrainMode, Trainer, CHECKPOINT_DIR, FINAL_CHECKPOINT,
    METRICS_LOG, TRAIN_LOG,
};
use turbda_core::turbsim::scenes::random_scene;
use turbda_core::turbsim::{build_dataset, DatasetManifest, Domain, SimConfig, MANIFEST_FILE, SEALED_FILE};
use turbda_core::{Error, Frame};

fn dataset(root: &Path, name: &str, n: usize, domain: Domain, seed: u64) {
    let clean = root.join(format!("clean_{name}"));
    std::fs::create_dir_all(&clean).unwrap();
    for i in 0..n {
        random_scene(36, 44, seed * 100 + i as u64).save_png(&clean.join(format!("{i}.png"))).unwrap();
    }
    build_dataset(&clean, &root.join(name), n, domain, seed, &SimConfig::default()).unwrap();
}

fn config(root: &Path) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::RealAtm,
        epochs: 2,
        iters_per_epoch: 3,
        batch_size: 2,
        crop_size: 32,
        net: NetConfig {
            base_channels: 8,
            latent_channels: 4,
            ddf_blocks: 1,
            ddf_reduction: 2,
            disc_channels: 4,
            rnet_channels: 8,
            ..NetConfig::default()
        },
        data: DataConfig {
            teacher_manifest: Some(root.join("teacher").join(MANIFEST_FILE)),
            student_manifest: Some(root.join("student").join(MANIFEST_FILE)),
            validation_manifest: Some(root.join("val").join(MANIFEST_FILE)),
            student_validation_manifest: Some(root.join("student").join(MANIFEST_FILE)),
            ..DataConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn end_to_end_on_tiny_data() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    dataset(root, "teacher", 4, Domain::Synthetic, 1);
    dataset(root, "val", 2, Domain::Synthetic, 2);
    dataset(root, "student", 3, Domain::ProxyReal, 3);

    let student = DatasetManifest::read(&root.join("student").join(MANIFEST_FILE)).unwrap();
    assert!(student.records.iter().all(|r| r.clean_path.is_none()));

    let out = root.join("run");
    let summary = Trainer::new(config(root)).unwrap().train(&out).unwrap();
    assert_eq!(summary.iterations, 6);
    assert_eq!((summary.gen_steps, summary.dis_steps), (6, 6));
    assert_eq!(summary.validation.len(), 2);
    let v = &summary.validation[1];
    assert_eq!((v.teacher_count, v.student_count), (2, 3));
    assert!(v.psnr_restored.unwrap().is_finite() && v.piqe_restored.unwrap().is_finite());
    assert_eq!(std::fs::read_to_string(out.join(TRAIN_LOG)).unwrap().lines().count(), 6);
    assert_eq!(std::fs::read_to_string(out.join(METRICS_LOG)).unwrap().lines().count(), 2);

    let ckpt = out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    let (cfg, state) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(cfg, config(root));
    assert_eq!(state.iteration, 6);

    // Restore the sealed target-domain frames and score them against their references.
    let sealed = DatasetManifest::read(&root.join("student").join(SEALED_FILE)).unwrap();
    let (restored, refs) = (root.join("restored"), root.join("refs"));
    std::fs::create_dir_all(&restored).unwrap();
    std::fs::create_dir_all(&refs).unwrap();
    for r in &sealed.records {
        let name = r.degraded_path.file_name().unwrap();
        let y = Frame::load_png(&sealed.resolve(&r.degraded_path)).unwrap();
        let x = restore_frame(&state.nets.generator, &y, cfg.precision.dtype()).unwrap();
        assert_eq!((x.height(), x.width()), (36, 44));
        x.save_png(&restored.join(name)).unwrap();
        std::fs::copy(sealed.resolve(r.clean_path.as_ref().unwrap()), refs.join(name)).unwrap();
    }
    let report = evaluate(&restored, Some(&refs)).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.errors.is_empty());
    assert!(report.mean_psnr.unwrap() > 10.0);
    assert!((0.0..=1.0).contains(&report.mean_ssim.unwrap()));
}

#[test]
fn bad_configs_are_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.crop_size = 31;
    cfg.data.student_manifest = None;
    match Trainer::new(cfg) {
        Err(Error::Config(problems)) => {
            let text = problems.join("\n");
            assert!(text.contains("crop_size"), "{text}");
            assert!(text.contains("student_manifest"), "{text}");
        }
        Err(e) => panic!("expected a config error, got {e}"),
        Ok(_) => panic!("invalid config accepted"),
    }
}
