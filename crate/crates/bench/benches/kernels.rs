use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use turbda_bench::{dataset, toy_config, uniform};
use turbda_core::iqa::{piqe, ssim};
use turbda_core::nets::{conv2d, ddf_apply};
use turbda_core::trainer::{TrainMode, Trainer};
use turbda_core::turbsim::scenes::random_scene;
use turbda_core::turbsim::{degrade, SimConfig, TurbulenceParams};

fn ops(c: &mut Criterion) {
    let mut g = c.benchmark_group("ops");
    for side in [32usize, 64] {
        let x = uniform(&[8, 16, side, side]);
        let w = uniform(&[16, 16, 3, 3]);
        g.bench_with_input(BenchmarkId::new("conv2d_16x16", side), &side, |b, _| {
            b.iter(|| conv2d(&x, &w, 1, 1).unwrap())
        });
        let s = uniform(&[8, 9, side, side]);
        let ch = uniform(&[8, 16, 9]);
        g.bench_with_input(BenchmarkId::new("ddf_apply_k3", side), &side, |b, _| {
            b.iter(|| ddf_apply(&x, &s, &ch, 3).unwrap())
        });
    }
    let x = uniform(&[8, 16, 32, 32]);
    let w = candle_core::Var::from_tensor(&uniform(&[16, 16, 3, 3])).unwrap();
    g.bench_function("conv2d_backward_32", |b| {
        b.iter(|| conv2d(&x, &w, 1, 1).unwrap().sum_all().unwrap().backward().unwrap())
    });
    g.finish();
}

fn simulator(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let mut g = c.benchmark_group("turbsim");
    for side in [64usize, 160] {
        let x = random_scene(side, side, 0);
        let p = TurbulenceParams::generate(side, side, 1.0, 16.0, 3, &cfg).unwrap();
        g.bench_with_input(BenchmarkId::new("params", side), &side, |b, _| {
            b.iter(|| TurbulenceParams::generate(side, side, 1.0, 16.0, 3, &cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("degrade", side), &side, |b, _| b.iter(|| degrade(&x, &p, &cfg).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let a = random_scene(160, 160, 1);
    let b2 = random_scene(160, 160, 2);
    let mut g = c.benchmark_group("iqa");
    g.bench_function("piqe_160", |b| b.iter(|| piqe(&a).unwrap()));
    g.bench_function("ssim_160", |b| b.iter(|| ssim(&a, &b2).unwrap()));
    g.finish();
}

fn training(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), "teacher", 16, turbda_core::turbsim::Domain::Synthetic).unwrap();
    dataset(dir.path(), "student", 16, turbda_core::turbsim::Domain::ProxyReal).unwrap();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    for mode in [TrainMode::SynAtm, TrainMode::RealAtm] {
        let mut t = Trainer::new(toy_config(dir.path(), mode)).unwrap();
        g.bench_function(format!("iteration_{mode:?}"), |b| b.iter(|| t.iterate().unwrap()));
    }
    g.finish();
}

criterion_group!(benches, ops, simulator, metrics, training);
criterion_main!(benches);
