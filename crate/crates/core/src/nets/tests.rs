use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};

use super::*;
use crate::testutil::{max_gradient_error, rand_tensor, rand_var};

fn tiny() -> NetConfig {
    NetConfig {
        base_channels: 4,
        latent_channels: 2,
        ddf_blocks: 1,
        ddf_reduction: 2,
        disc_channels: 2,
        rnet_channels: 3,
        ..NetConfig::default()
    }
}

fn small() -> NetConfig {
    NetConfig {
        base_channels: 8,
        latent_channels: 16,
        ddf_blocks: 2,
        disc_channels: 4,
        rnet_channels: 4,
        ..NetConfig::default()
    }
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn weighted_sum(t: &Tensor, seed: u64) -> crate::Result<Tensor> {
    let w = rand_tensor(t.dims(), 0.5, 1.5, seed);
    Ok((t * w)?.sum_all()?)
}

fn var_values(vars: &[NamedVar]) -> Vec<Vec<f64>> {
    vars.iter().map(|(_, v)| values(v)).collect()
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn default_config_shapes() {
    let nets = Networks::new(&NetConfig::default(), DType::F32, 0).unwrap();
    let g = &nets.generator;
    for (side, lat) in [(160usize, 80usize), (64, 32)] {
        let y = Tensor::full(0.5f32, (1, 3, side, side), &Device::Cpu).unwrap();
        let post = g.encode(&y).unwrap();
        assert_eq!(post.mu.dims(), [1, 16, lat, lat]);
        assert_eq!(post.logvar.dims(), [1, 16, lat, lat]);
        let c = LatentCode { c: post.mu };
        assert_eq!(g.decode(&c).unwrap().dims(), [1, 3, side, side]);
        assert_eq!(g.estimate_params(&c).unwrap().dims(), [1, 2, lat, lat]);
    }
    let y = Tensor::full(0.5f32, (1, 3, 64, 64), &Device::Cpu).unwrap();
    let c = zero_latent(1, &nets.cfg, 64, 64, DType::F32).unwrap();
    assert_eq!(g.restore(&y, &c).unwrap().dims(), [1, 3, 64, 64]);
    for (side, out) in [(160usize, 5usize), (64, 2)] {
        let x = Tensor::full(0.5f32, (1, 3, side, side), &Device::Cpu).unwrap();
        let d = nets.discriminators.discriminate(&x, Role::Teacher, Mode::Test).unwrap();
        assert_eq!(d.dims(), [1, 1, out, out]);
    }
}

#[test]
fn encode_rejects_odd_dims() {
    let nets = Networks::new(&tiny(), DType::F64, 0).unwrap();
    let y = Tensor::zeros((1, 3, 9, 8), DType::F64, &Device::Cpu).unwrap();
    assert!(matches!(nets.generator.encode(&y), Err(Error::Param(_))));
}

#[test]
fn discriminator_rejects_undersized_input() {
    let nets = Networks::new(&tiny(), DType::F64, 0).unwrap();
    let x = Tensor::zeros((1, 3, 31, 64), DType::F64, &Device::Cpu).unwrap();
    assert!(nets.discriminators.discriminate(&x, Role::Student, Mode::Test).is_err());
}

#[test]
fn zero_weight_encoder_emits_bias() {
    let g = Generator::new(&tiny(), DType::F64, &mut rng(1)).unwrap();
    let last = &g.encoder.convs[4];
    for c in &g.encoder.convs {
        c.zero_().unwrap();
    }
    last.bias.set(&Tensor::new(&[0.3f64, -0.2, 1.5, -20.0], &Device::Cpu).unwrap()).unwrap();
    let y = rand_tensor(&[2, 3, 8, 6], 0.0, 1.0, 4);
    let post = g.encode(&y).unwrap();
    let mu = values(&post.mu);
    let lv = values(&post.logvar);
    assert!(mu[..12].iter().all(|v| *v == 0.3) && mu[12..24].iter().all(|v| *v == -0.2));
    assert!(lv[..12].iter().all(|v| *v == 1.5));
    assert!(lv[12..24].iter().all(|v| *v == -LOGVAR_CLAMP), "logvar is clamped");
}

#[test]
fn zero_weight_decoder_and_estimator_emit_bias() {
    let g = Generator::new(&tiny(), DType::F64, &mut rng(2)).unwrap();
    g.decoder.convs.iter().for_each(|c| c.zero_().unwrap());
    g.decoder.convs[4].bias.set(&Tensor::new(&[0.1f64, 0.2, 0.3], &Device::Cpu).unwrap()).unwrap();
    g.estimator.convs.iter().for_each(|c| c.zero_().unwrap());
    g.estimator.convs[1].bias.set(&Tensor::new(&[-1.0f64, 2.0], &Device::Cpu).unwrap()).unwrap();
    let c = LatentCode { c: rand_tensor(&[1, 2, 3, 4], -1.0, 1.0, 5) };
    let img = values(&g.decode(&c).unwrap());
    assert_eq!(img.len(), 3 * 6 * 8);
    for (ch, want) in [0.1, 0.2, 0.3].iter().enumerate() {
        assert!(img[ch * 48..(ch + 1) * 48].iter().all(|v| v == want));
    }
    let map = values(&g.estimate_params(&c).unwrap());
    let sp = |x: f64| (1.0 + x.exp()).ln();
    assert!(map[..12].iter().all(|v| (v - sp(-1.0)).abs() < 1e-15));
    assert!(map[12..].iter().all(|v| (v - sp(2.0)).abs() < 1e-15));
}

#[test]
fn zero_trunk_and_rnet_are_identity() {
    let nets = Networks::new(&tiny(), DType::F64, 3).unwrap();
    nets.generator.trunk.zero_().unwrap();
    nets.rnet.convs.iter().for_each(|c| c.zero_().unwrap());
    let y = rand_tensor(&[2, 3, 8, 8], 0.0, 1.0, 6);
    let c = LatentCode { c: rand_tensor(&[2, 2, 4, 4], -1.0, 1.0, 7) };
    assert_eq!(values(&nets.generator.restore(&y, &c).unwrap()), values(&y));
    assert_eq!(values(&nets.rnet.forward(&y).unwrap()), values(&y));
    let big = rand_tensor(&[1, 3, 10, 6], 0.0, 1.0, 9);
    assert_eq!(nets.rnet.forward(&big).unwrap().dims(), [1, 3, 10, 6]);
}

#[test]
fn restore_output_is_clipped() {
    let nets = Networks::new(&small(), DType::F32, 4).unwrap();
    let g = &nets.generator;
    for seed in 0..3 {
        let y = rand_tensor(&[1, 3, 16, 16], 0.0, 1.0, seed).to_dtype(DType::F32).unwrap();
        let c = LatentCode {
            c: (rand_tensor(&[1, 16, 8, 8], -1.0, 1.0, seed + 10) * 50.0).unwrap().to_dtype(DType::F32).unwrap(),
        };
        let out = values(&g.restore(&y, &c).unwrap());
        assert!(out.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn sampling_modes() {
    let mu = rand_tensor(&[1, 2, 3, 3], -1.0, 1.0, 1);
    let post = LatentPosterior {
        mu: mu.clone(),
        logvar: Tensor::full(-LOGVAR_CLAMP, (1, 2, 3, 3), &Device::Cpu).unwrap(),
    };
    let test = sample_latent(&post, Mode::Test, &mut rng(0)).unwrap();
    assert_eq!(values(&test.c), values(&mu));

    let eps_bound = 6.0 * (-5f64).exp();
    let train = sample_latent(&post, Mode::Train, &mut rng(0)).unwrap();
    for (c, m) in values(&train.c).iter().zip(values(&mu)) {
        assert!((c - m).abs() < eps_bound);
    }
    let again = sample_latent(&post, Mode::Train, &mut rng(0)).unwrap();
    assert_eq!(values(&train.c), values(&again.c));
    let other = sample_latent(&post, Mode::Train, &mut rng(1)).unwrap();
    assert_ne!(values(&train.c), values(&other.c));
}

#[test]
fn discriminator_outputs_are_probabilities() {
    let nets = Networks::new(&small(), DType::F32, 5).unwrap();
    for role in [Role::Teacher, Role::Student] {
        for seed in 0..3 {
            let x = rand_tensor(&[2, 3, 48, 40], 0.0, 1.0, seed).to_dtype(DType::F32).unwrap();
            let d = values(&nets.discriminators.discriminate(&x, role, Mode::Train).unwrap());
            assert!(d.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}

/// Direct evaluation of the dynamic filter, one output at a time.
#[allow(clippy::too_many_arguments)]
fn ddf_oracle(x: &[f64], s: &[f64], ch: &[f64], n: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let refl = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let mut i = i;
        while i < 0 || i >= len {
            if i < 0 {
                i = -i;
            }
            if i >= len {
                i = 2 * (len - 1) - i;
            }
        }
        i as usize
    };
    let mut out = vec![0.0; n * c * h * w];
    for b in 0..n {
        for cc in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let o = ((dy + r) * k as isize + dx + r) as usize;
                            let sy = refl(y as isize + dy, h);
                            let sx = refl(xx as isize + dx, w);
                            acc += s[((b * k * k + o) * h + y) * w + xx]
                                * ch[(b * c + cc) * k * k + o]
                                * x[((b * c + cc) * h + sy) * w + sx];
                        }
                    }
                    out[((b * c + cc) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn ddf_matches_brute_force_oracle() {
    let mut r = rng(42);
    for case in 0..20u64 {
        let (n, c, h, w, k) = if case < 10 {
            (1, 1, 4, 4, 3)
        } else {
            (r.random_range(1..3), r.random_range(1..4), r.random_range(2..7), r.random_range(2..7), [3, 5][case as usize % 2])
        };
        let x = rand_tensor(&[n, c, h, w], -1.0, 1.0, 100 + case);
        let s = rand_tensor(&[n, k * k, h, w], -1.0, 1.0, 200 + case);
        let ch = rand_tensor(&[n, c, k * k], -1.0, 1.0, 300 + case);
        let want = ddf_oracle(&values(&x), &values(&s), &values(&ch), n, c, h, w, k);
        for dtype in [DType::F64, DType::F32] {
            let got = values(
                &ddf_apply(
                    &x.to_dtype(dtype).unwrap(),
                    &s.to_dtype(dtype).unwrap(),
                    &ch.to_dtype(dtype).unwrap(),
                    k,
                )
                .unwrap(),
            );
            let scale = want.iter().fold(0f64, |m, v| m.max(v.abs()));
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() <= 1e-5 * scale.max(1e-12), "case {case} {dtype:?}: {g} vs {e}");
            }
        }
    }
}

#[test]
fn ddf_gradients_match_finite_differences() {
    let x = rand_var(&[2, 3, 5, 4], -1.0, 1.0, 1);
    let s = rand_var(&[2, 9, 5, 4], -1.0, 1.0, 2);
    let ch = rand_var(&[2, 3, 9], -1.0, 1.0, 3);
    let f = || weighted_sum(&ddf_apply(&x, &s, &ch, 3)?, 9);
    let err = max_gradient_error(&[x.clone(), s.clone(), ch.clone()], &f, 40, 0);
    assert!(err < 1e-6, "{err}");
}

fn var_list(v: &[NamedVar]) -> Vec<Var> {
    v.iter().map(|(_, v)| v.clone()).collect()
}

/// Moves biases off zero so no activation sits exactly on a ReLU kink.
fn jitter_biases(vars: &[NamedVar], seed: u64) {
    for (i, (name, v)) in vars.iter().enumerate() {
        if name.ends_with("bias") {
            v.set(&rand_tensor(v.dims(), -0.3, 0.3, seed + i as u64)).unwrap();
        }
    }
}

#[test]
fn gradient_check_encoder_decoder_estimator() {
    let g = Generator::new(&tiny(), DType::F64, &mut rng(7)).unwrap();
    jitter_biases(&g.vars(""), 70);
    let y = rand_var(&[1, 3, 8, 8], 0.0, 1.0, 11);
    let enc = || {
        let p = g.encode(&y)?;
        Ok((weighted_sum(&p.mu, 1)? + weighted_sum(&p.logvar, 2)?)?)
    };
    let mut vars = var_list(&g.vars("")[..10]);
    vars.push(y.clone());
    let err = max_gradient_error(&vars, &enc, 12, 1);
    assert!(err < 1e-3, "encoder {err}");

    let c = rand_var(&[1, 2, 4, 4], -1.0, 1.0, 12);
    let dec = || weighted_sum(&g.decode(&LatentCode { c: c.as_tensor().clone() })?, 3);
    let mut vars: Vec<Var> = g.decoder.convs.iter().flat_map(|cv| var_list(&cv.vars(""))).collect();
    vars.push(c.clone());
    let err = max_gradient_error(&vars, &dec, 12, 2);
    assert!(err < 1e-3, "decoder {err}");

    let est = || weighted_sum(&g.estimate_params(&LatentCode { c: c.as_tensor().clone() })?, 4);
    let mut vars: Vec<Var> = g.estimator.convs.iter().flat_map(|cv| var_list(&cv.vars(""))).collect();
    vars.push(c.clone());
    let err = max_gradient_error(&vars, &est, 12, 3);
    assert!(err < 1e-3, "estimator {err}");
}

#[test]
fn gradient_check_trunk() {
    let g = Generator::new(&tiny(), DType::F64, &mut rng(14)).unwrap();
    jitter_biases(&g.vars(""), 80);
    let y = rand_var(&[2, 3, 8, 8], 0.2, 0.8, 13);
    let c = rand_var(&[2, 2, 4, 4], -1.0, 1.0, 14);
    let f = || weighted_sum(&g.restore(&y, &LatentCode { c: c.as_tensor().clone() })?, 5);
    let mut vars = var_list(&g.trunk.vars(""));
    vars.push(y.clone());
    vars.push(c.clone());
    let err = max_gradient_error(&vars, &f, 8, 4);
    assert!(err < 1e-3, "trunk {err}");
    let grads = f().unwrap().backward().unwrap();
    for (name, v) in g.trunk.vars("") {
        let gv = values(grads.get(&v).unwrap());
        assert!(gv.iter().any(|x| *x != 0.0), "{name} receives no gradient");
    }
}

#[test]
fn gradient_check_discriminator() {
    let d = DiscriminatorPair::new(&tiny(), DType::F64, &mut rng(9)).unwrap();
    jitter_biases(&d.vars(""), 90);
    let x = rand_var(&[1, 3, 32, 32], 0.0, 1.0, 15);
    for role in [Role::Teacher, Role::Student] {
        let f = || weighted_sum(&d.discriminate(&x, role, Mode::Test)?, 6);
        let mut vars = var_list(&d.role_vars(role));
        vars.push(x.clone());
        let err = max_gradient_error(&vars, &f, 6, 5);
        assert!(err < 1e-3, "{role:?} discriminator {err}");
    }
}

#[test]
fn gradient_check_reproduce_through_generator() {
    let nets = Networks::new(&tiny(), DType::F64, 10).unwrap();
    jitter_biases(&nets.all_vars(), 100);
    let y = rand_var(&[1, 3, 8, 8], 0.2, 0.8, 16);
    let target = rand_tensor(&[1, 3, 8, 8], 0.2, 0.8, 17);
    let f = || {
        let post = nets.generator.encode(&y)?;
        let x_hat = nets.generator.restore(&y, &LatentCode { c: post.mu })?;
        let y_hat = nets.rnet.forward(&x_hat)?;
        Ok((y_hat - &target)?.sqr()?.mean_all()?)
    };
    let mut vars = var_list(&nets.rnet.vars(""));
    vars.extend(var_list(&nets.generator.trunk.vars("")[..6]));
    vars.extend(var_list(&nets.generator.encoder.convs[0].vars("")));
    vars.push(y.clone());
    let err = max_gradient_error(&vars, &f, 8, 6);
    assert!(err < 1e-3, "rm path {err}");
    let grads = f().unwrap().backward().unwrap();
    let trunk_grad = grads.get(&nets.generator.trunk.input.weight).expect("gradient reaches the generator");
    assert!(values(trunk_grad).iter().any(|v| *v != 0.0));
}

#[test]
fn fresh_sharing_report() {
    let nets = Networks::new(&tiny(), DType::F32, 0).unwrap();
    let r = sharing_report(&nets.generator, &nets.discriminators, &nets.rnet);
    assert_eq!(r.get("generator"), Some(&Sharing::FullyShared));
    assert_eq!(r.get("rnet"), Some(&Sharing::FullyShared));
    assert_eq!(r.get("discriminator"), Some(&Sharing::PartiallyShared(vec![6, 7, 8, 9])));
    for i in 1..=11 {
        let want = if (6..=9).contains(&i) { Sharing::FullyShared } else { Sharing::Private };
        assert_eq!(r.get(&format!("discriminator.layer{i}")), Some(&want), "layer {i}");
    }
}

#[test]
fn distinct_storage_names_cover_every_parameter_once() {
    let nets = Networks::new(&tiny(), DType::F32, 0).unwrap();
    let all = nets.all_vars();
    let names: HashSet<_> = all.iter().map(|(n, _)| n.clone()).collect();
    let ids: HashSet<_> = all.iter().map(|(_, v)| v.id()).collect();
    assert_eq!(names.len(), all.len());
    assert_eq!(ids.len(), all.len());
    assert_eq!(nets.discriminator_vars().len(), (7 * 2 + 4) * 2);
}

fn sgd(vars: &[Var], loss: &Tensor, lr: f64) {
    let grads = loss.backward().unwrap();
    for v in vars {
        if let Some(g) = grads.get(v) {
            v.set(&(v.as_tensor() - (g * lr).unwrap()).unwrap()).unwrap();
        }
    }
}

#[test]
fn student_only_discriminator_update() {
    let nets = Networks::new(&tiny(), DType::F64, 1).unwrap();
    let d = &nets.discriminators;
    let teacher_before = var_values(&d.role_vars(Role::Teacher));
    let x = rand_tensor(&[2, 3, 32, 32], 0.0, 1.0, 3);
    let out = d.discriminate(&x, Role::Student, Mode::Train).unwrap();
    let loss = out.log().unwrap().neg().unwrap().mean_all().unwrap();
    sgd(&var_list(&d.role_vars(Role::Student)), &loss, 0.5);

    let teacher_after = var_values(&d.role_vars(Role::Teacher));
    let student_after = var_values(&d.role_vars(Role::Student));
    // Two entries (weight, bias) per layer.
    for layer in 0..DISC_LAYERS {
        for j in 0..2 {
            let i = 2 * layer + j;
            if SHARED_LAYERS.contains(&layer) {
                assert_ne!(teacher_before[i], teacher_after[i], "shared layer {} moved", layer + 1);
                assert_eq!(teacher_after[i], student_after[i]);
            } else {
                assert_eq!(teacher_before[i], teacher_after[i], "teacher layer {} untouched", layer + 1);
            }
        }
    }
}

#[test]
fn generator_update_through_student_path_is_seen_by_teacher() {
    let nets = Networks::new(&tiny(), DType::F64, 2).unwrap();
    let before = var_values(&nets.generator.vars(""));
    let y_student = rand_tensor(&[1, 3, 8, 8], 0.2, 0.8, 5);
    let post = nets.generator.encode(&y_student).unwrap();
    let loss = post.mu.sqr().unwrap().mean_all().unwrap();
    sgd(&var_list(&nets.generator.vars("")), &loss, 0.1);
    let after = var_values(&nets.generator.vars(""));
    assert_ne!(before, after);
    let r = sharing_report(&nets.generator, &nets.discriminators, &nets.rnet);
    assert_eq!(r.get("generator"), Some(&Sharing::FullyShared));
}

#[test]
fn construction_is_deterministic() {
    let a = Networks::new(&tiny(), DType::F32, 9).unwrap();
    let b = Networks::new(&tiny(), DType::F32, 9).unwrap();
    let c = Networks::new(&tiny(), DType::F32, 10).unwrap();
    assert_eq!(var_values(&a.all_vars()), var_values(&b.all_vars()));
    assert_ne!(var_values(&a.all_vars()), var_values(&c.all_vars()));
}

#[test]
fn invalid_config_is_reported() {
    let cfg = NetConfig {
        ddf_kernel: 4,
        base_channels: 0,
        ..NetConfig::default()
    };
    match Networks::new(&cfg, DType::F32, 0) {
        Err(Error::Config(p)) => assert_eq!(p.len(), 2),
        other => panic!("expected config error, got {other:?}"),
    }
}

