//! Finite-difference gradient checking shared by unit tests.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};

use crate::error::Result;

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn rand_var(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Var {
    Var::from_tensor(&rand_tensor(shape, lo, hi, seed)).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn set_entry(v: &Var, i: usize, value: f64) {
    let mut data: Vec<f64> = v.flatten_all().unwrap().to_vec1().unwrap();
    data[i] = value;
    v.set(&Tensor::from_vec(data, v.shape(), &Device::Cpu).unwrap()).unwrap();
}

/// Largest relative discrepancy between backprop and central differences
/// over up to `per_var` sampled entries of every variable.
pub fn max_gradient_error(vars: &[Var], f: &dyn Fn() -> Result<Tensor>, per_var: usize, seed: u64) -> f64 {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-4;
    let loss = f().unwrap();
    let grads = loss.backward().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for v in vars {
        let analytic: Vec<f64> = match grads.get(v) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; v.elem_count()],
        };
        let n = v.elem_count();
        let picks: Vec<usize> = if n <= per_var {
            (0..n).collect()
        } else {
            (0..per_var).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let orig: f64 = v.flatten_all().unwrap().to_vec1::<f64>().unwrap()[i];
            set_entry(v, i, orig + H);
            let fp = scalar(&f().unwrap());
            set_entry(v, i, orig - H);
            let fm = scalar(&f().unwrap());
            set_entry(v, i, orig);
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
