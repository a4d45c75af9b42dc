use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::ops::conv2d;
use super::Mode;

/// Named handle to a trainable tensor.
pub type NamedVar = (String, Var);

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Square-kernel convolution with bias and zero padding of `k / 2`.
#[derive(Debug)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pad: usize,
}

impl Conv {
    /// He-normal weights scaled by `gain`, zero bias.
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 || k == 0 || stride == 0 {
            return Err(Error::param(format!("invalid conv geometry {cin}->{cout} k{k} s{stride}")));
        }
        let fan_in = (cin * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let w: Vec<f64> = (0..cout * cin * k * k)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weight = Tensor::from_vec(w, (cout, cin, k, k), &Device::Cpu)?.to_dtype(dtype)?;
        let bias = Tensor::zeros(cout, dtype, &Device::Cpu)?;
        Ok(Self {
            weight: Var::from_tensor(&weight)?,
            bias: Var::from_tensor(&bias)?,
            stride,
            pad: k / 2,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, self.weight.as_tensor())
    }

    /// Applies the convolution with a substitute weight of the same shape.
    pub fn forward_with(&self, x: &Tensor, weight: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, weight, self.stride, self.pad)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels(), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        vec![
            (join(prefix, "weight"), self.weight.clone()),
            (join(prefix, "bias"), self.bias.clone()),
        ]
    }

    pub fn zero_(&self) -> Result<()> {
        self.weight.set(&self.weight.zeros_like()?)?;
        self.bias.set(&self.bias.zeros_like()?)?;
        Ok(())
    }
}

const SN_EPS: f64 = 1e-12;

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= SN_EPS {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Convolution whose weight is divided by a power-iteration estimate of its
/// largest singular value (weight viewed as `cout × cin·k·k`).
#[derive(Debug)]
pub struct SpectralConv {
    pub conv: Conv,
    u: Mutex<Vec<f64>>,
}

impl SpectralConv {
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, dtype: DType, rng: &mut R) -> Result<Self> {
        let conv = Conv::new(cin, cout, k, stride, 1.0, dtype, rng)?;
        let mut u: Vec<f64> = (0..cout).map(|_| rng.sample(StandardNormal)).collect();
        if !normalize(&mut u) {
            u = vec![0.0; cout];
            u[0] = 1.0;
        }
        Ok(Self { conv, u: Mutex::new(u) })
    }

    pub fn u(&self) -> Vec<f64> {
        self.u.lock().expect("spectral norm state poisoned").clone()
    }

    pub fn set_u(&self, u: Vec<f64>) -> Result<()> {
        if u.len() != self.conv.out_channels() {
            return Err(Error::param(format!(
                "spectral norm vector has {} entries, layer has {} outputs",
                u.len(),
                self.conv.out_channels()
            )));
        }
        *self.u.lock().expect("spectral norm state poisoned") = u;
        Ok(())
    }

    /// `σ = uᵀ W v` with `u`, `v` treated as constants, after optionally
    /// advancing the power iteration by `steps`.
    pub fn sigma(&self, steps: usize) -> Result<Tensor> {
        let w = self.conv.weight.as_tensor();
        let rows = w.dims()[0];
        let cols = w.elem_count() / rows;
        let w2 = w.reshape((rows, cols))?;
        let wv: Vec<f64> = w2.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let wt_mul = |u: &[f64]| -> Vec<f64> {
            let mut v = vec![0.0; cols];
            for (r, &ur) in u.iter().enumerate() {
                for (vc, &wrc) in v.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                    *vc += ur * wrc;
                }
            }
            v
        };
        let mut guard = self.u.lock().expect("spectral norm state poisoned");
        for _ in 0..steps {
            let mut v = wt_mul(&guard);
            if !normalize(&mut v) {
                break;
            }
            let mut u: Vec<f64> = (0..rows)
                .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            if !normalize(&mut u) {
                break;
            }
            *guard = u;
        }
        let u = guard.clone();
        drop(guard);
        let mut v = wt_mul(&u);
        if !normalize(&mut v) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        let outer: Vec<f64> = u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        let outer = Tensor::from_vec(outer, (rows, cols), &Device::Cpu)?.to_dtype(w.dtype())?;
        Ok((w2 * outer)?.sum_all()?)
    }

    pub fn normalized_weight(&self, steps: usize) -> Result<Tensor> {
        let sigma = self.sigma(steps)?.maximum(SN_EPS)?;
        Ok(self.conv.weight.as_tensor().broadcast_div(&sigma)?)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let steps = usize::from(mode == Mode::Train);
        let w = self.normalized_weight(steps)?;
        self.conv.forward_with(x, &w)
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        self.conv.vars(prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn largest_singular_value(w: &Tensor) -> f64 {
        let rows = w.dims()[0];
        let cols = w.elem_count() / rows;
        let data: Vec<f64> = w.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, &data);
        m.singular_values().max()
    }

    #[test]
    fn spectral_norm_converges_to_unit_singular_value() {
        for (seed, (cin, cout)) in [(1u64, (3usize, 8usize)), (2, (8, 8)), (3, (8, 16)), (4, (16, 1))] {
            let layer = SpectralConv::new(cin, cout, 3, 1, DType::F64, &mut rng(seed)).unwrap();
            let w = layer.normalized_weight(50).unwrap();
            let s = largest_singular_value(&w);
            assert!((s - 1.0).abs() < 0.02, "seed {seed}: σ_max {s}");
        }
    }

    #[test]
    fn eval_forward_leaves_power_iteration_state() {
        let layer = SpectralConv::new(2, 4, 3, 1, DType::F64, &mut rng(5)).unwrap();
        let x = Tensor::ones((1, 2, 6, 6), DType::F64, &Device::Cpu).unwrap();
        let before = layer.u();
        layer.forward(&x, Mode::Test).unwrap();
        assert_eq!(before, layer.u());
        layer.forward(&x, Mode::Train).unwrap();
        assert_ne!(before, layer.u());
    }

    #[test]
    fn zero_weight_is_handled() {
        let layer = SpectralConv::new(2, 4, 3, 1, DType::F64, &mut rng(6)).unwrap();
        layer.conv.zero_().unwrap();
        let w = layer.normalized_weight(3).unwrap();
        assert!(w.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
        assert!(layer.u().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_rejects_degenerate_geometry() {
        assert!(Conv::new(0, 4, 3, 1, 1.0, DType::F32, &mut rng(1)).is_err());
        assert!(Conv::new(2, 4, 3, 0, 1.0, DType::F32, &mut rng(1)).is_err());
    }
}
