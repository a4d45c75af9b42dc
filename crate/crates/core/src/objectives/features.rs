use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nets::ops::conv2d;
use crate::rng::rng_for;
use crate::tensorfile;

/// Fixed map from an image batch to feature maps compared by the
/// perceptual part of the distance loss.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    fn name(&self) -> &str;
}

/// Emits no features; the distance loss reduces to pixel MSE.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullExtractor;

impl FeatureExtractor for NullExtractor {
    fn features(&self, _x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(Vec::new())
    }

    fn name(&self) -> &str {
        "null"
    }
}

#[derive(Clone, Debug)]
struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

/// Frozen stack of 3×3 ReLU convolutions with features tapped after
/// selected layers. Weights are plain tensors, never optimizer variables.
#[derive(Clone, Debug)]
pub struct ConvFeatureExtractor {
    layers: Vec<FrozenConv>,
    taps: Vec<usize>,
    name: String,
}

/// (output channels, stride) of the random stack; taps after layers 3
/// and 4 give features at 1/4 and 1/8 scale.
const RANDOM_STACK: [(usize, usize); 4] = [(16, 1), (16, 2), (32, 2), (32, 2)];

impl ConvFeatureExtractor {
    /// He-initialized random weights drawn from `seed`.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[0xfea7]);
        let mut cin = 3;
        let mut layers = Vec::new();
        for &(cout, stride) in &RANDOM_STACK {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let w: Vec<f64> = (0..cout * cin * 9)
                .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            layers.push(FrozenConv {
                weight: Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu)?,
                bias: Tensor::zeros(cout, DType::F64, &Device::Cpu)?,
                stride,
            });
            cin = cout;
        }
        Ok(Self {
            layers,
            taps: vec![2, 3],
            name: format!("random-conv(seed={seed})"),
        })
    }

    /// Builds from externally supplied weights: `layers` as
    /// `(weight Cout×Cin×k×k, bias Cout, stride)`, `taps` as zero-based
    /// layer indices whose activations are returned.
    pub fn from_weights(layers: Vec<(Tensor, Tensor, usize)>, taps: Vec<usize>, name: &str) -> Result<Self> {
        let mut cin = 3;
        for (i, (w, b, stride)) in layers.iter().enumerate() {
            let d = w.dims();
            if d.len() != 4 || d[1] != cin || d[2] != d[3] || d[2] % 2 == 0 || b.dims() != [d[0]] || *stride == 0 {
                return Err(Error::param(format!(
                    "feature layer {i}: weight {d:?}, bias {:?}, stride {stride} do not chain from {cin} channels",
                    b.dims()
                )));
            }
            cin = d[0];
        }
        if taps.is_empty() || taps.iter().any(|&t| t >= layers.len()) {
            return Err(Error::param(format!("feature taps {taps:?} out of range for {} layers", layers.len())));
        }
        Ok(Self {
            layers: layers
                .into_iter()
                .map(|(w, b, stride)| -> Result<FrozenConv> {
                    Ok(FrozenConv {
                        weight: w.to_dtype(DType::F64)?,
                        bias: b.to_dtype(DType::F64)?,
                        stride,
                    })
                })
                .collect::<Result<_>>()?,
            taps,
            name: name.to_string(),
        })
    }

    /// Reads `layer{i}.weight` / `layer{i}.bias` tensors from a safetensors
    /// file; `strides` and `taps` come from its metadata as comma lists.
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta) = tensorfile::read(path)?;
        let fmt = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw = meta.get(key).ok_or_else(|| fmt(format!("missing metadata key {key}")))?;
            raw.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| fmt(format!("{key}: {e}"))))
                .collect()
        };
        let strides = list("strides")?;
        let taps = list("taps")?;
        let mut layers = Vec::new();
        for (i, stride) in strides.into_iter().enumerate() {
            let get = |n: &str| {
                tensors
                    .get(&format!("layer{i}.{n}"))
                    .cloned()
                    .ok_or_else(|| fmt(format!("missing tensor layer{i}.{n}")))
            };
            layers.push((get("weight")?, get("bias")?, stride));
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        Self::from_weights(layers, taps, &name)
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let dtype = x.dtype();
        let mut t = x.clone();
        let mut out = Vec::with_capacity(self.taps.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let k = layer.weight.dims()[2];
            let w = layer.weight.to_dtype(dtype)?;
            let b = layer.bias.to_dtype(dtype)?.reshape((1, (), 1, 1))?;
            t = conv2d(&t, &w, layer.stride, k / 2)?.broadcast_add(&b)?.relu()?;
            if self.taps.contains(&i) {
                out.push(t.clone());
            }
            if i >= *self.taps.iter().max().unwrap_or(&0) {
                break;
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        &self.name
    }
}
