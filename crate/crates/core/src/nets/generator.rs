use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::layers::{join, Conv, NamedVar};
use super::ops::{ddf_apply, global_avg_pool, leaky_relu, softplus, upsample_nearest};
use super::{Mode, NetConfig};

pub const LOGVAR_CLAMP: f64 = 10.0;

/// Per-pixel diagonal Gaussian over the latent map, `N×L×H/2×W/2`.
#[derive(Clone, Debug)]
pub struct LatentPosterior {
    pub mu: Tensor,
    pub logvar: Tensor,
}

#[derive(Clone, Debug)]
pub struct LatentCode {
    pub c: Tensor,
}

/// Reparameterized draw; the test-mode code is the posterior mean.
pub fn sample_latent<R: Rng>(post: &LatentPosterior, mode: Mode, rng: &mut R) -> Result<LatentCode> {
    match mode {
        Mode::Test => Ok(LatentCode { c: post.mu.clone() }),
        Mode::Train => {
            let shape = post.mu.shape().clone();
            let eps: Vec<f64> = (0..shape.elem_count()).map(|_| rng.sample(StandardNormal)).collect();
            let eps = Tensor::from_vec(eps, shape, post.mu.device())?.to_dtype(post.mu.dtype())?;
            let std = (&post.logvar * 0.5)?.exp()?;
            Ok(LatentCode { c: (&post.mu + (std * eps)?)? })
        }
    }
}

fn convs_vars(convs: &[Conv], prefix: &str) -> Vec<NamedVar> {
    convs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.vars(&join(prefix, &i.to_string())))
        .collect()
}

fn check_image(x: &Tensor, channels: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4().map_err(|_| Error::param(format!("{what}: expected N×C×H×W, got {:?}", x.dims())))?;
    if dims.1 != channels {
        return Err(Error::param(format!("{what}: expected {channels} channels, got {}", dims.1)));
    }
    Ok(dims)
}

/// Five convolutions; the second one halves the resolution.
#[derive(Debug)]
pub struct Encoder {
    pub convs: Vec<Conv>,
    latent: usize,
}

impl Encoder {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (b, k, l) = (cfg.base_channels, cfg.kernel_size, cfg.latent_channels);
        let convs = vec![
            Conv::new(3, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 2, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, 2 * l, k, 1, 0.1, dtype, rng)?,
        ];
        Ok(Self { convs, latent: l })
    }

    pub fn forward(&self, y: &Tensor) -> Result<LatentPosterior> {
        let (_, _, h, w) = check_image(y, 3, "encode")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::param(format!("encode: spatial dims {h}×{w} must be even")));
        }
        let mut t = y.clone();
        for conv in &self.convs[..4] {
            t = conv.forward(&t)?.relu()?;
        }
        let out = self.convs[4].forward(&t)?;
        let mu = out.narrow(1, 0, self.latent)?;
        let logvar = out.narrow(1, self.latent, self.latent)?.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        Ok(LatentPosterior { mu, logvar })
    }
}

/// Five convolutions with a ×2 nearest upsampling after the first.
#[derive(Debug)]
pub struct Decoder {
    pub convs: Vec<Conv>,
    latent: usize,
}

impl Decoder {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (b, k, l) = (cfg.base_channels, cfg.kernel_size, cfg.latent_channels);
        let convs = vec![
            Conv::new(l, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, 3, k, 1, 1.0, dtype, rng)?,
        ];
        Ok(Self { convs, latent: l })
    }

    pub fn forward(&self, c: &LatentCode) -> Result<Tensor> {
        check_image(&c.c, self.latent, "decode")?;
        let mut t = upsample_nearest(&self.convs[0].forward(&c.c)?.relu()?, 2)?;
        for conv in &self.convs[1..4] {
            t = conv.forward(&t)?.relu()?;
        }
        self.convs[4].forward(&t)
    }
}

/// Bottleneck block: reduce → dynamic filter → expand, plus identity.
#[derive(Debug)]
pub struct DdfBlock {
    pub reduce: Conv,
    pub spatial: Conv,
    pub channel_fc1: Conv,
    pub channel_fc2: Conv,
    pub expand: Conv,
    k: usize,
    mid: usize,
}

impl DdfBlock {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let b = cfg.base_channels;
        let k = cfg.ddf_kernel;
        let mid = (b / cfg.ddf_reduction.max(1)).max(1);
        Ok(Self {
            reduce: Conv::new(b, mid, 1, 1, 1.0, dtype, rng)?,
            spatial: Conv::new(b, k * k, 1, 1, 0.5, dtype, rng)?,
            channel_fc1: Conv::new(b, mid, 1, 1, 1.0, dtype, rng)?,
            channel_fc2: Conv::new(mid, mid * k * k, 1, 1, 0.5, dtype, rng)?,
            expand: Conv::new(mid, b, 1, 1, 0.1, dtype, rng)?,
            k,
            mid,
        })
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let n = h.dims()[0];
        let kk = self.k * self.k;
        let r = self.reduce.forward(h)?.relu()?;
        let spatial = self.spatial.forward(h)?;
        let pooled = global_avg_pool(h)?;
        let channel = self
            .channel_fc2
            .forward(&self.channel_fc1.forward(&pooled)?.relu()?)?
            .reshape((n, self.mid, kk))?;
        let f = ddf_apply(&r, &spatial, &channel, self.k)?.relu()?;
        Ok((h + self.expand.forward(&f)?)?)
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        [
            ("reduce", &self.reduce),
            ("spatial", &self.spatial),
            ("channel_fc1", &self.channel_fc1),
            ("channel_fc2", &self.channel_fc2),
            ("expand", &self.expand),
        ]
        .into_iter()
        .flat_map(|(name, c)| c.vars(&join(prefix, name)))
        .collect()
    }
}

/// Restoration trunk conditioned on the latent code.
#[derive(Debug)]
pub struct DdfTrunk {
    pub input: Conv,
    pub blocks: Vec<DdfBlock>,
    pub tail: Vec<Conv>,
    latent: usize,
}

impl DdfTrunk {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (b, k, l) = (cfg.base_channels, cfg.kernel_size, cfg.latent_channels);
        let input = Conv::new(3 + l, b, k, 1, 1.0, dtype, rng)?;
        let blocks = (0..cfg.ddf_blocks)
            .map(|_| DdfBlock::new(cfg, dtype, rng))
            .collect::<Result<Vec<_>>>()?;
        let tail = vec![
            Conv::new(b, b, k, 1, 1.0, dtype, rng)?,
            Conv::new(b, 3, k, 1, 0.1, dtype, rng)?,
        ];
        Ok(Self { input, blocks, tail, latent: l })
    }

    pub fn forward(&self, y: &Tensor, c: &LatentCode) -> Result<Tensor> {
        let (n, _, h, w) = check_image(y, 3, "restore")?;
        let (cn, _, ch, cw) = check_image(&c.c, self.latent, "restore latent")?;
        if cn != n || 2 * ch != h || 2 * cw != w {
            return Err(Error::param(format!(
                "restore: latent {:?} does not match frame {:?}",
                c.c.dims(),
                y.dims()
            )));
        }
        let cond = Tensor::cat(&[y, &upsample_nearest(&c.c, 2)?], 1)?;
        let mut t = self.input.forward(&cond)?.relu()?;
        for block in &self.blocks {
            t = block.forward(&t)?;
        }
        t = self.tail[0].forward(&t)?.relu()?;
        let residual = self.tail[1].forward(&t)?;
        Ok((y + residual)?.clamp(0.0, 1.0)?)
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        let mut v = self.input.vars(&join(prefix, "input"));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.vars(&join(prefix, &format!("block{i}"))));
        }
        v.extend(convs_vars(&self.tail, &join(prefix, "tail")));
        v
    }

    pub fn zero_(&self) -> Result<()> {
        self.input.zero_()?;
        for b in &self.blocks {
            for c in [&b.reduce, &b.spatial, &b.channel_fc1, &b.channel_fc2, &b.expand] {
                c.zero_()?;
            }
        }
        self.tail.iter().try_for_each(|c| c.zero_())
    }
}

/// Two convolutions mapping the latent code to a non-negative
/// (tilt, blur) map at latent resolution.
#[derive(Debug)]
pub struct ParamEstimator {
    pub convs: Vec<Conv>,
    slope: f64,
    latent: usize,
}

impl ParamEstimator {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (b, k, l) = (cfg.base_channels, cfg.kernel_size, cfg.latent_channels);
        Ok(Self {
            convs: vec![
                Conv::new(l, b, k, 1, 1.0, dtype, rng)?,
                Conv::new(b, 2, k, 1, 0.1, dtype, rng)?,
            ],
            slope: cfg.leaky_slope,
            latent: l,
        })
    }

    pub fn forward(&self, c: &LatentCode) -> Result<Tensor> {
        check_image(&c.c, self.latent, "estimate_params")?;
        let t = leaky_relu(&self.convs[0].forward(&c.c)?, self.slope)?;
        softplus(&self.convs[1].forward(&t)?)
    }
}

/// The generator shared by teacher and student paths.
#[derive(Debug)]
pub struct Generator {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub trunk: DdfTrunk,
    pub estimator: ParamEstimator,
}

impl Generator {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(cfg, dtype, rng)?,
            decoder: Decoder::new(cfg, dtype, rng)?,
            trunk: DdfTrunk::new(cfg, dtype, rng)?,
            estimator: ParamEstimator::new(cfg, dtype, rng)?,
        })
    }

    pub fn encode(&self, y: &Tensor) -> Result<LatentPosterior> {
        self.encoder.forward(y)
    }

    pub fn decode(&self, c: &LatentCode) -> Result<Tensor> {
        self.decoder.forward(c)
    }

    pub fn restore(&self, y: &Tensor, c: &LatentCode) -> Result<Tensor> {
        self.trunk.forward(y, c)
    }

    pub fn estimate_params(&self, c: &LatentCode) -> Result<Tensor> {
        self.estimator.forward(c)
    }

    /// Deterministic inference path: posterior mean, then the trunk.
    pub fn restore_test(&self, y: &Tensor) -> Result<Tensor> {
        let post = self.encode(y)?;
        self.restore(y, &LatentCode { c: post.mu })
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        let mut v = convs_vars(&self.encoder.convs, &join(prefix, "encoder"));
        v.extend(convs_vars(&self.decoder.convs, &join(prefix, "decoder")));
        v.extend(self.trunk.vars(&join(prefix, "trunk")));
        v.extend(convs_vars(&self.estimator.convs, &join(prefix, "estimator")));
        v
    }
}

/// Small residual network mapping a restored frame back to its degraded
/// observation.
#[derive(Debug)]
pub struct ReproduceNet {
    pub convs: Vec<Conv>,
}

impl ReproduceNet {
    pub fn new<R: Rng>(cfg: &NetConfig, dtype: DType, rng: &mut R) -> Result<Self> {
        let (r, k) = (cfg.rnet_channels, cfg.kernel_size);
        Ok(Self {
            convs: vec![
                Conv::new(3, r, k, 1, 1.0, dtype, rng)?,
                Conv::new(r, r, k, 1, 1.0, dtype, rng)?,
                Conv::new(r, r, k, 1, 1.0, dtype, rng)?,
                Conv::new(r, r, k, 1, 1.0, dtype, rng)?,
                Conv::new(r, 3, k, 1, 0.1, dtype, rng)?,
            ],
        })
    }

    pub fn forward(&self, x_hat: &Tensor) -> Result<Tensor> {
        check_image(x_hat, 3, "reproduce")?;
        let mut t = x_hat.clone();
        for conv in &self.convs[..4] {
            t = conv.forward(&t)?.relu()?;
        }
        let residual = self.convs[4].forward(&t)?;
        Ok((x_hat + residual)?.clamp(0.0, 1.0)?)
    }

    pub fn vars(&self, prefix: &str) -> Vec<NamedVar> {
        convs_vars(&self.convs, prefix)
    }
}

/// Zero tensor helper used by tests and callers that need a neutral latent.
pub fn zero_latent(n: usize, cfg: &NetConfig, h: usize, w: usize, dtype: DType) -> Result<LatentCode> {
    Ok(LatentCode {
        c: Tensor::zeros((n, cfg.latent_channels, h / 2, w / 2), dtype, &Device::Cpu)?,
    })
}
