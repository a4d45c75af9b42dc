//! Training losses and their weighted combination.
//!
//! Every squared-norm term is a mean over elements, so the weights do not
//! depend on resolution.

mod features;

pub use features::{ConvFeatureExtractor, FeatureExtractor, NullExtractor};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::LatentPosterior;

/// Lower bound applied to every `log` argument.
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Adversarial terms, both roles.
    pub lambda1: f64,
    /// Teacher reproduce term.
    pub lambda2: f64,
    /// VAE terms, both roles.
    pub lambda3: f64,
    /// Degradation-parameter term.
    pub lambda4: f64,
    /// Student reproduce term.
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 5e-1,
            lambda3: 1e-1,
            lambda4: 2e-1,
            lambda5: 2.5e-1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Vec<String> {
        [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
        .map(|(n, v)| format!("weights.{n} must be finite and non-negative, got {v}"))
        .collect()
    }
}

/// One named value per loss term plus the weighted totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dist: f64,
    #[serde(rename = "gen_T")]
    pub gen_t: f64,
    #[serde(rename = "dis_T")]
    pub dis_t: f64,
    #[serde(rename = "rm_T")]
    pub rm_t: f64,
    #[serde(rename = "vae_T")]
    pub vae_t: f64,
    pub degrad: f64,
    #[serde(rename = "gen_S")]
    pub gen_s: f64,
    #[serde(rename = "dis_S")]
    pub dis_s: f64,
    #[serde(rename = "rm_S")]
    pub rm_s: f64,
    #[serde(rename = "vae_S")]
    pub vae_s: f64,
    pub total_gen: f64,
    pub total_dis: f64,
}

impl LossReport {
    /// Generation fields from `gen`, discrimination fields from `dis`.
    pub fn merge(gen: &LossReport, dis: &LossReport) -> LossReport {
        LossReport {
            dis_t: dis.dis_t,
            dis_s: dis.dis_s,
            total_dis: dis.total_dis,
            ..gen.clone()
        }
    }

    pub fn all_finite(&self) -> bool {
        [
            self.dist, self.gen_t, self.dis_t, self.rm_t, self.vae_t, self.degrad, self.gen_s, self.dis_s, self.rm_s,
            self.vae_s, self.total_gen, self.total_dis,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::param(format!("{what}: shapes differ ({:?} vs {:?})", a.dims(), b.dims())));
    }
    Ok(())
}

fn mse(a: &Tensor, b: &Tensor, what: &str) -> Result<Tensor> {
    same_shape(a, b, what)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

fn check_probabilities(p: &Tensor, what: &str) -> Result<()> {
    let lo = scalar(&p.min_all()?)?;
    let hi = scalar(&p.max_all()?)?;
    if !(lo >= 0.0 && hi <= 1.0) {
        return Err(Error::Numeric(format!("{what}: probabilities must lie in [0, 1], got range [{lo}, {hi}]")));
    }
    Ok(())
}

/// `mean(−log max(p, LOG_FLOOR))`.
fn neg_log_mean(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(LOG_FLOOR, 1.0)?.log()?.neg()?.mean_all()?)
}

/// Pixel MSE plus feature MSE summed over the extractor's scales. Features
/// of the clean target are treated as constants.
pub fn dist_loss(x: &Tensor, x_hat: &Tensor, feat: &dyn FeatureExtractor) -> Result<Tensor> {
    let mut total = mse(x, x_hat, "dist_loss")?;
    let fx = feat.features(x)?;
    let fh = feat.features(x_hat)?;
    for (a, b) in fx.iter().zip(&fh) {
        total = (total + mse(&a.detach(), b, "dist_loss features")?)?;
    }
    Ok(total)
}

/// Generator adversarial term `mean(−log d_fake)`.
pub fn gen_adv_loss(d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities(d_fake, "gen_adv_loss")?;
    neg_log_mean(d_fake)
}

/// Discriminator term `mean(−log d_real) + mean(−log(1 − d_fake))`.
pub fn dis_adv_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities(d_real, "dis_adv_loss real")?;
    check_probabilities(d_fake, "dis_adv_loss fake")?;
    let real = neg_log_mean(d_real)?;
    let fake = neg_log_mean(&d_fake.affine(-1.0, 1.0)?)?;
    Ok((real + fake)?)
}

/// Reproduce-net term, mean squared error.
pub fn rm_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    mse(y, y_hat, "rm_loss")
}

/// `½·mean(μ² + e^{logvar} − logvar − 1)`.
pub fn kl_divergence(post: &LatentPosterior) -> Result<Tensor> {
    same_shape(&post.mu, &post.logvar, "kl_divergence")?;
    for (t, n) in [(&post.mu, "mu"), (&post.logvar, "logvar")] {
        if !scalar(&t.abs()?.max_all()?)?.is_finite() {
            return Err(Error::Numeric(format!("posterior {n} is not finite")));
        }
    }
    let lv = &post.logvar;
    let inner = ((post.mu.sqr()? + lv.exp()?)? - lv)?;
    Ok(((inner - 1.0)?.mean_all()? * 0.5)?)
}

/// KL to the standard normal plus reconstruction MSE.
pub fn vae_loss(post: &LatentPosterior, y: &Tensor, y_recon: &Tensor) -> Result<Tensor> {
    Ok((kl_divergence(post)? + mse(y, y_recon, "vae_loss")?)?)
}

/// Mean squared error between true and estimated degradation maps.
pub fn degrad_loss(phi: &Tensor, phi_hat: &Tensor) -> Result<Tensor> {
    mse(phi, phi_hat, "degrad_loss")
}

/// Raw teacher-side generation terms.
#[derive(Clone, Debug)]
pub struct TeacherTerms {
    pub dist: Tensor,
    pub gen: Tensor,
    pub rm: Tensor,
    pub vae: Tensor,
    pub degrad: Tensor,
}

/// Raw student-side generation terms. None of them involves a clean frame.
#[derive(Clone, Debug)]
pub struct StudentTerms {
    pub gen: Tensor,
    pub rm: Tensor,
    pub vae: Tensor,
}

/// Weighted generation objective; student terms are omitted in teacher-only
/// training.
pub fn total_gen(t: &TeacherTerms, s: Option<&StudentTerms>, w: &LossWeights) -> Result<(Tensor, LossReport)> {
    let lt = ((((&t.dist + (&t.gen * w.lambda1)?)? + (&t.rm * w.lambda2)?)? + (&t.vae * w.lambda3)?)?
        + (&t.degrad * w.lambda4)?)?;
    let mut report = LossReport {
        dist: scalar(&t.dist)?,
        gen_t: scalar(&t.gen)?,
        rm_t: scalar(&t.rm)?,
        vae_t: scalar(&t.vae)?,
        degrad: scalar(&t.degrad)?,
        ..LossReport::default()
    };
    let total = match s {
        Some(s) => {
            let ls = (((&s.gen * w.lambda1)? + (&s.rm * w.lambda5)?)? + (&s.vae * w.lambda3)?)?;
            report.gen_s = scalar(&s.gen)?;
            report.rm_s = scalar(&s.rm)?;
            report.vae_s = scalar(&s.vae)?;
            (lt + ls)?
        }
        None => lt,
    };
    report.total_gen = scalar(&total)?;
    Ok((total, report))
}

/// Discrimination objective, the sum of both roles' terms.
pub fn total_dis(dis_t: &Tensor, dis_s: Option<&Tensor>) -> Result<(Tensor, LossReport)> {
    let mut report = LossReport {
        dis_t: scalar(dis_t)?,
        ..LossReport::default()
    };
    let total = match dis_s {
        Some(s) => {
            report.dis_s = scalar(s)?;
            (dis_t + s)?
        }
        None => dis_t.clone(),
    };
    report.total_dis = scalar(&total)?;
    Ok((total, report))
}
