//! Alternating adversarial training: one discrimination step, then one
//! generation step, per iteration.

mod adam;
mod augment;
mod checkpoint;
mod config;
mod data;
mod schedule;


use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use augment::{augment, AugmentOp};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA};
pub use config::{DataConfig, Precision, TrainConfig, TrainMode};
pub use data::{student_batch, teacher_batch, DegradedSet, PairedSet, StudentBatch, TeacherBatch};
pub use schedule::lr_at;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::iqa::{piqe, psnr, ssim};
use crate::nets::{sample_latent, Generator, Mode, Networks, Role};
use crate::objectives::{
    dis_adv_loss, dist_loss, gen_adv_loss, rm_loss, total_dis, total_gen, vae_loss, degrad_loss, ConvFeatureExtractor,
    FeatureExtractor, LossReport, NullExtractor, StudentTerms, TeacherTerms,
};
use crate::rng::rng_for;

const TAG_NOISE: u64 = 0x6e6f;
const STEP_DIS: u64 = 0;
const STEP_GEN: u64 = 1;

/// Everything that evolves during training. Random streams are keyed by
/// `(seed, iteration)`, so the iteration counter is the whole RNG state.
#[derive(Debug)]
pub struct TrainState {
    pub nets: Networks,
    pub opt_gen: Adam,
    pub opt_dis: Adam,
    pub iteration: u64,
    pub gen_steps: u64,
    pub dis_steps: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let nets = Networks::new(&cfg.net, cfg.precision.dtype(), cfg.seed)?;
        let adam = |vars| Adam::new(vars, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self {
            opt_gen: adam(nets.generation_vars())?,
            opt_dis: adam(nets.discriminator_vars())?,
            nets,
            iteration: 0,
            gen_steps: 0,
            dis_steps: 0,
        })
    }
}

/// Training and held-out data held in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub teacher: PairedSet,
    pub student: Option<DegradedSet>,
    pub validation: Option<PairedSet>,
    pub student_validation: Option<DegradedSet>,
}

impl TrainData {
    pub fn load(cfg: &DataConfig) -> Result<Self> {
        let teacher = cfg
            .teacher_manifest
            .as_deref()
            .ok_or_else(|| Error::Config(vec!["data.teacher_manifest is required".into()]))?;
        Ok(Self {
            teacher: PairedSet::load(teacher, 0)?,
            student: cfg.student_manifest.as_deref().map(|p| DegradedSet::load(p, 0)).transpose()?,
            validation: cfg
                .validation_manifest
                .as_deref()
                .map(|p| PairedSet::load(p, cfg.validation_limit))
                .transpose()?,
            student_validation: cfg
                .student_validation_manifest
                .as_deref()
                .map(|p| DegradedSet::load(p, cfg.validation_limit))
                .transpose()?,
        })
    }
}

/// Which iteration's random streams a step draws from, and its learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepContext {
    pub iteration: u64,
    pub lr: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Held-out scores after an epoch. Restored and input scores are reported
/// side by side so the gain is visible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub teacher_count: usize,
    pub psnr_restored: Option<f64>,
    pub psnr_input: Option<f64>,
    pub ssim_restored: Option<f64>,
    pub ssim_input: Option<f64>,
    pub student_count: usize,
    pub piqe_restored: Option<f64>,
    pub piqe_input: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub gen_steps: u64,
    pub dis_steps: u64,
    pub validation: Vec<ValidationRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

pub fn feature_extractor(cfg: &TrainConfig) -> Result<Arc<dyn FeatureExtractor>> {
    Ok(match cfg.feature_extractor.as_str() {
        "random" => Arc::new(ConvFeatureExtractor::random(cfg.feature_seed)?),
        "null" => Arc::new(NullExtractor),
        path => Arc::new(ConvFeatureExtractor::load(Path::new(path))?),
    })
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
    pub data: TrainData,
    features: Arc<dyn FeatureExtractor>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("cfg", &self.cfg)
            .field("iteration", &self.state.iteration)
            .field("features", &self.features.name())
            .finish()
    }
}

fn check_data(cfg: &TrainConfig, data: &TrainData) -> Result<()> {
    let mut p = cfg.validate_hyperparameters();
    if data.teacher.is_empty() {
        p.push("data.teacher_manifest holds no samples".into());
    }
    if cfg.mode == TrainMode::RealAtm && data.student.as_ref().is_none_or(|s| s.is_empty()) {
        p.push("data.student_manifest is required when mode = real_atm".into());
    }
    if p.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(p))
    }
}

impl Trainer {
    /// Validates the configuration and loads every manifest it names.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.check()?;
        let data = TrainData::load(&cfg.data)?;
        Self::with_data(cfg, data)
    }

    /// Uses in-memory data; the manifest paths in `cfg` are ignored.
    pub fn with_data(cfg: TrainConfig, data: TrainData) -> Result<Self> {
        check_data(&cfg, &data)?;
        let state = TrainState::new(&cfg)?;
        Self::from_state(cfg, state, data)
    }

    pub fn from_state(cfg: TrainConfig, state: TrainState, data: TrainData) -> Result<Self> {
        check_data(&cfg, &data)?;
        let features = feature_extractor(&cfg)?;
        Ok(Self {
            cfg,
            state,
            data,
            features,
        })
    }

    /// Continues from a checkpoint, reloading data from the stored config.
    pub fn resume(path: &Path) -> Result<Self> {
        let (cfg, state) = load_checkpoint(path)?;
        let data = TrainData::load(&cfg.data)?;
        Self::from_state(cfg, state, data)
    }

    pub fn resume_with_data(path: &Path, data: TrainData) -> Result<Self> {
        let (cfg, state) = load_checkpoint(path)?;
        Self::from_state(cfg, state, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.state, &self.cfg, path)
    }

    pub fn dtype(&self) -> DType {
        self.cfg.precision.dtype()
    }

    fn student_for<'a>(&self, bs: Option<&'a StudentBatch>) -> Result<Option<&'a StudentBatch>> {
        match self.cfg.mode {
            TrainMode::SynAtm => Ok(None),
            TrainMode::RealAtm => bs
                .map(Some)
                .ok_or_else(|| Error::Config(vec!["real_atm mode requires a student batch every step".into()])),
        }
    }

    fn noise(&self, ctx: StepContext, step: u64, role: Role) -> rand_chacha::ChaCha8Rng {
        rng_for(self.cfg.seed, &[TAG_NOISE, ctx.iteration, step, role as u64])
    }

    /// Restores `y` with a freshly sampled latent code; returns the restoration
    /// together with the posterior and code.
    fn forward_generator(
        &self,
        y: &Tensor,
        ctx: StepContext,
        step: u64,
        role: Role,
    ) -> Result<(Tensor, crate::nets::LatentPosterior, crate::nets::LatentCode)> {
        let gen = &self.state.nets.generator;
        let post = gen.encode(y)?;
        let code = sample_latent(&post, Mode::Train, &mut self.noise(ctx, step, role))?;
        let x_hat = gen.restore(y, &code)?;
        Ok((x_hat, post, code))
    }

    /// Updates both discriminators; generation parameters are not touched.
    pub fn discrimination_step(
        &mut self,
        bt: &TeacherBatch,
        bs: Option<&StudentBatch>,
        ctx: StepContext,
    ) -> Result<LossReport> {
        let bs = self.student_for(bs)?;
        let disc = &self.state.nets.discriminators;
        let (x_hat_t, _, _) = self.forward_generator(&bt.degraded, ctx, STEP_DIS, Role::Teacher)?;
        let dis_t = dis_adv_loss(
            &disc.discriminate(&bt.clean, Role::Teacher, Mode::Train)?,
            &disc.discriminate(&x_hat_t.detach(), Role::Teacher, Mode::Train)?,
        )?;
        let dis_s = match bs {
            Some(bs) => {
                let (x_hat_s, _, _) = self.forward_generator(&bs.degraded, ctx, STEP_DIS, Role::Student)?;
                Some(dis_adv_loss(
                    &disc.discriminate(&bt.clean, Role::Student, Mode::Train)?,
                    &disc.discriminate(&x_hat_s.detach(), Role::Student, Mode::Train)?,
                )?)
            }
            None => None,
        };
        let (total, report) = total_dis(&dis_t, dis_s.as_ref())?;
        if !report.all_finite() {
            return Err(Error::Numeric(format!("discrimination loss is not finite: {report:?}")));
        }
        let grads = total.backward()?;
        self.state.opt_dis.step(&grads, ctx.lr)?;
        self.state.dis_steps += 1;
        Ok(report)
    }

    /// Updates the generator (encoder, decoder, trunk, estimator) and the
    /// reproduce net; discriminator parameters are not touched.
    pub fn generation_step(&mut self, bt: &TeacherBatch, bs: Option<&StudentBatch>, ctx: StepContext) -> Result<LossReport> {
        let bs = self.student_for(bs)?;
        let nets = &self.state.nets;
        let gen = &nets.generator;
        let disc = &nets.discriminators;

        let (x_hat, post, code) = self.forward_generator(&bt.degraded, ctx, STEP_GEN, Role::Teacher)?;
        let teacher = TeacherTerms {
            dist: dist_loss(&bt.clean, &x_hat, self.features.as_ref())?,
            gen: gen_adv_loss(&disc.discriminate(&x_hat, Role::Teacher, Mode::Train)?)?,
            rm: rm_loss(&bt.degraded, &nets.rnet.forward(&x_hat)?)?,
            vae: vae_loss(&post, &bt.degraded, &gen.decode(&code)?)?,
            degrad: degrad_loss(&bt.phi, &gen.estimate_params(&code)?)?,
        };
        let student = match bs {
            Some(bs) => {
                let y = &bs.degraded;
                let (x_hat, post, code) = self.forward_generator(y, ctx, STEP_GEN, Role::Student)?;
                Some(StudentTerms {
                    gen: gen_adv_loss(&disc.discriminate(&x_hat, Role::Student, Mode::Train)?)?,
                    rm: rm_loss(y, &nets.rnet.forward(&x_hat)?)?,
                    vae: vae_loss(&post, y, &gen.decode(&code)?)?,
                })
            }
            None => None,
        };
        let (total, report) = total_gen(&teacher, student.as_ref(), &self.cfg.weights)?;
        if !report.all_finite() {
            return Err(Error::Numeric(format!("generation loss is not finite: {report:?}")));
        }
        let grads = total.backward()?;
        self.state.opt_gen.step(&grads, ctx.lr)?;
        self.state.gen_steps += 1;
        Ok(report)
    }

    /// Batches for the current iteration.
    pub fn batches(&self, iteration: u64) -> Result<(TeacherBatch, Option<StudentBatch>)> {
        let c = &self.cfg;
        let it = iteration as usize;
        let (epoch, j) = (it / c.iters_per_epoch, it % c.iters_per_epoch);
        let bt = teacher_batch(&self.data.teacher, c.seed, epoch, j, c.batch_size, c.crop_size, self.dtype())?;
        let bs = match (c.mode, &self.data.student) {
            (TrainMode::RealAtm, Some(s)) => {
                Some(student_batch(s, c.seed, epoch, j, c.batch_size, c.crop_size, self.dtype())?)
            }
            _ => None,
        };
        Ok((bt, bs))
    }

    /// Runs one full iteration (discrimination step, then generation step).
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        let total = self.cfg.total_iters();
        let it = self.state.iteration;
        if it as usize >= total {
            return Err(Error::param(format!("training already finished ({total} iterations)")));
        }
        let lr = lr_at(it as usize, total, self.cfg.lr_init, self.cfg.lr_final)?;
        let (bt, bs) = self.batches(it)?;
        let ctx = StepContext { iteration: it, lr };
        let dis = self.discrimination_step(&bt, bs.as_ref(), ctx)?;
        let gen = self.generation_step(&bt, bs.as_ref(), ctx)?;
        self.state.iteration += 1;
        Ok(IterationRecord {
            iteration: it,
            epoch: it as usize / self.cfg.iters_per_epoch,
            lr,
            report: LossReport::merge(&gen, &dis),
        })
    }

    /// Runs `n` iterations, or fewer if training finishes first.
    pub fn run(&mut self, n: usize) -> Result<Vec<IterationRecord>> {
        let remaining = self.cfg.total_iters().saturating_sub(self.state.iteration as usize);
        (0..n.min(remaining)).map(|_| self.iterate()).collect()
    }

    pub fn restore(&self, y: &Frame) -> Result<Frame> {
        restore_frame(&self.state.nets.generator, y, self.dtype())
    }

    /// Scores the held-out splits with the current generator.
    pub fn validate(&self) -> Result<ValidationRecord> {
        let it = self.state.iteration;
        let mut rec = ValidationRecord {
            epoch: (it as usize).div_ceil(self.cfg.iters_per_epoch),
            iteration: it,
            ..Default::default()
        };
        if let Some(v) = &self.data.validation {
            let mut acc = [0f64; 4];
            for (clean, y) in v.clean.iter().zip(&v.degraded) {
                let x_hat = self.restore(y)?;
                acc[0] += psnr(&x_hat, clean)?;
                acc[1] += psnr(y, clean)?;
                acc[2] += ssim(&x_hat, clean)?;
                acc[3] += ssim(y, clean)?;
            }
            let n = v.len();
            if n > 0 {
                let m = acc.map(|a| Some(a / n as f64));
                (rec.psnr_restored, rec.psnr_input, rec.ssim_restored, rec.ssim_input) = (m[0], m[1], m[2], m[3]);
            }
            rec.teacher_count = n;
        }
        if let Some(v) = &self.data.student_validation {
            let (mut r, mut i) = (0.0, 0.0);
            for y in &v.degraded {
                r += piqe(&self.restore(y)?)?;
                i += piqe(y)?;
            }
            let n = v.len();
            if n > 0 {
                rec.piqe_restored = Some(r / n as f64);
                rec.piqe_input = Some(i / n as f64);
            }
            rec.student_count = n;
        }
        Ok(rec)
    }

    /// Trains to completion, writing the loss log, per-epoch validation,
    /// and checkpoints under `out_dir`. Picks up from the current iteration,
    /// appending to existing logs.
    pub fn train(&mut self, out_dir: &Path) -> Result<TrainSummary> {
        self.train_with(out_dir, |_| {})
    }

    /// [`Trainer::train`] with a callback invoked after every iteration.
    pub fn train_with(&mut self, out_dir: &Path, mut progress: impl FnMut(&IterationRecord)) -> Result<TrainSummary> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut log = JsonLines::append(&out_dir.join(TRAIN_LOG))?;
        let mut metrics = JsonLines::append(&out_dir.join(METRICS_LOG))?;
        let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
        let mut summary = TrainSummary::default();
        let ipe = self.cfg.iters_per_epoch;
        while (self.state.iteration as usize) < self.cfg.total_iters() {
            let rec = self.iterate()?;
            log.write(&rec)?;
            progress(&rec);
            let done = self.state.iteration as usize;
            if done.is_multiple_of(ipe) {
                let epoch = done / ipe;
                let v = self.validate()?;
                metrics.write(&v)?;
                summary.validation.push(v);
                if self.cfg.checkpoint_every > 0 && epoch.is_multiple_of(self.cfg.checkpoint_every) {
                    let p = ckpt_dir.join(format!("epoch_{epoch:04}.safetensors"));
                    self.save(&p)?;
                    summary.checkpoints.push(p);
                }
            }
        }
        log.flush()?;
        metrics.flush()?;
        let final_path = ckpt_dir.join(FINAL_CHECKPOINT);
        self.save(&final_path)?;
        summary.final_checkpoint = Some(final_path);
        summary.iterations = self.state.iteration;
        summary.gen_steps = self.state.gen_steps;
        summary.dis_steps = self.state.dis_steps;
        Ok(summary)
    }
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    fn write<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let line = serde_json::to_string(v).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Test-time restoration of a single frame of any size. Odd dimensions are
/// padded by edge replication to even and cropped back afterwards.
pub fn restore_frame(gen: &Generator, y: &Frame, dtype: DType) -> Result<Frame> {
    let (c, h, w) = y.dims();
    if c != 3 {
        return Err(Error::param(format!("restore: expected a 3-channel frame, got {c}")));
    }
    let (ph, pw) = (h + h % 2, w + w % 2);
    let padded = if (ph, pw) == (h, w) {
        y.clone()
    } else {
        let mut data = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            let plane = y.plane(ch);
            for yy in 0..ph {
                let sy = yy.min(h - 1);
                data.extend((0..pw).map(|xx| plane[sy * w + xx.min(w - 1)]));
            }
        }
        Frame::new(c, ph, pw, data)?
    };
    let t = padded.to_tensor(dtype, &Device::Cpu)?.unsqueeze(0)?;
    let out = gen.restore_test(&t)?;
    let out = out.narrow(2, 0, h)?.narrow(3, 0, w)?.contiguous()?;
    let mut frames = Frame::from_tensor(&out)?;
    Ok(frames.remove(0))
}
