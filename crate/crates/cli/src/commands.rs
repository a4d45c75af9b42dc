use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use turbda_core::iqa;
use turbda_core::trainer::{
    load_checkpoint, restore_frame, IterationRecord, TrainConfig, Trainer, ValidationRecord,
};
use turbda_core::turbsim::{build_dataset, list_pngs, Domain, SimConfig, MANIFEST_FILE};
use turbda_core::Frame;

use crate::plot::{self, Series};
use crate::rundir::RunDir;
use crate::{Cli, Command};

/// A command-line problem detected before any work starts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn require_dir(p: &Path, what: &str) -> Result<()> {
    if !p.is_dir() {
        return Err(usage(format!("{what} {} is not a directory", p.display())));
    }
    Ok(())
}

/// Refuses output locations inside an input directory.
fn separate(out: &Path, input: &Path) -> Result<()> {
    let (o, i) = (absolute(out)?, absolute(input)?);
    if o.starts_with(&i) {
        return Err(usage(format!(
            "output {} lies inside input directory {}",
            out.display(),
            input.display()
        )));
    }
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            clean_dir,
            count,
            domain,
            seed,
            out_dir,
            config,
        } => simulate(cli, clean_dir, *count, *domain, *seed, out_dir.as_deref(), config.as_deref()),
        Command::Train {
            config,
            overrides,
            resume,
        } => train(cli, config.as_deref(), overrides, resume.as_deref()),
        Command::Restore {
            checkpoint,
            input_dir,
            out_dir,
        } => restore(cli, checkpoint, input_dir, out_dir.as_deref()),
        Command::Evaluate {
            restored_dir,
            reference_dir,
        } => evaluate(cli, restored_dir, reference_dir.as_deref()),
    }
}

/// Snapshot of a `simulate` run. Passing the snapshot back as `--config`
/// reuses its simulator settings.
#[derive(Debug, Serialize, Deserialize)]
struct SimulateInputs {
    clean_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    count: Option<usize>,
    domain: Option<Domain>,
    seed: Option<u64>,
    #[serde(default)]
    sim: SimConfig,
}

fn simulate(
    cli: &Cli,
    clean_dir: &Path,
    count: usize,
    domain: Domain,
    seed: u64,
    out_dir: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    require_dir(clean_dir, "--clean-dir")?;
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let sim = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let inputs: SimulateInputs = toml::from_str(&text)
                .map_err(|e| turbda_core::Error::Config(vec![format!("{}: {}", p.display(), e.message())]))?;
            inputs.sim
        }
        None => SimConfig::default(),
    };
    separate(out_dir.unwrap_or(&cli.out_root), clean_dir)?;
    let run = RunDir::create(&cli.out_root, "simulate")?;
    let out = match out_dir {
        Some(p) => p.to_path_buf(),
        None => run.join("dataset"),
    };
    let inputs = SimulateInputs {
        clean_dir: Some(absolute(clean_dir)?),
        out_dir: Some(absolute(&out)?),
        count: Some(count),
        domain: Some(domain),
        seed: Some(seed),
        sim: sim.clone(),
    };
    run.write_snapshot(&toml::to_string_pretty(&inputs)?)?;

    let manifest = build_dataset(clean_dir, &out, count, domain, seed, &sim)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let (lo, hi) = manifest
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.d_r0), hi.max(r.d_r0)));
    let paired = manifest.records.iter().filter(|r| r.clean_path.is_some()).count();
    write_json(
        &run.join("summary.json"),
        &json!({
            "manifest": manifest_path,
            "domain": domain,
            "count": manifest.records.len(),
            "paired": paired,
            "d_r0_min": lo,
            "d_r0_max": hi,
        }),
    )?;
    run.finish()?;
    println!("manifest: {}", manifest_path.display());
    println!(
        "{} {} samples ({} paired), D/r0 in [{lo:.3}, {hi:.3}]",
        manifest.records.len(),
        domain,
        paired
    );
    println!("run: {}", run.path.display());
    Ok(())
}

fn train(cli: &Cli, config: Option<&Path>, overrides: &[String], resume: Option<&Path>) -> Result<()> {
    let (mut trainer, note) = match (config, resume) {
        (_, Some(ckpt)) => {
            if !overrides.is_empty() {
                return Err(usage("--set cannot be combined with --resume; the checkpoint carries its config"));
            }
            let t = Trainer::resume(ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
            let note = format!(
                "# resumed from {} at iteration {}\n",
                absolute(ckpt)?.display(),
                t.state.iteration
            );
            (t, note)
        }
        (Some(path), None) => {
            let mut cfg = TrainConfig::load(path)?.with_overrides(overrides)?;
            cfg.resolve_paths(&std::env::current_dir()?);
            (Trainer::new(cfg)?, String::new())
        }
        (None, None) => bail!(usage("either --config or --resume is required")),
    };
    let run = RunDir::create(&cli.out_root, "train")?;
    run.write_snapshot(&(note + &trainer.cfg.to_toml()))?;

    let total = trainer.cfg.total_iters();
    let ipe = trainer.cfg.iters_per_epoch;
    let every = (ipe / 5).max(1);
    let start = Instant::now();
    let mut records: Vec<IterationRecord> = Vec::new();
    eprintln!(
        "training {:?} for {total} iterations ({} epochs x {ipe}), starting at {}",
        trainer.cfg.mode, trainer.cfg.epochs, trainer.state.iteration
    );
    let summary = trainer.train_with(&run.path, |r| {
        let done = r.iteration as usize + 1;
        if done.is_multiple_of(every) || done == total {
            let r2 = &r.report;
            eprintln!(
                "[{:>7.1}s] iter {done}/{total} epoch {} lr {:.3e} total_gen {:.4} total_dis {:.4} dist {:.5}",
                start.elapsed().as_secs_f64(),
                r.epoch,
                r.lr,
                r2.total_gen,
                r2.total_dis,
                r2.dist
            );
        }
        records.push(r.clone());
    })?;
    for v in &summary.validation {
        eprintln!("epoch {}: {}", v.epoch, describe(v));
    }

    plot_losses(&run.join("loss_curves.png"), &records)?;
    plot_psnr(&run.join("psnr_per_epoch.png"), &summary.validation)?;
    let mut s = serde_json::to_value(&summary)?;
    s["elapsed_seconds"] = json!(start.elapsed().as_secs_f64());
    s["mode"] = json!(trainer.cfg.mode);
    write_json(&run.join("summary.json"), &s)?;
    run.finish()?;
    if let Some(p) = &summary.final_checkpoint {
        println!("checkpoint: {}", p.display());
    }
    println!("run: {}", run.path.display());
    Ok(())
}

fn describe(v: &ValidationRecord) -> String {
    let mut parts = Vec::new();
    if let (Some(r), Some(i)) = (v.psnr_restored, v.psnr_input) {
        parts.push(format!("psnr {r:.3} dB (input {i:.3})"));
    }
    if let (Some(r), Some(i)) = (v.ssim_restored, v.ssim_input) {
        parts.push(format!("ssim {r:.4} (input {i:.4})"));
    }
    if let (Some(r), Some(i)) = (v.piqe_restored, v.piqe_input) {
        parts.push(format!("piqe {r:.2} (input {i:.2})"));
    }
    if parts.is_empty() {
        "no validation data".into()
    } else {
        parts.join(", ")
    }
}

fn plot_losses(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let k = (records.len() / 50).max(1);
    let series = |label: &str, color, f: fn(&IterationRecord) -> f64| Series {
        label: label.into(),
        color,
        points: plot::moving_average(
            &records.iter().map(|r| (r.iteration as f64 + 1.0, f(r))).collect::<Vec<_>>(),
            k,
        ),
        markers: false,
    };
    plot::line_chart(
        path,
        &format!("losses (moving average {k})"),
        "iteration",
        &[
            series("total_gen", plot::BLUE, |r| r.report.total_gen),
            series("total_dis", plot::ORANGE, |r| r.report.total_dis),
            series("dist", plot::GREEN, |r| r.report.dist),
        ],
    )
}

fn plot_psnr(path: &Path, validation: &[ValidationRecord]) -> Result<()> {
    let series = |label: &str, color, f: fn(&ValidationRecord) -> Option<f64>| Series {
        label: label.into(),
        color,
        points: validation
            .iter()
            .filter_map(|v| f(v).map(|p| (v.epoch as f64, p)))
            .collect(),
        markers: true,
    };
    plot::line_chart(
        path,
        "held-out psnr (dB)",
        "epoch",
        &[
            series("restored", plot::BLUE, |v| v.psnr_restored),
            series("input", plot::ORANGE, |v| v.psnr_input),
        ],
    )
}

#[derive(Serialize)]
struct RestoreInputs {
    checkpoint: PathBuf,
    input_dir: PathBuf,
    out_dir: PathBuf,
}

fn restore(cli: &Cli, checkpoint: &Path, input_dir: &Path, out_dir: Option<&Path>) -> Result<()> {
    require_dir(input_dir, "--input-dir")?;
    let inputs = list_pngs(input_dir)?;
    if inputs.is_empty() {
        bail!("no PNG images in {}", input_dir.display());
    }
    separate(out_dir.unwrap_or(&cli.out_root), input_dir)?;
    let (cfg, state) = load_checkpoint(checkpoint)?;
    let run = RunDir::create(&cli.out_root, "restore")?;
    let out = match out_dir {
        Some(p) => p.to_path_buf(),
        None => run.join("restored"),
    };
    run.write_snapshot(&toml::to_string_pretty(&RestoreInputs {
        checkpoint: absolute(checkpoint)?,
        input_dir: absolute(input_dir)?,
        out_dir: absolute(&out)?,
    })?)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let dtype = cfg.precision.dtype();
    let mut failures = Vec::new();
    let mut restored = 0usize;
    for path in &inputs {
        let name = path.file_name().expect("listed file has a name");
        let result = Frame::load_png(path)
            .and_then(|y| restore_frame(&state.nets.generator, &y, dtype))
            .and_then(|x| x.save_png(&out.join(name)));
        match result {
            Ok(()) => restored += 1,
            Err(e) => {
                eprintln!("failed: {}: {e}", path.display());
                failures.push(json!({ "file": name.to_string_lossy(), "error": e.to_string() }));
            }
        }
    }
    write_json(
        &run.join("summary.json"),
        &json!({
            "inputs": inputs.len(),
            "restored": restored,
            "out_dir": out,
            "failures": failures,
        }),
    )?;
    run.finish()?;
    println!("restored {restored}/{} images into {}", inputs.len(), out.display());
    println!("run: {}", run.path.display());
    if restored == 0 {
        bail!("every input failed to restore");
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateInputs {
    restored_dir: PathBuf,
    reference_dir: Option<PathBuf>,
}

fn evaluate(cli: &Cli, restored_dir: &Path, reference_dir: Option<&Path>) -> Result<()> {
    require_dir(restored_dir, "--restored-dir")?;
    if let Some(r) = reference_dir {
        require_dir(r, "--reference-dir")?;
    }
    let report = iqa::evaluate(restored_dir, reference_dir)?;
    let run = RunDir::create(&cli.out_root, "evaluate")?;
    run.write_snapshot(&toml::to_string_pretty(&EvaluateInputs {
        restored_dir: absolute(restored_dir)?,
        reference_dir: reference_dir.map(absolute).transpose()?,
    })?)?;
    report.write_table(&run.join("metrics.csv"))?;
    write_json(&run.join("summary.json"), &report.summary())?;
    run.finish()?;
    for e in &report.errors {
        eprintln!("skipped: {e}");
    }
    let mut line = format!("{} images: mean PIQE {:.3}", report.count(), report.mean_piqe);
    if let (Some(p), Some(s)) = (report.mean_psnr, report.mean_ssim) {
        line += &format!(", mean PSNR {p:.3} dB, mean SSIM {s:.4}");
    }
    println!("{line}");
    println!("run: {}", run.path.display());
    Ok(())
}
