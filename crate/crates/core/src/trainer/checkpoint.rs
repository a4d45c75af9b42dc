use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::tensorfile;

use super::adam::Adam;
use super::{TrainConfig, TrainState};

pub const CHECKPOINT_SCHEMA: &str = "turbda-checkpoint/1";

fn opt_tensors(prefix: &str, opt: &Adam, out: &mut Vec<(String, Tensor)>) -> Result<()> {
    for (i, (name, _)) in opt.vars.iter().enumerate() {
        out.push((format!("{prefix}.m.{name}"), opt.m[i].clone()));
        out.push((format!("{prefix}.v.{name}"), opt.v[i].clone()));
    }
    let steps: Vec<i64> = opt.steps.iter().map(|&s| s as i64).collect();
    out.push((format!("{prefix}.steps"), Tensor::new(steps, &Device::Cpu)?));
    Ok(())
}

/// Parameters (shared groups once), spectral-norm vectors, both optimizer
/// states, and counters.
pub fn save_checkpoint(state: &TrainState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let nets = &state.nets;
    let mut tensors: Vec<(String, Tensor)> = nets
        .all_vars()
        .into_iter()
        .map(|(n, v)| (n, v.as_tensor().clone()))
        .collect();
    for (name, layer) in nets.discriminators.sn_states("disc") {
        tensors.push((name, Tensor::new(layer.u(), &Device::Cpu)?));
    }
    opt_tensors("opt_gen", &state.opt_gen, &mut tensors)?;
    opt_tensors("opt_dis", &state.opt_dis, &mut tensors)?;
    let meta: HashMap<String, String> = [
        ("schema", CHECKPOINT_SCHEMA.to_string()),
        ("iteration", state.iteration.to_string()),
        ("gen_steps", state.gen_steps.to_string()),
        ("dis_steps", state.dis_steps.to_string()),
        ("config", cfg.to_toml()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    tensorfile::write(path, &tensors, meta)
}

struct Reader<'a> {
    path: &'a Path,
    tensors: HashMap<String, Tensor>,
    meta: HashMap<String, String>,
}

impl Reader<'_> {
    fn bad(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| self.bad(format!("missing metadata key {key}")))
    }

    fn counter(&self, key: &str) -> Result<u64> {
        self.meta(key)?
            .parse()
            .map_err(|e| self.bad(format!("metadata {key}: {e}")))
    }

    /// Takes `name`, checking it against the live tensor's shape and dtype.
    fn take(&mut self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self
            .tensors
            .remove(name)
            .ok_or_else(|| Error::Schema(format!("{}: missing tensor {name}", self.path.display())))?;
        if t.dims() != like.dims() || t.dtype() != like.dtype() {
            return Err(Error::Schema(format!(
                "{}: tensor {name} is {:?} {:?}, expected {:?} {:?}",
                self.path.display(),
                t.dtype(),
                t.dims(),
                like.dtype(),
                like.dims()
            )));
        }
        Ok(t)
    }

    fn restore_opt(&mut self, prefix: &str, opt: &mut Adam) -> Result<()> {
        for i in 0..opt.vars.len() {
            let name = opt.vars[i].0.clone();
            opt.m[i] = self.take(&format!("{prefix}.m.{name}"), &opt.m[i])?;
            opt.v[i] = self.take(&format!("{prefix}.v.{name}"), &opt.v[i])?;
        }
        let like = Tensor::zeros(opt.steps.len(), DType::I64, &Device::Cpu)?;
        let steps = self.take(&format!("{prefix}.steps"), &like)?.to_vec1::<i64>()?;
        opt.steps = steps.into_iter().map(|s| s as u64).collect();
        Ok(())
    }
}

/// Rebuilds the networks from the stored config and fills in every saved
/// value. Shared parameter groups are loaded into the one storage both
/// roles reference, so aliasing survives the round trip.
pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let (tensors, meta) = tensorfile::read(path)?;
    let mut r = Reader { path, tensors, meta };
    let schema = r.meta("schema").map_err(|_| Error::Schema(format!("{}: no schema tag", path.display())))?;
    if schema != CHECKPOINT_SCHEMA {
        return Err(Error::Schema(format!(
            "{}: checkpoint schema `{schema}` is not supported (expected `{CHECKPOINT_SCHEMA}`)",
            path.display()
        )));
    }
    let cfg = TrainConfig::from_toml(r.meta("config")?)?;
    let mut state = TrainState::new(&cfg)?;
    for (name, var) in state.nets.all_vars() {
        let t = r.take(&name, var.as_tensor())?;
        var.set(&t)?;
    }
    for (name, layer) in state.nets.discriminators.sn_states("disc") {
        let like = Tensor::new(layer.u(), &Device::Cpu)?;
        layer.set_u(r.take(&name, &like)?.to_vec1::<f64>()?)?;
    }
    r.restore_opt("opt_gen", &mut state.opt_gen)?;
    r.restore_opt("opt_dis", &mut state.opt_dis)?;
    state.iteration = r.counter("iteration")?;
    state.gen_steps = r.counter("gen_steps")?;
    state.dis_steps = r.counter("dis_steps")?;
    if let Some(extra) = r.tensors.keys().next() {
        return Err(Error::Schema(format!("{}: unexpected tensor {extra}", path.display())));
    }
    Ok((cfg, state))
}
