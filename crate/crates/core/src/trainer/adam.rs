use candle_core::{backprop::GradStore, Tensor};

use crate::error::{Error, Result};
use crate::nets::NamedVar;

/// Adam without weight decay, with per-parameter step counts and bias
/// correction. Parameters that receive no gradient are left untouched.
#[derive(Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub vars: Vec<NamedVar>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
}

impl Adam {
    pub fn new(vars: Vec<NamedVar>, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let m = vars
            .iter()
            .map(|(_, var)| var.zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        let steps = vec![0; vars.len()];
        Ok(Self {
            beta1,
            beta2,
            eps,
            vars,
            m,
            v,
            steps,
        })
    }

    /// Applies one update and returns how many parameters moved.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<usize> {
        let mut updated = 0;
        for i in 0..self.vars.len() {
            let var = &self.vars[i].1;
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Moments must not keep the backward graph alive.
            let g = &g.detach();
            let finite = g.abs()?.max_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !finite.is_finite() {
                return Err(Error::Numeric(format!("gradient of {} is not finite", self.vars[i].0)));
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = ((&self.m[i] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let denom = ((v.sqrt()? / bc2.sqrt())? + self.eps)?;
            let update = ((&m / denom)? * (lr / bc1))?;
            var.set(&(var.as_tensor().detach() - update)?)?;
            self.m[i] = m.detach();
            self.v[i] = v.detach();
            updated += 1;
        }
        Ok(updated)
    }
}
