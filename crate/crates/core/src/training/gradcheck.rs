//! Finite-difference checks of the analytic loss gradient.

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{elbo_loss, LossMode};
use super::schedule::ScheduleState;
use crate::error::Result;
use crate::nn::{Model, PARAM_GROUPS};
use crate::score::Segment;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// One-sided differences disagree: the loss has a kink here (a ReLU or
    /// max-pool tie) and the gradient is not defined.
    pub kink: bool,
}

impl GradCheck {
    /// |a - n| / max(|a|, |n|), with a floor that keeps vanishing gradients
    /// from producing spurious failures.
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-7);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Loss with every random draw fixed by `seed`, so repeated evaluations are
/// the same function of the parameters.
pub fn fixed_loss(model: &Model, batch: &[Segment], sched: &ScheduleState, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(elbo_loss(model, batch, sched, LossMode::TRAIN, &mut rng)?.total)
}

fn set_entry(var: &Var, index: usize, value: f64) -> Result<()> {
    let t = var.as_tensor();
    let dtype = t.dtype();
    let mut flat: Vec<f64> = t.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
    flat[index] = value;
    let new = Tensor::from_vec(flat, t.dims(), t.device())?.to_dtype(dtype)?;
    var.set(&new)?;
    Ok(())
}

fn entry(t: &Tensor, index: usize) -> Result<f64> {
    Ok(t.flatten_all()?.to_dtype(candle_core::DType::F64)?.get(index)?.to_scalar::<f64>()?)
}

/// Compares analytic and central-difference gradients for `count` scalar
/// parameters, sampled round-robin over the parameter groups. Use a model
/// built in double precision.
pub fn gradient_check(
    model: &Model,
    batch: &[Segment],
    sched: &ScheduleState,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<GradCheck>> {
    let loss = fixed_loss(model, batch, sched, seed)?;
    let grads = loss.backward()?;
    let mut pick = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let groups: Vec<Vec<(String, Var)>> = PARAM_GROUPS
        .iter()
        .map(|g| model.params.group(g))
        .filter(|g| !g.is_empty())
        .collect();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let group = &groups[i % groups.len()];
        let (name, var) = &group[pick.random_range(0..group.len())];
        let index = pick.random_range(0..var.elem_count());
        let analytic = match grads.get(var) {
            Some(g) => entry(g, index)?,
            None => 0.0,
        };
        let orig = entry(var.as_tensor(), index)?;
        let base = entry(&loss, 0)?;
        set_entry(var, index, orig + step)?;
        let up = entry(&fixed_loss(model, batch, sched, seed)?, 0)?;
        set_entry(var, index, orig - step)?;
        let down = entry(&fixed_loss(model, batch, sched, seed)?, 0)?;
        set_entry(var, index, orig)?;
        let (right, left) = ((up - base) / step, (base - down) / step);
        let spread = right.abs().max(left.abs()).max(1e-7);
        out.push(GradCheck {
            param: name.clone(),
            index,
            analytic,
            numeric: (up - down) / (2.0 * step),
            kink: (right - left).abs() / spread > 0.1,
        });
    }
    Ok(out)
}

/// Squared gradient norm per parameter group for one loss evaluation.
pub fn group_gradient_norms(model: &Model, batch: &[Segment], sched: &ScheduleState, seed: u64) -> Result<Vec<(String, f64)>> {
    let grads = fixed_loss(model, batch, sched, seed)?.backward()?;
    let mut out = Vec::new();
    for g in model.params.groups() {
        let mut sq = 0.0;
        for (_, var) in model.params.group(&g) {
            if let Some(t) = grads.get(&var) {
                sq += t.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            }
        }
        out.push((g, sq));
    }
    Ok(out)
}
