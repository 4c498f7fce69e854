//! Minibatch training loop shared by every model.
//!
//! Each batch slot computes its gradient independently (in parallel when the
//! `parallel` feature is on); slot gradients are then summed in slot order, so
//! the result is identical whatever the thread count.

use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::optim::{accumulate, scale, Adam, ConvGrad, Schedule};
use crate::error::{Error, Result};

/// Loss of one sample, split into named components.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub total: f64,
    pub components: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub components: Vec<f64>,
}

/// Per-step loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub component_names: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,total");
        for n in &self.component_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:.9}", r.step, r.lr, r.total));
            for c in &r.components {
                out.push_str(&format!(",{c:.9}"));
            }
            out.push('\n');
        }
        out
    }

    /// Mean total loss over the first / last `n` steps.
    pub fn head_tail_means(&self, n: usize) -> (f64, f64) {
        let n = n.clamp(1, self.records.len().max(1));
        let mean = |rs: &[StepRecord]| rs.iter().map(|r| r.total).sum::<f64>() / rs.len().max(1) as f64;
        (
            mean(&self.records[..n.min(self.records.len())]),
            mean(&self.records[self.records.len().saturating_sub(n)..]),
        )
    }

    /// Mean of one component over a window of steps.
    pub fn component_mean(&self, component: usize, steps: std::ops::Range<usize>) -> f64 {
        let rs = &self.records[steps.start.min(self.records.len())..steps.end.min(self.records.len())];
        rs.iter().map(|r| r.components[component]).sum::<f64>() / rs.len().max(1) as f64
    }
}

/// Models whose parameters live in a fixed sequence of convolutions.
pub trait Parameters: Sync {
    fn convs(&self) -> Vec<&Conv2d>;
    fn convs_mut(&mut self) -> Vec<&mut Conv2d>;
}

#[cfg(feature = "parallel")]
fn map_slots<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_slots<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Runs `schedule.steps` Adam steps. `sample(model, step, slot)` returns the
/// loss and parameter gradients of one batch element; batch losses and
/// gradients are averaged over the slots.
pub fn fit<M, F>(model: &mut M, schedule: &Schedule, component_names: &[&str], sample: F) -> Result<TrainLog>
where
    M: Parameters,
    F: Fn(&M, usize, usize) -> Result<(SampleLoss, Vec<ConvGrad>)> + Sync + Send,
{
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut adam = Adam::new(model.convs().into_iter());
    let mut log = TrainLog {
        component_names: component_names.iter().map(|s| s.to_string()).collect(),
        records: Vec::with_capacity(schedule.steps),
    };
    let b = schedule.batch_size;
    for step in 0..schedule.steps {
        let results = {
            let m: &M = model;
            map_slots(b, |slot| sample(m, step, slot))
        };
        let mut grads: Option<Vec<ConvGrad>> = None;
        let mut total = 0.0;
        let mut components = vec![0.0; component_names.len()];
        for r in results {
            let (loss, g) = r?;
            total += loss.total;
            for (c, v) in components.iter_mut().zip(&loss.components) {
                *c += v;
            }
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => accumulate(acc, &g),
            }
        }
        total /= b as f64;
        components.iter_mut().for_each(|c| *c /= b as f64);
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        let mut grads = grads.expect("non-empty batch");
        scale(&mut grads, 1.0 / b as f32);
        if grads.iter().any(|g| g.w.iter().chain(&g.b).any(|v| !v.is_finite())) {
            return Err(Error::Diverged { step, loss: total });
        }
        let lr = schedule.lr_at(step);
        adam.step(model.convs_mut(), &grads, lr);
        if step % 100 == 0 || step + 1 == schedule.steps {
            log::debug!("step {step}: loss {total:.5} lr {lr:.2e}");
        }
        log.records.push(StepRecord {
            step,
            lr,
            total,
            components,
        });
    }
    Ok(log)
}
