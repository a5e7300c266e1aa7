//! AdamW with decoupled weight decay and a one-cycle schedule.
//!
//! The learning rate warms up linearly over the first 30% of the schedule,
//! then decays along a cosine; beta1 traverses its band in the opposite
//! direction, sitting at its minimum when the learning rate peaks.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numcore::params::{ParamId, ParamStore};

/// Optimizer hyperparameters. Defaults follow the training recipe used
/// throughout this crate: peak LR 1e-3, decoupled weight decay 0.01,
/// momentum band [0.85, 0.95].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamW {
    pub max_lr: f64,
    pub weight_decay: f64,
    pub beta1_min: f64,
    pub beta1_max: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the schedule spent warming up.
    pub warmup_frac: f64,
    /// Initial LR is max_lr / div_factor.
    pub div_factor: f64,
    /// Final LR is max_lr / final_div_factor.
    pub final_div_factor: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            max_lr: 1e-3,
            weight_decay: 0.01,
            beta1_min: 0.85,
            beta1_max: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            warmup_frac: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }
}

impl AdamW {
    /// One-cycle learning rate at schedule position `pos` in [0, 1].
    /// Linear ramp to `max_lr` at `warmup_frac`, cosine decay after.
    pub fn lr_at(&self, pos: f64) -> f64 {
        let init = self.max_lr / self.div_factor;
        let fin = self.max_lr / self.final_div_factor;
        if pos <= self.warmup_frac {
            init + (self.max_lr - init) * (pos / self.warmup_frac)
        } else {
            let t = (pos - self.warmup_frac) / (1.0 - self.warmup_frac);
            fin + (self.max_lr - fin) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
        }
    }

    /// beta1 at schedule position `pos`, cycling opposite to the LR: it
    /// bottoms out at `beta1_min` exactly when the LR peaks.
    pub fn beta1_at(&self, pos: f64) -> f64 {
        let band = self.beta1_max - self.beta1_min;
        if pos <= self.warmup_frac {
            self.beta1_max - band * (pos / self.warmup_frac)
        } else {
            let t = (pos - self.warmup_frac) / (1.0 - self.warmup_frac);
            self.beta1_max - band * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
        }
    }
}

/// First/second moment buffers plus the shared step counter.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimState {
    pub step: u64,
    m: HashMap<usize, Vec<f64>>,
    v: HashMap<usize, Vec<f64>>,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moment buffers keyed by parameter name, for checkpointing.
    pub fn export(&self, store: &ParamStore) -> (u64, Vec<(String, Vec<f64>, Vec<f64>)>) {
        let mut rows: Vec<(String, Vec<f64>, Vec<f64>)> = self
            .m
            .iter()
            .map(|(idx, m)| {
                let name = store.name(ParamId(*idx)).to_string();
                let v = self.v.get(idx).cloned().unwrap_or_default();
                (name, m.clone(), v)
            })
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        (self.step, rows)
    }

    /// Rebuilds moment buffers from checkpoint rows.
    pub fn import(
        store: &ParamStore,
        step: u64,
        rows: &[(String, Vec<f64>, Vec<f64>)],
    ) -> Result<Self> {
        let mut state = OptimState {
            step,
            ..Default::default()
        };
        for (name, m, v) in rows {
            let id = store
                .id_by_name(name)
                .ok_or_else(|| Error::data(format!("optimizer state names unknown parameter `{name}`")))?;
            state.m.insert(id.0, m.clone());
            state.v.insert(id.0, v.clone());
        }
        Ok(state)
    }
}

/// Applies one AdamW update to the listed parameters.
///
/// Every listed parameter must carry a populated gradient; weight decay is
/// decoupled (applied directly to the weights, scaled by the current LR).
/// `schedule_pos` must lie in [0, 1]. Bias correction uses the current-step
/// beta values.
pub fn adamw_step(
    opt: &AdamW,
    store: &mut ParamStore,
    ids: &[ParamId],
    state: &mut OptimState,
    schedule_pos: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&schedule_pos) {
        return Err(Error::contract(format!(
            "adamw_step: schedule_pos {schedule_pos} outside [0, 1]"
        )));
    }
    let lr = opt.lr_at(schedule_pos);
    let beta1 = opt.beta1_at(schedule_pos);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);

    for &id in ids {
        let numel = store.get(id).numel();
        let grad = match store.get(id).grad.clone() {
            Some(g) => g,
            None => return Err(Error::MissingGrad(store.name(id).to_string())),
        };
        let m = state.m.entry(id.0).or_insert_with(|| vec![0.0; numel]);
        let v = state.v.entry(id.0).or_insert_with(|| vec![0.0; numel]);
        let value = store.get_mut(id);
        for j in 0..numel {
            let g = grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            value.data[j] -=
                lr * (mhat / (vhat.sqrt() + opt.eps) + opt.weight_decay * value.data[j]);
        }
    }
    Ok(())
}
