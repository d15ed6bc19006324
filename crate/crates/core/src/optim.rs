//! AdamW with decoupled weight decay, a linear warmup/decay schedule, and
//! early stopping on validation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decays, EncoderParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW settings {self:?}")))
        }
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<F: Real = f32> {
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamWState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let m: Vec<Tensor<F>> = params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_model(params: &EncoderParams<F>) -> Self {
        Self::new(params.named().into_iter().map(|(_, t)| t))
    }
}

fn update_tensor<F: Real>(
    w: &mut Tensor<F>,
    g: &Tensor<F>,
    m: &mut Tensor<F>,
    v: &mut Tensor<F>,
    c1: f64,
    c2: f64,
    config: &AdamWConfig,
    lr: f64,
    decay: f64,
) -> Result<()> {
    if w.shape() != g.shape() || w.shape() != m.shape() || w.shape() != v.shape() {
        return Err(Error::Dimension {
            op: "adamw_step",
            left: w.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let (ws, gs, ms, vs) = (w.data_mut(), g.data(), m.data_mut(), v.data_mut());
    for i in 0..ws.len() {
        let gi = gs[i].as_f64();
        let mi = b1 * ms[i].as_f64() + (1.0 - b1) * gi;
        let vi = b2 * vs[i].as_f64() + (1.0 - b2) * gi * gi;
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        let wi = ws[i].as_f64();
        ws[i] = F::of(wi - lr * (m_hat / (v_hat.sqrt() + config.eps) + decay * wi));
        ms[i] = F::of(mi);
        vs[i] = F::of(vi);
    }
    Ok(())
}

/// One AdamW step over parallel slices of parameters and gradients.
/// `decay_mask[i]` selects whether tensor `i` receives weight decay.
pub fn adamw_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    decay_mask: &[bool],
    state: &mut AdamWState<F>,
    config: &AdamWConfig,
    lr_t: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || decay_mask.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension {
            op: "adamw_step tensor count",
            left: vec![n],
            right: vec![grads.len(), decay_mask.len(), state.m.len()],
        });
    }
    for g in grads {
        g.check_finite("adamw gradient")?;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..n {
        let decay = if decay_mask[i] { config.weight_decay } else { 0.0 };
        update_tensor(
            params[i],
            grads[i],
            &mut state.m[i],
            &mut state.v[i],
            c1,
            c2,
            config,
            lr_t,
            decay,
        )?;
    }
    Ok(())
}

/// AdamW over a whole model; biases and layer-norm parameters skip decay.
pub fn adamw_step_model<F: Real>(
    params: &mut EncoderParams<F>,
    grads: &EncoderParams<F>,
    state: &mut AdamWState<F>,
    config: &AdamWConfig,
    lr_t: f64,
) -> Result<()> {
    let grads = grads.named();
    let mut named = params.named_mut();
    if named.len() != grads.len() || named.iter().zip(&grads).any(|(a, b)| a.0 != b.0) {
        return Err(Error::Config("gradient names do not match parameters".into()));
    }
    let mask: Vec<bool> = named.iter().map(|(n, _)| decays(n)).collect();
    let mut tensors: Vec<&mut Tensor<F>> = named.iter_mut().map(|(_, t)| &mut **t).collect();
    let grads: Vec<&Tensor<F>> = grads.into_iter().map(|(_, g)| g).collect();
    adamw_step(&mut tensors, &grads, &mask, state, config, lr_t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl ScheduleConfig {
    pub fn new(warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if total_steps <= warmup_steps {
            return Err(Error::Config(format!(
                "total_steps {total_steps} must exceed warmup_steps {warmup_steps}"
            )));
        }
        Ok(Self {
            warmup_steps,
            total_steps,
        })
    }

    /// Warmup as a fraction of the total, rounded down.
    pub fn with_warmup_fraction(fraction: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("warmup fraction {fraction} not in [0, 1)")));
        }
        Self::new((fraction * total_steps as f64).floor() as u64, total_steps)
    }
}

/// Linear ramp from 0 over the warmup, then linear decay to 0 at `total_steps`.
pub fn lr_at_step(step: u64, base_lr: f64, schedule: &ScheduleConfig) -> f64 {
    let ScheduleConfig {
        warmup_steps: w,
        total_steps: t,
    } = *schedule;
    if step < w {
        base_lr * step as f64 / w as f64
    } else {
        base_lr * (t.saturating_sub(step) as f64 / (t - w) as f64).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue { improved: bool },
    Stop,
}

/// Patience counter over a metric to minimize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    pub evaluations: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            bad_epochs: 0,
            evaluations: 0,
        }
    }

    pub fn update(&mut self, metric: f64) -> Result<StopDecision> {
        if metric.is_nan() {
            return Err(Error::Divergence {
                step: self.evaluations,
                loss: metric,
            });
        }
        let epoch = self.evaluations;
        self.evaluations += 1;
        let improved = self.best.is_none_or(|b| metric < b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs >= self.patience {
            Ok(StopDecision::Stop)
        } else {
            Ok(StopDecision::Continue { improved })
        }
    }
}
