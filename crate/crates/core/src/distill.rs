//! Temperature-softened distributions and the teacher/student loss terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Real, Tensor};

const NORMALIZATION_TOL: f64 = 1e-5;
const Q_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            alpha: 0.5,
            epochs: 10,
            batch_size: 8,
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            warmup_fraction: 0.1,
            max_len: 128,
            seed: 42,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        check_alpha(self.alpha)?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive and warmup_fraction {} in [0, 1)",
                self.learning_rate, self.warmup_fraction
            )));
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {t}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `softmax(logits / T)` over the last axis.
pub fn soften<F: Real>(logits: &Tensor<F>, temperature: f64) -> Result<Tensor<F>> {
    check_temperature(temperature)?;
    let inv = F::of(1.0 / temperature);
    softmax_rows(&logits.map(|v| v * inv))
}

/// `Σ p·ln(p/q)`, with `0·ln(0/q) = 0` and `q` floored at 1e-12.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Dimension {
            op: "kl_divergence",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Distribution(format!(
                "{name} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(Q_FLOOR)).ln())
        .sum())
}

fn log_softmax_row(z: &[f64], inv_t: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * inv_t));
    let lse = max + z.iter().map(|&v| (v * inv_t - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v * inv_t - lse).collect()
}

/// Mean over rows of `KL(soften(teacher) ∥ soften(student))`, with the
/// cached softened distributions needed for the student gradient.
#[derive(Debug, Clone, Default)]
pub struct DistillationLoss<F: Real> {
    cache: Option<(Vec<usize>, Tensor<F>, Tensor<F>, f64)>,
}

impl<F: Real> DistillationLoss<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    /// `teacher` and `student` are `[N, C]`; the loss averages over all N rows.
    pub fn forward(&mut self, teacher: &Tensor<F>, student: &Tensor<F>, temperature: f64) -> Result<F> {
        check_temperature(temperature)?;
        if teacher.shape() != student.shape() {
            return Err(Error::Dimension {
                op: "distillation_loss",
                left: teacher.shape().to_vec(),
                right: student.shape().to_vec(),
            });
        }
        teacher.check_finite("distillation teacher logits")?;
        student.check_finite("distillation student logits")?;
        let rows = teacher.rows();
        if rows == 0 {
            return Err(Error::EmptyBatch("no positions selected for distillation".into()));
        }
        let c = teacher.last_dim();
        let inv_t = 1.0 / temperature;
        let mut total = 0.0;
        let mut pt = Vec::with_capacity(rows * c);
        let mut ps = Vec::with_capacity(rows * c);
        for r in 0..rows {
            let t: Vec<f64> = teacher.row(r).iter().map(|v| v.as_f64()).collect();
            let s: Vec<f64> = student.row(r).iter().map(|v| v.as_f64()).collect();
            let lt = log_softmax_row(&t, inv_t);
            let ls = log_softmax_row(&s, inv_t);
            for j in 0..c {
                let p = lt[j].exp();
                if p > 0.0 {
                    total += p * (lt[j] - ls[j]);
                }
                pt.push(F::of(p));
                ps.push(F::of(ls[j].exp()));
            }
        }
        let loss = (total / rows as f64).max(0.0);
        let shape = vec![rows, c];
        self.cache = Some((shape.clone(), Tensor::new(shape.clone(), pt)?, Tensor::new(shape, ps)?, temperature));
        Ok(F::of(loss))
    }

    /// Gradient with respect to the student logits: `upstream · (pS − pT) / (T·N)`.
    pub fn backward(&self, upstream: F) -> Result<Tensor<F>> {
        let (shape, pt, ps, t) = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("distillation loss"))?;
        let scale = F::of(upstream.as_f64() / (t * shape[0] as f64));
        let data = ps.data().iter().zip(pt.data()).map(|(&s, &t)| (s - t) * scale).collect();
        Tensor::new(shape.clone(), data)
    }

    pub fn teacher_probabilities(&self) -> Option<&Tensor<F>> {
        self.cache.as_ref().map(|c| &c.1)
    }
}

/// Distillation loss over the rows selected by `positions`.
pub fn distillation_loss<F: Real>(
    teacher: &Tensor<F>,
    student: &Tensor<F>,
    temperature: f64,
    positions: &[bool],
) -> Result<F> {
    if teacher.rows() != positions.len() {
        return Err(Error::Dimension {
            op: "distillation positions",
            left: vec![teacher.rows()],
            right: vec![positions.len()],
        });
    }
    let rows: Vec<usize> = (0..positions.len()).filter(|&i| positions[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyBatch("no positions selected for distillation".into()));
    }
    let pick = |x: &Tensor<F>| -> Result<Tensor<F>> {
        let data = rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
        Tensor::new(vec![rows.len(), x.last_dim()], data)
    };
    DistillationLoss::new().forward(&pick(teacher)?, &pick(student)?, temperature)
}

/// `α·T²·distill + (1−α)·ce`. The only place the `T²` factor is applied.
pub fn combined_loss(distill: f64, ce: f64, alpha: f64, temperature: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_temperature(temperature)?;
    Ok(alpha * temperature * temperature * distill + (1.0 - alpha) * ce)
}

/// Upstream gradients `(∂L/∂distill, ∂L/∂ce)` of [`combined_loss`].
pub fn combined_loss_weights(alpha: f64, temperature: f64) -> (f64, f64) {
    (alpha * temperature * temperature, 1.0 - alpha)
}
