use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Real, Tensor};
use crate::error::{Error, Result};

fn dim_err<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn finite<F: Real>(t: Tensor<F>, op: &'static str) -> Result<Tensor<F>> {
    t.check_finite(op)?;
    Ok(t)
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

enum Layout {
    /// a[rows×k] with a shared b; leading axes of `a` flattened into rows.
    Shared { rows: usize, k: usize, n: usize },
    /// a[B×m×k] against b[B×…] per leading index.
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

fn matmul_layout<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Layout> {
    let k = a.last_dim();
    match (a.rank(), b.rank()) {
        (2 | 3, 2) if b.shape()[0] == k => Ok(Layout::Shared {
            rows: a.rows(),
            k,
            n: b.shape()[1],
        }),
        (3, 3) if a.shape()[0] == b.shape()[0] && b.shape()[1] == k => Ok(Layout::Batched {
            batch: a.shape()[0],
            m: a.shape()[1],
            k,
            n: b.shape()[2],
        }),
        _ => Err(dim_err("matmul", a, b)),
    }
}

fn out_shape(a: &[usize], n: usize) -> Vec<usize> {
    let mut s = a.to_vec();
    *s.last_mut().unwrap() = n;
    s
}

/// `a · b`. A rank-3 `a` against a rank-2 `b` applies `b` to every row; two
/// rank-3 operands multiply per leading index.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let shape = match matmul_layout(a, b)? {
        Layout::Shared { n, .. } => out_shape(a.shape(), n),
        Layout::Batched { batch, m, n, .. } => vec![batch, m, n],
    };
    let mut out = vec![F::zero(); shape.iter().product()];
    match matmul_layout(a, b)? {
        Layout::Shared { rows, k, n } => gemm_nn(a.data(), b.data(), &mut out, rows, k, n),
        Layout::Batched { batch, m, k, n } => {
            for i in 0..batch {
                gemm_nn(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
    }
    finite(Tensor::from_parts(shape, out), "matmul")
}

fn matmul_grads<F: Real>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    g: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut ga = vec![F::zero(); a.len()];
    let mut gb = vec![F::zero(); b.len()];
    match matmul_layout(a, b)? {
        Layout::Shared { rows, k, n } => {
            if g.len() != rows * n {
                return Err(dim_err("matmul backward", a, g));
            }
            gemm_nt(g.data(), b.data(), &mut ga, rows, n, k);
            gemm_tn(a.data(), g.data(), &mut gb, rows, k, n);
        }
        Layout::Batched { batch, m, k, n } => {
            if g.shape() != [batch, m, n] {
                return Err(dim_err("matmul backward", a, g));
            }
            for i in 0..batch {
                let (ra, rb, rg) = (i * m * k..(i + 1) * m * k, i * k * n..(i + 1) * k * n, i * m * n..(i + 1) * m * n);
                gemm_nt(&g.data()[rg.clone()], &b.data()[rb.clone()], &mut ga[ra.clone()], m, n, k);
                gemm_tn(&a.data()[ra], &g.data()[rg], &mut gb[rb], m, k, n);
            }
        }
    }
    Ok((
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    ))
}

#[derive(Debug, Default, Clone)]
pub struct MatMul<F: Real> {
    inputs: Option<(Tensor<F>, Tensor<F>)>,
}

impl<F: Real> MatMul<F> {
    pub fn new() -> Self {
        Self { inputs: None }
    }

    pub fn forward(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let out = matmul(a, b)?;
        self.inputs = Some((a.clone(), b.clone()));
        Ok(out)
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (a, b) = self
            .inputs
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("matmul"))?;
        matmul_grads(a, b, upstream)
    }
}

// ---------------------------------------------------------------------------
// matmul against a transposed right operand
// ---------------------------------------------------------------------------

fn bt_layout<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Layout> {
    let k = a.last_dim();
    match (a.rank(), b.rank()) {
        (2 | 3, 2) if b.shape()[1] == k => Ok(Layout::Shared {
            rows: a.rows(),
            k,
            n: b.shape()[0],
        }),
        (3, 3) if a.shape()[0] == b.shape()[0] && b.shape()[2] == k => Ok(Layout::Batched {
            batch: a.shape()[0],
            m: a.shape()[1],
            k,
            n: b.shape()[1],
        }),
        _ => Err(dim_err("matmul_bt", a, b)),
    }
}

/// `a · bᵀ` where `b` is stored `[n×k]` (or `[B×n×k]` batched).
pub fn matmul_bt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let layout = bt_layout(a, b)?;
    let shape = match layout {
        Layout::Shared { n, .. } => out_shape(a.shape(), n),
        Layout::Batched { batch, m, n, .. } => vec![batch, m, n],
    };
    let mut out = vec![F::zero(); shape.iter().product()];
    match layout {
        Layout::Shared { rows, k, n } => gemm_nt(a.data(), b.data(), &mut out, rows, k, n),
        Layout::Batched { batch, m, k, n } => {
            for i in 0..batch {
                gemm_nt(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * n * k..(i + 1) * n * k],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
    }
    finite(Tensor::from_parts(shape, out), "matmul_bt")
}

#[derive(Debug, Default, Clone)]
pub struct MatMulBt<F: Real> {
    inputs: Option<(Tensor<F>, Tensor<F>)>,
}

impl<F: Real> MatMulBt<F> {
    pub fn new() -> Self {
        Self { inputs: None }
    }

    pub fn forward(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        let out = matmul_bt(a, b)?;
        self.inputs = Some((a.clone(), b.clone()));
        Ok(out)
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
        let (a, b) = self
            .inputs
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("matmul_bt"))?;
        let mut ga = vec![F::zero(); a.len()];
        let mut gb = vec![F::zero(); b.len()];
        match bt_layout(a, b)? {
            Layout::Shared { rows, k, n } => {
                if upstream.len() != rows * n {
                    return Err(dim_err("matmul_bt backward", a, upstream));
                }
                // ga = g·b ; gb = gᵀ·a
                gemm_nn(upstream.data(), b.data(), &mut ga, rows, n, k);
                gemm_tn(upstream.data(), a.data(), &mut gb, rows, n, k);
            }
            Layout::Batched { batch, m, k, n } => {
                if upstream.shape() != [batch, m, n] {
                    return Err(dim_err("matmul_bt backward", a, upstream));
                }
                for i in 0..batch {
                    let (ra, rb, rg) = (i * m * k..(i + 1) * m * k, i * n * k..(i + 1) * n * k, i * m * n..(i + 1) * m * n);
                    let g = &upstream.data()[rg];
                    gemm_nn(g, &b.data()[rb.clone()], &mut ga[ra.clone()], m, n, k);
                    gemm_tn(g, &a.data()[ra], &mut gb[rb], m, n, k);
                }
            }
        }
        Ok((
            Tensor::from_parts(a.shape().to_vec(), ga),
            Tensor::from_parts(b.shape().to_vec(), gb),
        ))
    }
}

// ---------------------------------------------------------------------------
// bias helpers
// ---------------------------------------------------------------------------

/// `x + bias` broadcast over the innermost axis.
pub fn add_bias<F: Real>(x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    if bias.rank() != 1 || bias.len() != x.last_dim() {
        return Err(dim_err("add_bias", x, bias));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    finite(out, "add_bias")
}

/// Sum over all rows, the gradient of a broadcast bias.
pub fn sum_rows<F: Real>(g: &Tensor<F>) -> Tensor<F> {
    let n = g.last_dim();
    let mut out = vec![F::zero(); n];
    for row in g.data().chunks(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![n], out)
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

pub fn softmax_rows<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    x.check_finite("softmax input")?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(x.last_dim()) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    finite(out, "softmax")
}

#[derive(Debug, Default, Clone)]
pub struct Softmax<F: Real> {
    output: Option<Tensor<F>>,
}

impl<F: Real> Softmax<F> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = softmax_rows(x)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn output(&self) -> Option<&Tensor<F>> {
        self.output.as_ref()
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<Tensor<F>> {
        let y = self
            .output
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("softmax"))?;
        y.same_shape("softmax backward", upstream)?;
        let n = y.last_dim();
        let mut gx = upstream.clone();
        for (g, yr) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
            let dot: F = g.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for (gv, &yv) in g.iter_mut().zip(yr) {
                *gv = yv * (*gv - dot);
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct LayerNormCache<F: Real> {
    normalized: Tensor<F>,
    inv_std: Vec<F>,
    gain: Tensor<F>,
}

/// Per-row normalization followed by an affine map. A row whose variance
/// plus `eps` is exactly zero normalizes to zeros (the output equals `shift`).
pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    shift: &Tensor<F>,
    eps: f64,
) -> Result<Tensor<F>> {
    LayerNorm::new(eps).forward(x, gain, shift)
}

#[derive(Debug, Clone)]
pub struct LayerNorm<F: Real> {
    eps: f64,
    cache: Option<LayerNormCache<F>>,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(eps: f64) -> Self {
        Self { eps, cache: None }
    }

    pub fn forward(
        &mut self,
        x: &Tensor<F>,
        gain: &Tensor<F>,
        shift: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let h = x.last_dim();
        if gain.rank() != 1 || gain.len() != h {
            return Err(dim_err("layer_norm gain", x, gain));
        }
        if shift.rank() != 1 || shift.len() != h {
            return Err(dim_err("layer_norm shift", x, shift));
        }
        let eps = F::of(self.eps);
        let hf = F::of(h as f64);
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in normalized.data_mut().chunks_mut(h) {
            let mean = row.iter().copied().sum::<F>() / hf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / hf;
            let denom = (var + eps).sqrt();
            let inv = if denom > F::zero() {
                denom.recip()
            } else {
                F::zero()
            };
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let mut y = normalized.clone();
        for row in y.data_mut().chunks_mut(h) {
            for ((v, &g), &s) in row.iter_mut().zip(gain.data()).zip(shift.data()) {
                *v = *v * g + s;
            }
        }
        let y = finite(y, "layer_norm")?;
        self.cache = Some(LayerNormCache {
            normalized,
            inv_std,
            gain: gain.clone(),
        });
        Ok(y)
    }

    /// Returns `(d_x, d_gain, d_shift)`.
    pub fn backward(&self, upstream: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("layer_norm"))?;
        cache.normalized.same_shape("layer_norm backward", upstream)?;
        let h = upstream.last_dim();
        let hf = F::of(h as f64);
        let mut d_gain = vec![F::zero(); h];
        let mut d_shift = vec![F::zero(); h];
        let mut dx = upstream.clone();
        for ((g_row, xhat), &inv) in dx
            .data_mut()
            .chunks_mut(h)
            .zip(cache.normalized.data().chunks(h))
            .zip(&cache.inv_std)
        {
            let mut sum_g = F::zero();
            let mut sum_gx = F::zero();
            for j in 0..h {
                d_gain[j] += g_row[j] * xhat[j];
                d_shift[j] += g_row[j];
                let gxhat = g_row[j] * cache.gain.data()[j];
                g_row[j] = gxhat;
                sum_g += gxhat;
                sum_gx += gxhat * xhat[j];
            }
            for j in 0..h {
                g_row[j] = inv / hf * (hf * g_row[j] - sum_g - xhat[j] * sum_gx);
            }
        }
        Ok((
            dx,
            Tensor::from_parts(vec![h], d_gain),
            Tensor::from_parts(vec![h], d_shift),
        ))
    }
}

// ---------------------------------------------------------------------------
// gelu
// ---------------------------------------------------------------------------

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| {
        let v = v.as_f64();
        F::of(v * normal_cdf(v))
    })
}

#[derive(Debug, Default, Clone)]
pub struct Gelu<F: Real> {
    input: Option<Tensor<F>>,
}

impl<F: Real> Gelu<F> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = finite(gelu(x), "gelu")?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("gelu"))?;
        x.same_shape("gelu backward", upstream)?;
        let mut gx = upstream.clone();
        for (g, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
            let v = xv.as_f64();
            let d = normal_cdf(v) + v * FRAC_1_SQRT_2PI * (-0.5 * v * v).exp();
            *g = F::of(g.as_f64() * d);
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum DropoutState<F: Real> {
    Idle,
    Identity,
    Masked(Vec<F>),
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` during training so
/// evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<F: Real> {
    rate: f64,
    state: DropoutState<F>,
}

impl<F: Real> Dropout<F> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self {
            rate,
            state: DropoutState::Idle,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<F>,
        rng: &mut R,
        training: bool,
    ) -> Result<Tensor<F>> {
        if !training || self.rate == 0.0 {
            self.state = DropoutState::Identity;
            return Ok(x.clone());
        }
        let keep = F::of(1.0 / (1.0 - self.rate));
        let mask: Vec<F> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.state = DropoutState::Masked(mask);
        Ok(y)
    }

    pub fn backward(&self, upstream: &Tensor<F>) -> Result<Tensor<F>> {
        match &self.state {
            DropoutState::Idle => Err(Error::BackwardBeforeForward("dropout")),
            DropoutState::Identity => Ok(upstream.clone()),
            DropoutState::Masked(mask) => {
                if mask.len() != upstream.len() {
                    return Err(Error::Dimension {
                        op: "dropout backward",
                        left: vec![mask.len()],
                        right: upstream.shape().to_vec(),
                    });
                }
                let mut g = upstream.clone();
                for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                Ok(g)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean over rows of `-log softmax(logits)[target]`, via log-sum-exp.
pub fn cross_entropy_from_logits<F: Real>(logits: &Tensor<F>, targets: &[usize]) -> Result<F> {
    CrossEntropy::new().forward(logits, targets)
}

#[derive(Debug, Default, Clone)]
pub struct CrossEntropy<F: Real> {
    cache: Option<(Tensor<F>, Vec<usize>)>,
}

impl<F: Real> CrossEntropy<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, logits: &Tensor<F>, targets: &[usize]) -> Result<F> {
        logits.check_finite("cross_entropy input")?;
        let classes = logits.last_dim();
        if targets.len() != logits.rows() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: logits.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some((index, &label)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
            return Err(Error::Label {
                index,
                label,
                classes,
            });
        }
        let mut probs = logits.clone();
        let mut total = 0.0f64;
        for (row, &t) in probs.data_mut().chunks_mut(classes).zip(targets) {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t].as_f64();
            for v in row.iter_mut() {
                *v = F::of((v.as_f64() - lse).exp());
            }
        }
        let loss = total / targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        self.cache = Some((probs, targets.to_vec()));
        Ok(F::of(loss))
    }

    /// Gradient w.r.t. the logits, scaled by the upstream scalar.
    pub fn backward(&self, upstream: F) -> Result<Tensor<F>> {
        let (probs, targets) = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("cross_entropy"))?;
        let classes = probs.last_dim();
        let scale = upstream / F::of(targets.len() as f64);
        let mut g = probs.clone();
        for (row, &t) in g.data_mut().chunks_mut(classes).zip(targets) {
            row[t] -= F::one();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        Ok(g)
    }

    pub fn probabilities(&self) -> Option<&Tensor<F>> {
        self.cache.as_ref().map(|(p, _)| p)
    }
}

/// Mean squared error between a single-column prediction and targets.
pub fn mse<F: Real>(pred: &Tensor<F>, targets: &[F]) -> Result<F> {
    MeanSquaredError::new().forward(pred, targets)
}

#[derive(Debug, Default, Clone)]
pub struct MeanSquaredError<F: Real> {
    cache: Option<(Tensor<F>, Vec<F>)>,
}

impl<F: Real> MeanSquaredError<F> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    pub fn forward(&mut self, pred: &Tensor<F>, targets: &[F]) -> Result<F> {
        if pred.len() != targets.len() || targets.is_empty() {
            return Err(Error::Dimension {
                op: "mse",
                left: pred.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = pred
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| (p - t).as_f64().powi(2))
            .sum::<f64>()
            / targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("mse"));
        }
        self.cache = Some((pred.clone(), targets.to_vec()));
        Ok(F::of(loss))
    }

    pub fn backward(&self, upstream: F) -> Result<Tensor<F>> {
        let (pred, targets) = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("mse"))?;
        let scale = upstream * F::of(2.0 / targets.len() as f64);
        let mut g = pred.clone();
        for (v, &t) in g.data_mut().iter_mut().zip(targets) {
            *v = (*v - t) * scale;
        }
        Ok(g)
    }
}
