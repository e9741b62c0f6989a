//! Monge-Ampère residual training.
//!
//! Each iteration samples a fresh batch from the source density, pushes it
//! through the network, and penalizes the residual
//! `log det J_T(x) − (log p(x) − log q(T(x)))` with a pointwise loss. The
//! parameters are updated by Adam with a geometrically decaying learning rate;
//! mixture variances can decay on the same schedule.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use crate::autodiff::PointLoss;

use crate::autodiff::{Eval, Graph, NodeRef, Tape};
use crate::densities::DensityModel;
use crate::error::{shape_err, Error, Result};
use crate::gradnet::{Bound, Checkpoint, GradNet};
use crate::linalg::{logdet_spd, DenseMatrix, DenseVector};
use crate::numfmt::to_json_exact;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Mixture variance at the first and last iteration. Both or neither.
    pub sigma2_start: Option<f64>,
    pub sigma2_end: Option<f64>,
    /// Also decay the source variance when the source is a mixture.
    pub decay_source_sigma2: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: PointLoss,
    /// Record the loss every this many iterations (the last one is always kept).
    pub eval_every: usize,
    /// Treat `log q(T(x))` as a constant when differentiating.
    pub detach_labels: bool,
    /// Rescale the gradient to this global norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            iterations: 2000,
            lr_start: 1e-2,
            lr_end: 1e-4,
            sigma2_start: None,
            sigma2_end: None,
            decay_source_sigma2: true,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: PointLoss::Squared,
            eval_every: 10,
            detach_labels: false,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 || self.iterations == 0 || self.eval_every == 0 {
            return bad("batch_size, iterations and eval_every must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!("need lr_start >= lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        match (self.sigma2_start, self.sigma2_end) {
            (None, None) => {}
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => {}
            (a, b) => return bad(format!("sigma2 schedule needs two positive endpoints, got {a:?} and {b:?}")),
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam needs 0 <= beta < 1 and eps > 0".into());
        }
        if let PointLoss::Huber { delta } = self.loss {
            if !(delta > 0.0) {
                return bad(format!("Huber delta must be positive, got {delta}"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate used at iteration `i`.
    pub fn lr_at(&self, i: usize) -> f64 {
        schedule(i, self.iterations - 1, self.lr_start, self.lr_end)
    }

    /// Mixture variance used at iteration `i`, if a schedule is configured.
    pub fn sigma2_at(&self, i: usize) -> Option<f64> {
        Some(schedule(i, self.iterations - 1, self.sigma2_start?, self.sigma2_end?))
    }
}

/// `v_start·(v_end/v_start)^(i/total)`; `total = 0` yields `v_start`.
pub fn schedule(i: usize, total: usize, v_start: f64, v_end: f64) -> f64 {
    if total == 0 || i == 0 {
        return v_start;
    }
    if i >= total {
        return v_end;
    }
    v_start * (v_end / v_start).powf(i as f64 / total as f64)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DenseMatrix>) -> Self {
        let m: Vec<_> = params.into_iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut DenseMatrix],
    grads: &[DenseMatrix],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(shape_err("adam_step", "gradient shape differs from parameter"));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *w -= lr * mh / (vh.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Scales `grads` down to global norm `max_norm` when larger. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Log-determinant of the Jacobian as used in the residual. Monotone nets
/// have SPD Jacobians; for the baseline `½·log det(JᵀJ) = log|det J|`.
fn log_det_jacobian<G: Graph>(g: &mut G, net: &GradNet, jac: &G::Var) -> Result<G::Var> {
    if net.is_monotone() {
        g.logdet_spd(jac)
    } else {
        let jt = g.transpose(jac)?;
        let gram = g.matmul(&jt, jac)?;
        let ld = g.logdet_spd(&gram)?;
        g.scalar_mul(0.5, &ld)
    }
}

/// Records the batch loss `(1/B)·Σ ℓ(log det J(x) − [log p(x) − log q(T(x))])`
/// on `tape` and returns its root.
#[allow(clippy::too_many_arguments)]
pub fn monge_ampere_loss(
    tape: &mut Tape,
    net: &GradNet,
    bound: &Bound<NodeRef>,
    batch: &[DenseVector],
    p: &DensityModel,
    q: &Arc<DensityModel>,
    loss: PointLoss,
    detach_labels: bool,
) -> Result<NodeRef> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if p.dim() != net.dim() || q.dim() != net.dim() {
        return Err(shape_err(
            "monge_ampere_loss",
            format!("net dim {}, source dim {}, target dim {}", net.dim(), p.dim(), q.dim()),
        ));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let log_p = p.log_density(x)?;
        let xn = tape.constant(x.to_column());
        let (y, jac) = net.eval_on(tape, bound, &xn, true)?;
        let jac = jac.expect("requested");
        let ld = log_det_jacobian(tape, net, &jac)?;
        let log_q = if detach_labels {
            let v = q.log_density_slice(tape.get(y)?.as_slice())?;
            tape.constant(DenseMatrix::scalar(v))
        } else {
            tape.log_density(q, &y)?
        };
        // residual = ld − log p + log q
        let shifted = tape.add(&ld, &log_q)?;
        let lp = tape.constant(DenseMatrix::scalar(log_p));
        let r = tape.sub(&shifted, &lp)?;
        terms.push(tape.point_loss(&r, loss)?);
    }
    let stacked = tape.stack(&terms)?;
    tape.mean(&stacked)
}

/// Batch loss and its gradient with respect to [`GradNet::parameters`].
pub fn loss_and_gradient(
    tape: &mut Tape,
    net: &GradNet,
    batch: &[DenseVector],
    p: &DensityModel,
    q: &Arc<DensityModel>,
    loss: PointLoss,
    detach_labels: bool,
) -> Result<(f64, Vec<DenseMatrix>)> {
    tape.reset();
    let bound = net.bind(tape)?;
    let root = monge_ampere_loss(tape, net, &bound, batch, p, q, loss, detach_labels)?;
    let value = tape.get(root)?.to_scalar()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(root)?;
    let grads = bound
        .leaves()
        .into_iter()
        .map(|leaf| tape.grad_or_zeros(leaf))
        .collect::<Result<Vec<_>>>()?;
    Ok((value, grads))
}

/// Batch loss evaluated without recording a tape.
pub fn batch_loss(net: &GradNet, batch: &[DenseVector], p: &DensityModel, q: &DensityModel, loss: PointLoss) -> Result<f64> {
    let r = residuals(net, batch, p, q)?;
    let mut g = Eval;
    let terms = r
        .iter()
        .map(|&v| g.point_loss(&DenseMatrix::scalar(v), loss))
        .collect::<Result<Vec<_>>>()?;
    let stacked = g.stack(&terms)?;
    g.mean(&stacked)?.to_scalar()
}

/// Per-point residual `log det J(x) − (log p(x) − log q(T(x)))`.
pub fn residuals(net: &GradNet, xs: &[DenseVector], p: &DensityModel, q: &DensityModel) -> Result<Vec<f64>> {
    let mut g = Eval;
    let bound = net.bind(&mut g)?;
    xs.iter()
        .map(|x| {
            let (y, jac) = net.eval_on(&mut g, &bound, &x.to_column(), true)?;
            let ld = log_det_jacobian(&mut g, net, &jac.expect("requested"))?.to_scalar()?;
            Ok(ld - (p.log_density(x)? - q.log_density_slice(y.as_slice())?))
        })
        .collect()
}

/// `log|det J|` at `x`, through the same path as the loss.
pub fn log_abs_det_jacobian(net: &GradNet, x: &DenseVector) -> Result<f64> {
    let jac = net.jacobian(x)?;
    if net.is_monotone() {
        logdet_spd(&jac)
    } else {
        Ok(0.5 * logdet_spd(&jac.transpose().matmul(&jac)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub sigma2: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub checkpoint: Checkpoint,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    /// One JSON object per record.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let line = to_json_exact(r).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn schedule_density(base: &DensityModel, sigma2: Option<f64>) -> Result<DensityModel> {
    match (sigma2, base) {
        (Some(s), DensityModel::Mixture(_)) => base.with_sigma2(s),
        _ => Ok(base.clone()),
    }
}

/// Trains `net` in place to push `p` onto `q`.
pub fn train(net: &mut GradNet, p: &DensityModel, q: &DensityModel, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(net, p, q, cfg, |_| {})
}

/// Like [`train`], calling `observe` after every recorded iteration.
pub fn train_with(
    net: &mut GradNet,
    p: &DensityModel,
    q: &DensityModel,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&TrainRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if p.dim() != net.dim() || q.dim() != net.dim() {
        return Err(shape_err(
            "train",
            format!("net dim {}, source dim {}, target dim {}", net.dim(), p.dim(), q.dim()),
        ));
    }
    let start = Instant::now();
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = AdamState::new(net.parameters());
    let mut tape = Tape::new();
    let mut records = Vec::new();
    let mut q_now = Arc::new(q.clone());
    let mut p_now = p.clone();
    let mut last_sigma2 = None;

    for i in 0..cfg.iterations {
        let lr = cfg.lr_at(i);
        let sigma2 = cfg.sigma2_at(i);
        if sigma2.is_some() && sigma2 != last_sigma2 {
            q_now = Arc::new(schedule_density(q, sigma2)?);
            if cfg.decay_source_sigma2 {
                p_now = schedule_density(p, sigma2)?;
            }
            last_sigma2 = sigma2;
        }
        let batch = p_now.sample(&mut rng, cfg.batch_size);
        let (value, mut grads) = loss_and_gradient(&mut tape, net, &batch, &p_now, &q_now, cfg.loss, cfg.detach_labels)?;
        if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: i });
        }
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        adam_step(&mut net.parameters_mut(), &grads, &mut adam, lr, cfg.adam())?;

        if i % cfg.eval_every == 0 || i + 1 == cfg.iterations {
            let rec = TrainRecord {
                iter: i,
                loss: value,
                lr,
                sigma2: sigma2.or_else(|| q.sigma2()),
                wall_time: start.elapsed().as_secs_f64(),
            };
            observe(&rec);
            records.push(rec);
        }
    }
    Ok(TrainReport {
        records,
        checkpoint: Checkpoint::from_net(net, cfg.seed, cfg.iterations),
    })
}
