//! Reference transport maps: the closed-form Gaussian whitening map and the
//! entropic discrete plan with its barycentric projection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::densities::GaussianDensity;
use crate::error::{shape_err, Error, Result};
use crate::gradnet::GradNet;
use crate::linalg::{inv_sqrt_spd, DenseMatrix, DenseVector};
use crate::numfmt::fmt_f64;

/// A map from points to points.
pub trait PointMap {
    fn apply(&self, x: &DenseVector) -> Result<DenseVector>;
}

impl PointMap for GradNet {
    fn apply(&self, x: &DenseVector) -> Result<DenseVector> {
        self.forward(x)
    }
}

/// Adapts a closure to [`PointMap`].
pub struct FnMap<F>(pub F);

impl<F: Fn(&DenseVector) -> Result<DenseVector>> PointMap for FnMap<F> {
    fn apply(&self, x: &DenseVector) -> Result<DenseVector> {
        (self.0)(x)
    }
}

/// `T(x) = Σ₀^{-1/2}(x − μ₀)`, the optimal map from `N(μ₀, Σ₀)` to `N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningMap {
    mean: DenseVector,
    inv_sqrt_cov: DenseMatrix,
}

impl WhiteningMap {
    pub fn new(source: &GaussianDensity) -> Result<Self> {
        Ok(Self {
            mean: source.mean().clone(),
            inv_sqrt_cov: inv_sqrt_spd(source.covariance())?,
        })
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn inv_sqrt_cov(&self) -> &DenseMatrix {
        &self.inv_sqrt_cov
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

impl PointMap for WhiteningMap {
    fn apply(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.dim() {
            return Err(shape_err("whitening_map", format!("point of dim {} for dim {}", x.dim(), self.dim())));
        }
        let centered: Vec<f64> = x.as_slice().iter().zip(self.mean.as_slice()).map(|(a, b)| a - b).collect();
        DenseVector::from_matrix(&self.inv_sqrt_cov.matmul(&DenseMatrix::column(centered))?)
    }
}

pub fn whitening_map(source: &GaussianDensity) -> Result<WhiteningMap> {
    WhiteningMap::new(source)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

/// Iterations between marginal-error checks.
pub const CHECK_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub gamma: DenseMatrix,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Larger of the row and column ℓ₁ marginal errors at the last check.
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, marginal_error)` at every check.
    pub history: Vec<(usize, f64)>,
}

impl TransportPlan {
    /// `Σᵢⱼ γᵢⱼ Cᵢⱼ`.
    pub fn cost(&self, cost: &DenseMatrix) -> Result<f64> {
        if cost.shape() != self.gamma.shape() {
            return Err(shape_err("transport cost", "cost and plan shapes differ"));
        }
        Ok(self.gamma.as_slice().iter().zip(cost.as_slice()).map(|(g, c)| g * c).sum())
    }

    /// CSV rows `i,j,gamma` for entries above `1e-12`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::InvalidArgument(format!("writing plan: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "gamma"]).map_err(io)?;
        for i in 0..self.gamma.rows() {
            for (j, &g) in self.gamma.row(i).iter().enumerate() {
                if g > 1e-12 {
                    w.write_record([i.to_string(), j.to_string(), fmt_f64(g)]).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("writing plan: {e}")))
    }
}

/// `Cᵢⱼ = ‖xᵢ − yⱼ‖²`.
pub fn squared_euclidean_cost(xs: &[DenseVector], ys: &[DenseVector]) -> Result<DenseMatrix> {
    let mut c = DenseMatrix::zeros(xs.len(), ys.len());
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            if x.dim() != y.dim() {
                return Err(shape_err("cost", format!("points of dim {} and {}", x.dim(), y.dim())));
            }
            c[(i, j)] = x.squared_distance(y);
        }
    }
    Ok(c)
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_weights(name: &str, w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(shape_err("sinkhorn", format!("{name} has {} weights for {n} points", w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} weights must be finite and nonnegative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{name} weights sum to {s}, not 1")));
    }
    Ok(())
}

fn log_or_neg_inf(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `log Σ exp(vᵢ)` over an iterator, `-∞` for an empty or all `-∞` input.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport by stabilized Sinkhorn iterations.
///
/// Stops once the larger of the row and column ℓ₁ marginal errors is at most
/// `tol` (checked every [`CHECK_EVERY`] iterations and at the end). Without
/// convergence the last iterate is returned inside
/// [`Error::SinkhornNotConverged`].
pub fn sinkhorn(cost: &DenseMatrix, mu: &[f64], nu: &[f64], params: SinkhornParams) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    check_weights("mu", mu, n)?;
    check_weights("nu", nu, m)?;
    let eps = params.epsilon;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    if !(params.tol >= 0.0) || params.max_iter == 0 {
        return Err(Error::InvalidArgument("need tol >= 0 and max_iter >= 1".into()));
    }
    let log_k: Vec<f64> = cost.as_slice().iter().map(|c| -c / eps).collect();
    if log_k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteKernel);
    }
    let log_mu: Vec<f64> = mu.iter().map(|&v| log_or_neg_inf(v)).collect();
    let log_nu: Vec<f64> = nu.iter().map(|&v| log_or_neg_inf(v)).collect();

    // Scaled duals f = F/ε, g = G/ε are kept in the log domain. Between
    // absorptions the iteration runs on scalings u, v against the kernel
    // K̃ᵢⱼ = exp(log Kᵢⱼ + fᵢ + gⱼ), so γ = diag(u)·K̃·diag(v).
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kernel = vec![0.0; n * m];
    let mut stale = true;
    let mut col = vec![0.0; m];
    let (mut u_prev, mut v_prev) = (u.clone(), v.clone());
    let mut history = Vec::new();
    let mut error = f64::INFINITY;
    let mut iterations = 0;

    for it in 1..=params.max_iter {
        if stale {
            rebuild_kernel(&mut kernel, &log_k, &f, &g);
            u.fill(1.0);
            v.fill(1.0);
            stale = false;
        }
        u_prev.copy_from_slice(&u);
        v_prev.copy_from_slice(&v);
        scale_rows(&mut u, &kernel, &v, mu);
        scale_cols(&mut v, &kernel, &u, nu, &mut col);
        let finite = u.iter().chain(&v).all(|x| x.is_finite());
        if !finite {
            // The scaled kernel underflowed; take this sweep in the log domain.
            absorb(&mut g, &mut v_prev);
            log_update(&mut f, &g, &log_k, &log_mu, m, |i, j| i * m + j);
            log_update(&mut g, &f, &log_k, &log_nu, n, |j, i| i * m + j);
            u.fill(1.0);
            v.fill(1.0);
            stale = true;
        } else if u.iter().chain(&v).any(|&x| x > 0.0 && x.ln().abs() > ABSORB_LOG) {
            absorb(&mut f, &mut u);
            absorb(&mut g, &mut v);
            stale = true;
        }
        iterations = it;
        if it % CHECK_EVERY == 0 || it == params.max_iter {
            if stale {
                rebuild_kernel(&mut kernel, &log_k, &f, &g);
                u.fill(1.0);
                v.fill(1.0);
                stale = false;
            }
            error = marginal_error(&kernel, &u, &v, mu, nu);
            if !error.is_finite() {
                return Err(Error::NonFiniteKernel);
            }
            history.push((it, error));
            if error <= params.tol {
                break;
            }
        }
    }

    if stale {
        rebuild_kernel(&mut kernel, &log_k, &f, &g);
        u.fill(1.0);
        v.fill(1.0);
    }
    let mut gamma = DenseMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let x = u[i] * kernel[i * m + j] * v[j];
            gamma[(i, j)] = if x.is_finite() { x } else { 0.0 };
        }
    }
    let plan = TransportPlan {
        gamma,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        marginal_error: error,
        iterations,
        converged: error <= params.tol,
        history,
    };
    if plan.converged {
        Ok(plan)
    } else {
        Err(Error::SinkhornNotConverged(Box::new(plan)))
    }
}

/// Scalings beyond `e^±ABSORB_LOG` are folded back into the duals.
const ABSORB_LOG: f64 = 50.0;

fn rebuild_kernel(kernel: &mut [f64], log_k: &[f64], f: &[f64], g: &[f64]) {
    let m = g.len();
    for (i, fi) in f.iter().enumerate() {
        for j in 0..m {
            let x = (log_k[i * m + j] + fi + g[j]).exp();
            kernel[i * m + j] = if x.is_nan() { 0.0 } else { x };
        }
    }
}

fn scale_rows(u: &mut [f64], kernel: &[f64], v: &[f64], mu: &[f64]) {
    let m = v.len();
    for (i, ui) in u.iter_mut().enumerate() {
        if mu[i] == 0.0 {
            *ui = 0.0;
            continue;
        }
        let row = &kernel[i * m..(i + 1) * m];
        let s: f64 = row.iter().zip(v).map(|(k, x)| k * x).sum();
        *ui = mu[i] / s;
    }
}

fn scale_cols(v: &mut [f64], kernel: &[f64], u: &[f64], nu: &[f64], col: &mut [f64]) {
    let m = v.len();
    col.fill(0.0);
    for (i, ui) in u.iter().enumerate() {
        if *ui == 0.0 {
            continue;
        }
        for (c, k) in col.iter_mut().zip(&kernel[i * m..(i + 1) * m]) {
            *c += ui * k;
        }
    }
    for (j, vj) in v.iter_mut().enumerate() {
        *vj = if nu[j] == 0.0 { 0.0 } else { nu[j] / col[j] };
    }
}

fn absorb(duals: &mut [f64], scaling: &mut [f64]) {
    for (d, s) in duals.iter_mut().zip(scaling.iter_mut()) {
        *d += if *s > 0.0 { s.ln() } else { f64::NEG_INFINITY };
        *s = 1.0;
    }
}

/// One exact log-domain half sweep: `outᵢ = log wᵢ − log Σⱼ exp(log Kᵢⱼ + otherⱼ)`.
fn log_update(
    out: &mut [f64],
    other: &[f64],
    log_k: &[f64],
    log_w: &[f64],
    width: usize,
    at: impl Fn(usize, usize) -> usize,
) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = if log_w[i] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            log_w[i] - log_sum_exp((0..width).map(|j| log_k[at(i, j)] + other[j]))
        };
    }
}

fn marginal_error(kernel: &[f64], u: &[f64], v: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let m = v.len();
    let mut cols = vec![0.0; m];
    let mut row_err = 0.0;
    for (i, ui) in u.iter().enumerate() {
        let mut row = 0.0;
        for j in 0..m {
            let x = ui * kernel[i * m + j] * v[j];
            row += x;
            cols[j] += x;
        }
        row_err += (row - mu[i]).abs();
    }
    let col_err: f64 = cols.iter().zip(nu).map(|(c, x)| (c - x).abs()).sum();
    row_err.max(col_err)
}

/// `T(xᵢ) = Σⱼ γᵢⱼ yⱼ / Σⱼ γᵢⱼ` for every source index `i`.
pub fn barycentric_projection(plan: &TransportPlan, targets: &[DenseVector]) -> Result<Vec<DenseVector>> {
    let (n, m) = plan.gamma.shape();
    if targets.len() != m {
        return Err(shape_err("barycentric_projection", format!("{m} plan columns for {} targets", targets.len())));
    }
    let d = targets.first().map_or(0, DenseVector::dim);
    if targets.iter().any(|t| t.dim() != d) {
        return Err(shape_err("barycentric_projection", "targets differ in dimension"));
    }
    (0..n)
        .map(|i| {
            let row = plan.gamma.row(i);
            let mass: f64 = row.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::ZeroMassRow(i));
            }
            let mut acc = vec![0.0; d];
            for (w, y) in row.iter().zip(targets) {
                for (a, v) in acc.iter_mut().zip(y.as_slice()) {
                    *a += w * v;
                }
            }
            Ok(DenseVector::new(acc.into_iter().map(|a| a / mass).collect()))
        })
        .collect()
}

/// `(1/N)·Σ ‖aᵢ − bᵢ‖²` over paired point lists.
pub fn mse_between(a: &[DenseVector], b: &[DenseVector]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(shape_err("map_mse", format!("{} and {} points", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() {
            return Err(shape_err("map_mse", format!("points of dim {} and {}", x.dim(), y.dim())));
        }
        total += x.squared_distance(y);
    }
    Ok(total / a.len() as f64)
}

/// `(1/N)·Σ ‖A(xᵢ) − B(xᵢ)‖²`.
pub fn map_mse<A: PointMap + ?Sized, B: PointMap + ?Sized>(a: &A, b: &B, points: &[DenseVector]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    let ya = points.iter().map(|x| a.apply(x)).collect::<Result<Vec<_>>>()?;
    let yb = points.iter().map(|x| b.apply(x)).collect::<Result<Vec<_>>>()?;
    mse_between(&ya, &yb)
}

/// `(1 − t)·x + t·T(x)`.
pub fn interpolate(x: &DenseVector, t_of_x: &DenseVector, t: f64) -> Result<DenseVector> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    if x.dim() != t_of_x.dim() {
        return Err(shape_err("interpolate", format!("points of dim {} and {}", x.dim(), t_of_x.dim())));
    }
    Ok(DenseVector::new(
        x.as_slice()
            .iter()
            .zip(t_of_x.as_slice())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect(),
    ))
}
