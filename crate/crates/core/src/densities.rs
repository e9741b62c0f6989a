//! Source and target densities.
//!
//! Two families are supported: a full-covariance Gaussian and an isotropic
//! Gaussian mixture with one shared variance. Both evaluate `log p(x)` and the
//! score `∇ log p(x)`, and both sample from a [`SeededRng`].

use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::rng::SeededRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: DenseVector,
    cov: DenseMatrix,
    chol: DenseMatrix,
    logdet: f64,
}

impl GaussianDensity {
    pub fn new(mean: DenseVector, cov: DenseMatrix) -> Result<Self> {
        if cov.shape() != (mean.dim(), mean.dim()) {
            return Err(shape_err(
                "gaussian",
                format!("mean of dim {} with {}x{} covariance", mean.dim(), cov.rows(), cov.cols()),
            ));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidArgument("gaussian mean is not finite".into()));
        }
        let cov = linalg::require_symmetric(&cov)?;
        let chol = linalg::cholesky(&cov)?;
        let logdet = linalg::logdet_from_cholesky(&chol);
        Ok(Self {
            mean,
            cov,
            chol,
            logdet,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DenseVector::zeros(dim), DenseMatrix::identity(dim)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn covariance(&self) -> &DenseMatrix {
        &self.cov
    }

    pub fn cholesky_factor(&self) -> &DenseMatrix {
        &self.chol
    }

    pub fn logdet_covariance(&self) -> f64 {
        self.logdet
    }

    /// `L⁻¹(x − μ)` by forward substitution.
    fn whitened(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z: Vec<f64> = x.iter().zip(self.mean.as_slice()).map(|(a, m)| a - m).collect();
        for i in 0..d {
            let mut s = z[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * z[k];
            }
            z[i] = s / self.chol[(i, i)];
        }
        z
    }

    fn log_density_slice(&self, x: &[f64]) -> f64 {
        let z = self.whitened(x);
        let q: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (self.dim() as f64 * LN_2PI + self.logdet + q)
    }

    /// `−Σ⁻¹(x − μ) = −L⁻ᵀ L⁻¹ (x − μ)`.
    fn score_slice(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = self.whitened(x);
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in (i + 1)..d {
                s -= self.chol[(k, i)] * z[k];
            }
            z[i] = s / self.chol[(i, i)];
        }
        z.iter_mut().for_each(|v| *v = -*v);
        z
    }

    fn sample_one(&self, rng: &mut SeededRng) -> DenseVector {
        let d = self.dim();
        let z = rng.normal_vec(d);
        let mut out = self.mean.clone();
        for i in 0..d {
            let mut s = 0.0;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                s += self.chol[(i, k)] * zk;
            }
            out[i] += s;
        }
        out
    }
}

/// Equal-variance isotropic mixture `Σ_c w_c N(x; m_c, σ² I)`.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    /// Row-major, one mean per row.
    means: Vec<f64>,
    sigma2: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: &[DenseVector], sigma2: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(shape_err(
                "mixture",
                format!("{} weights for {} means", weights.len(), means.len()),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("mixture variance must be positive, got {sigma2}")));
        }
        let dim = means[0].dim();
        let mut flat = Vec::with_capacity(dim * means.len());
        for m in means {
            if m.dim() != dim {
                return Err(shape_err("mixture", "means have different dimensions"));
            }
            if !m.is_finite() {
                return Err(Error::InvalidArgument("mixture mean is not finite".into()));
            }
            flat.extend_from_slice(m.as_slice());
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            dim,
            weights,
            log_weights,
            means: flat,
            sigma2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Same components with a different shared variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("mixture variance must be positive, got {sigma2}")));
        }
        Ok(Self {
            sigma2,
            ..self.clone()
        })
    }

    /// Per-component log terms `log w_c − ‖x − m_c‖²/(2σ²)` and their maximum.
    fn component_logits(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let inv = 0.5 / self.sigma2;
        let mut max = f64::NEG_INFINITY;
        let logits: Vec<f64> = self
            .means
            .chunks_exact(self.dim)
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let d2: f64 = m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                let v = lw - inv * d2;
                max = max.max(v);
                v
            })
            .collect();
        (logits, max)
    }

    fn log_norm(&self) -> f64 {
        -0.5 * self.dim as f64 * (2.0 * PI * self.sigma2).ln()
    }

    fn log_density_slice(&self, x: &[f64]) -> f64 {
        let (logits, max) = self.component_logits(x);
        let s: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        max + s.ln() + self.log_norm()
    }

    /// `Σ_c r_c(x)(m_c − x)/σ²` with responsibilities `r_c`.
    fn score_slice(&self, x: &[f64]) -> Vec<f64> {
        let (logits, max) = self.component_logits(x);
        let mut num = vec![0.0; self.dim];
        let mut den = 0.0;
        for (m, v) in self.means.chunks_exact(self.dim).zip(&logits) {
            let r = (v - max).exp();
            den += r;
            for (acc, mi) in num.iter_mut().zip(m) {
                *acc += r * mi;
            }
        }
        num.iter()
            .zip(x)
            .map(|(n, xi)| (n / den - xi) / self.sigma2)
            .collect()
    }

    fn sample_one(&self, rng: &mut SeededRng, cumulative: &[f64]) -> DenseVector {
        let u = rng.uniform() * cumulative[cumulative.len() - 1];
        let c = cumulative.partition_point(|&w| w <= u).min(self.len() - 1);
        let sd = self.sigma2.sqrt();
        DenseVector::new(self.mean(c).iter().map(|m| m + sd * rng.normal()).collect())
    }
}

#[derive(Clone, Debug)]
pub enum DensityModel {
    Gaussian(GaussianDensity),
    Mixture(GaussianMixture),
}

impl From<GaussianDensity> for DensityModel {
    fn from(g: GaussianDensity) -> Self {
        DensityModel::Gaussian(g)
    }
}

impl From<GaussianMixture> for DensityModel {
    fn from(m: GaussianMixture) -> Self {
        DensityModel::Mixture(m)
    }
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Gaussian(g) => g.dim(),
            DensityModel::Mixture(m) => m.dim(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(shape_err(
                "log_density",
                format!("point of dim {n} for a {}-dimensional density", self.dim()),
            ));
        }
        Ok(())
    }

    pub fn log_density(&self, x: &DenseVector) -> Result<f64> {
        self.log_density_slice(x.as_slice())
    }

    pub fn log_density_slice(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(match self {
            DensityModel::Gaussian(g) => g.log_density_slice(x),
            DensityModel::Mixture(m) => m.log_density_slice(x),
        })
    }

    /// `∇_x log p(x)`.
    pub fn score(&self, x: &DenseVector) -> Result<DenseVector> {
        self.score_slice(x.as_slice()).map(DenseVector::new)
    }

    pub fn score_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(match self {
            DensityModel::Gaussian(g) => g.score_slice(x),
            DensityModel::Mixture(m) => m.score_slice(x),
        })
    }

    pub fn sample(&self, rng: &mut SeededRng, count: usize) -> Vec<DenseVector> {
        match self {
            DensityModel::Gaussian(g) => (0..count).map(|_| g.sample_one(rng)).collect(),
            DensityModel::Mixture(m) => {
                let cumulative: Vec<f64> = m
                    .weights
                    .iter()
                    .scan(0.0, |acc, w| {
                        *acc += w;
                        Some(*acc)
                    })
                    .collect();
                (0..count).map(|_| m.sample_one(rng, &cumulative)).collect()
            }
        }
    }

    /// Shared variance of a mixture; `None` for a Gaussian.
    pub fn sigma2(&self) -> Option<f64> {
        match self {
            DensityModel::Gaussian(_) => None,
            DensityModel::Mixture(m) => Some(m.sigma2()),
        }
    }

    /// Replaces a mixture's shared variance. Gaussians are returned unchanged.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Ok(match self {
            DensityModel::Gaussian(g) => DensityModel::Gaussian(g.clone()),
            DensityModel::Mixture(m) => DensityModel::Mixture(m.with_sigma2(sigma2)?),
        })
    }
}

/// Kernel density over pixel locations: one isotropic component per positive
/// pixel at `(i/(rows−1), j/(cols−1))`, with `i` the row index, weighted by
/// intensity and normalized to total mass one.
pub fn image_to_mixture(pixels: &DenseMatrix, sigma2: f64) -> Result<GaussianMixture> {
    if pixels.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("pixel intensities must be finite and nonnegative".into()));
    }
    let (rows, cols) = pixels.shape();
    let coord = |k: usize, n: usize| if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
    let mut weights = Vec::new();
    let mut means = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = pixels[(i, j)];
            if v > 0.0 {
                weights.push(v);
                means.push(DenseVector::new(vec![coord(i, rows), coord(j, cols)]));
            }
        }
    }
    if weights.is_empty() {
        return Err(Error::AllZeroImage);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    // Renormalize once more so the sum is 1 to the last bit where possible.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture::new(weights, &means, sigma2)
}

/// Random source Gaussian: mean `~ N(0, I)`, covariance `~ Wishart(I, d+1)`.
pub fn random_gaussian(dim: usize, rng: &mut SeededRng) -> Result<GaussianDensity> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut last_err = None;
    for _ in 0..3 {
        let mean = DenseVector::new(rng.normal_vec(dim));
        let g = DenseMatrix::from_vec(dim + 1, dim, rng.normal_vec((dim + 1) * dim))?;
        let cov = g.transpose().matmul(&g)?;
        match GaussianDensity::new(mean, cov) {
            Ok(d) => return Ok(d),
            Err(e @ Error::NotPositiveDefinite { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("three failed attempts"))
}
