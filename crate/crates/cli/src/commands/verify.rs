use std::path::Path;

use gradnetot_core::densities::{image_to_mixture, DensityModel, GaussianDensity};
use gradnetot_core::gradnet::{random_pairs, ArchTag, Checkpoint};
use gradnetot_core::linalg::min_eigenvalue;
use gradnetot_core::training::residuals;
use gradnetot_core::{DenseMatrix, DenseVector, SeededRng};
use serde::{Deserialize, Serialize};

use crate::config::{DensitySpec, VerifyConfig};
use crate::error::{CliError, CliResult};
use crate::images::load_image;
use crate::manifest::{write_csv, Cell, Run, RunManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean_abs: f64,
    pub median_abs: f64,
    pub max_abs: f64,
}

/// Structural checks on a saved network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub architecture: ArchTag,
    pub dimension: usize,
    pub points: usize,
    /// Largest `|J − Jᵀ|` entry over the sampled inputs.
    pub max_asymmetry: f64,
    /// Smallest eigenvalue of the symmetric part of `J`.
    pub min_eigenvalue: f64,
    pub monotonicity_violations: usize,
    /// `|log det J − (log p − log q∘T)|` at source samples, when densities
    /// were given.
    pub residual: Option<ResidualStats>,
}

pub(crate) fn density_from_spec(spec: &DensitySpec) -> CliResult<DensityModel> {
    Ok(match spec {
        DensitySpec::Gaussian { mean, covariance } => {
            let cov = DenseMatrix::from_rows(covariance)?;
            GaussianDensity::new(DenseVector::new(mean.clone()), cov)?.into()
        }
        DensitySpec::StandardNormal { dim } => GaussianDensity::standard(*dim).into(),
        DensitySpec::Image { path, index, sigma2 } => {
            let img = load_image(path, *index)?;
            image_to_mixture(&img.to_matrix(), *sigma2)?.into()
        }
    })
}

fn residual_stats(mut r: Vec<f64>) -> ResidualStats {
    r.iter_mut().for_each(|v| *v = v.abs());
    r.sort_by(f64::total_cmp);
    let n = r.len();
    let median = if n % 2 == 1 { r[n / 2] } else { 0.5 * (r[n / 2 - 1] + r[n / 2]) };
    ResidualStats {
        mean_abs: r.iter().sum::<f64>() / n as f64,
        median_abs: median,
        max_abs: r[n - 1],
    }
}

/// Loads a checkpoint and measures Jacobian symmetry, definiteness and
/// monotonicity at standard-normal inputs, plus the transport residual when
/// densities are configured.
pub fn cmd_verify(cfg: &VerifyConfig, out_dir: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let mut run = Run::new(out_dir)?;
    let net = Checkpoint::load(cfg.checkpoint.as_ref().expect("validated"))?.to_net()?;
    let dim = net.dim();
    let mut rng = SeededRng::new(cfg.seed);
    let xs: Vec<_> = (0..cfg.points).map(|_| DenseVector::new(rng.normal_vec(dim))).collect();

    let mut rows = Vec::with_capacity(cfg.points);
    let (mut max_asym, mut min_eig) = (0.0f64, f64::INFINITY);
    for (i, x) in xs.iter().enumerate() {
        let j = net.jacobian(x)?;
        let asym = j.max_asymmetry();
        let eig = min_eigenvalue(&j.symmetrized())?;
        max_asym = max_asym.max(asym);
        min_eig = min_eig.min(eig);
        rows.push(vec![Cell::Int(i), Cell::Real(asym), Cell::Real(eig)]);
    }
    let path = run.file("jacobian.csv");
    write_csv(&path, &["point".into(), "asymmetry".into(), "min_eigenvalue".into()], rows)?;
    let violations = net.monotonicity_violations(&random_pairs(dim, cfg.points, &mut rng))?;

    let residual = match (&cfg.source, &cfg.target) {
        (Some(ps), Some(qs)) => {
            let p = density_from_spec(ps)?;
            let q = density_from_spec(qs)?;
            if p.dim() != dim || q.dim() != dim {
                return Err(CliError::Config(format!(
                    "densities of dim {} and {} for a dim-{dim} network",
                    p.dim(),
                    q.dim()
                )));
            }
            let samples = p.sample(&mut rng, cfg.points);
            let r = residuals(&net, &samples, &p, &q)?;
            let path = run.file("residuals.csv");
            write_csv(
                &path,
                &["point".into(), "residual".into()],
                r.iter().enumerate().map(|(i, &v)| vec![Cell::Int(i), Cell::Real(v)]),
            )?;
            Some(residual_stats(r))
        }
        _ => None,
    };

    let report = VerifyReport {
        architecture: net.arch(),
        dimension: dim,
        points: cfg.points,
        max_asymmetry: max_asym,
        min_eigenvalue: min_eig,
        monotonicity_violations: violations,
        residual,
    };
    let metrics = serde_json::to_value(&report)?;
    run.finish("verify", cfg.seed, cfg, metrics)
}
