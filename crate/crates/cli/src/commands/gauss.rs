use std::path::Path;

use gradnetot_core::densities::{random_gaussian, DensityModel, GaussianDensity};
use gradnetot_core::discrete_ot::{mse_between, whitening_map, PointMap};
use gradnetot_core::gradnet::{random_pairs, GradNet};
use gradnetot_core::training::train;
use gradnetot_core::SeededRng;
use serde_json::{json, Map, Value};

use super::{write_checkpoint, write_map_csv, write_trace};
use crate::config::{Gauss2dConfig, HighDimConfig};
use crate::error::CliResult;
use crate::manifest::{write_csv, Cell, Run, RunManifest};

fn gaussian_json(g: &GaussianDensity) -> Value {
    let cov = g.covariance();
    let rows: Vec<Vec<f64>> = (0..cov.rows()).map(|i| cov.row(i).to_vec()).collect();
    json!({ "mean": g.mean().as_slice(), "covariance": rows })
}

/// Skewed 2-D Gaussian to `N(0, I)` with the baseline MLP and both monotone
/// architectures, scored against the whitening map.
pub fn cmd_gauss2d(cfg: &Gauss2dConfig, out_dir: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let mut run = Run::new(out_dir)?;
    let mut rng = SeededRng::new(cfg.seed);
    let src = random_gaussian(2, &mut rng)?;
    let p = DensityModel::from(src.clone());
    let q = DensityModel::from(GaussianDensity::standard(2));
    let test = p.sample(&mut rng, cfg.test_points);
    let pairs = random_pairs(2, cfg.monotonicity_pairs, &mut rng);

    let white = whitening_map(&src)?;
    let exact = test.iter().map(|x| white.apply(x)).collect::<Result<Vec<_>, _>>()?;
    write_map_csv(&mut run, "whitening", &test, &exact)?;

    let mut models = Map::new();
    for (k, (name, plan)) in cfg.plans().into_iter().enumerate() {
        let mut init_rng = rng.fork();
        let mut net = GradNet::init(&plan.spec, 2, cfg.activation, &mut init_rng)?;
        let tc = plan.train_config(&cfg.train, cfg.seed.wrapping_add(k as u64));
        let report = train(&mut net, &p, &q, &tc)?;
        let mapped = net.map_points(&test)?;
        write_map_csv(&mut run, name, &test, &mapped)?;
        write_trace(&mut run, name, &report)?;
        write_checkpoint(&mut run, name, &report)?;
        let mse = mse_between(&mapped, &exact)?;
        let violations = net.monotonicity_violations(&pairs)?;
        models.insert(
            name.to_owned(),
            json!({
                "mse_to_whitening": mse,
                "monotonicity_violations": violations,
                "final_loss": report.final_loss(),
                "iterations": tc.iterations,
                "parameters": net.num_parameters(),
            }),
        );
    }
    let metrics = json!({
        "source": gaussian_json(&src),
        "test_points": cfg.test_points,
        "monotonicity_pairs": cfg.monotonicity_pairs,
        "models": models,
    });
    run.finish("gauss2d", cfg.seed, cfg, metrics)
}

/// Per dimension: random Gaussian to `N(0, I)`, both monotone architectures,
/// MSE to the whitening map on held-out points.
pub fn cmd_gauss_highdim(cfg: &HighDimConfig, out_dir: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let mut run = Run::new(out_dir)?;
    let mut rows = Vec::new();
    let mut per_dim = Vec::new();
    for (idx, &dim) in cfg.dims.iter().enumerate() {
        let job_seed = cfg.seed.wrapping_add(idx as u64);
        let mut rng = SeededRng::new(job_seed);
        let src = random_gaussian(dim, &mut rng)?;
        let p = DensityModel::from(src.clone());
        let q = DensityModel::from(GaussianDensity::standard(dim));
        let test = p.sample(&mut rng, cfg.test_points);
        let white = whitening_map(&src)?;
        let exact = test.iter().map(|x| white.apply(x)).collect::<Result<Vec<_>, _>>()?;

        let mut entry = Map::new();
        entry.insert("dim".into(), json!(dim));
        for (name, plan) in [("mgradnet_c", &cfg.mgradnet_c), ("mgradnet_m", &cfg.mgradnet_m)] {
            let mut init_rng = rng.fork();
            let mut net = GradNet::init(&plan.spec, dim, cfg.activation, &mut init_rng)?;
            let tc = plan.train_config(&cfg.train, job_seed);
            let report = train(&mut net, &p, &q, &tc)?;
            write_trace(&mut run, &format!("d{dim}_{name}"), &report)?;
            let mse = mse_between(&net.map_points(&test)?, &exact)?;
            rows.push(vec![Cell::Int(dim), Cell::Text(name.to_owned()), Cell::Real(mse)]);
            entry.insert(name.to_owned(), json!(mse));
        }
        let m_le_c = entry["mgradnet_m"].as_f64() <= entry["mgradnet_c"].as_f64();
        entry.insert("m_not_worse_than_c".into(), json!(m_le_c));
        per_dim.push(Value::Object(entry));
    }
    let path = run.file("mse.csv");
    write_csv(&path, &["dim".into(), "model".into(), "mse".into()], rows)?;
    let metrics = json!({ "test_points": cfg.test_points, "per_dim": per_dim });
    run.finish("gauss-highdim", cfg.seed, cfg, metrics)
}
