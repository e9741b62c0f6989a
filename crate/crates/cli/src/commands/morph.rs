use std::path::Path;

use gradnetot_core::densities::{image_to_mixture, DensityModel};
use gradnetot_core::discrete_ot::{
    barycentric_projection, interpolate, mse_between, sinkhorn, squared_euclidean_cost, uniform_weights,
};
use gradnetot_core::gradnet::GradNet;
use gradnetot_core::training::{train, TrainConfig};
use gradnetot_core::{DenseVector, Error, SeededRng};
use serde_json::json;

use super::{write_checkpoint, write_trace};
use crate::config::{ImageSource, MorphConfig};
use crate::error::CliResult;
use crate::images::{load_image, ncc, rasterize, write_pgm, ImageGrid};
use crate::manifest::{coord_header, point_rows, write_csv, Run, RunManifest};

fn load(src: &ImageSource) -> CliResult<ImageGrid> {
    load_image(&src.path, src.index)
}

/// `t` as it appears in frame file names, e.g. `0.25`.
pub fn time_label(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_owned()
    }
}

fn write_frames(
    run: &mut Run,
    prefix: &str,
    xs: &[DenseVector],
    ys: &[DenseVector],
    cfg: &MorphConfig,
) -> CliResult<Vec<ImageGrid>> {
    let mut rasters = Vec::with_capacity(cfg.times.len());
    for &t in &cfg.times {
        let pts = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| interpolate(x, y, t))
            .collect::<Result<Vec<_>, _>>()?;
        let label = time_label(t);
        let path = run.file(&format!("{prefix}_t{label}.csv"));
        write_csv(&path, &coord_header("x", 2), point_rows(&[&pts]))?;
        let raster = rasterize(&pts, cfg.raster_size)?;
        let path = run.file(&format!("{prefix}_t{label}.pgm"));
        write_pgm(&path, &raster)?;
        rasters.push(raster);
    }
    Ok(rasters)
}

/// Learns the transport map between two image densities and renders the
/// displacement interpolation, next to the entropic-plan projection on the
/// same samples.
pub fn cmd_morph(cfg: &MorphConfig, out_dir: &Path) -> CliResult<RunManifest> {
    cfg.validate()?;
    let mut run = Run::new(out_dir)?;
    let src_img = load(cfg.source.as_ref().expect("validated"))?;
    let tgt_img = load(cfg.target.as_ref().expect("validated"))?;
    let p = DensityModel::from(image_to_mixture(&src_img.to_matrix(), cfg.sigma2)?);
    let q = DensityModel::from(image_to_mixture(&tgt_img.to_matrix(), cfg.sigma2)?);

    let mut rng = SeededRng::new(cfg.seed);
    let mut net = GradNet::init(&cfg.model, 2, cfg.activation, &mut rng.fork())?;
    let tc = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let report = train(&mut net, &p, &q, &tc)?;
    write_trace(&mut run, "model", &report)?;
    write_checkpoint(&mut run, "model", &report)?;

    let xs = p.sample(&mut rng, cfg.samples);
    let ys = q.sample(&mut rng, cfg.samples);
    let mapped = net.map_points(&xs)?;

    let cost = squared_euclidean_cost(&xs, &ys)?;
    let w = uniform_weights(cfg.samples);
    let plan = match sinkhorn(&cost, &w, &w, cfg.sinkhorn) {
        Ok(plan) => plan,
        Err(Error::SinkhornNotConverged(plan)) => {
            run.warn(format!(
                "Sinkhorn stopped after {} iterations with marginal error {:e}; using the last iterate",
                plan.iterations, plan.marginal_error
            ));
            *plan
        }
        Err(e) => return Err(e.into()),
    };
    let projected = barycentric_projection(&plan, &ys)?;

    let path = run.file("map.csv");
    let mut header = coord_header("x", 2);
    header.extend(coord_header("learned", 2));
    header.extend(coord_header("projected", 2));
    write_csv(&path, &header, point_rows(&[&xs, &mapped, &projected]))?;

    let learned = write_frames(&mut run, "frame", &xs, &mapped, cfg)?;
    write_frames(&mut run, "projection", &xs, &projected, cfg)?;
    write_pgm(&run.file("source.pgm"), &src_img)?;
    write_pgm(&run.file("target.pgm"), &tgt_img)?;

    let frames: Vec<_> = cfg
        .times
        .iter()
        .zip(&learned)
        .map(|(&t, r)| {
            Ok(json!({
                "t": t,
                "ncc_source": ncc(r, &src_img)?,
                "ncc_target": ncc(r, &tgt_img)?,
            }))
        })
        .collect::<CliResult<_>>()?;
    let metrics = json!({
        "map_mse": mse_between(&mapped, &projected)?,
        "identity_mse": mse_between(&mapped, &xs)?,
        "source_raster_ncc": ncc(&rasterize(&xs, cfg.raster_size)?, &src_img)?,
        "final_loss": report.final_loss(),
        "iterations": tc.iterations,
        "sinkhorn": {
            "converged": plan.converged,
            "iterations": plan.iterations,
            "marginal_error": plan.marginal_error,
            "epsilon": cfg.sinkhorn.epsilon,
        },
        "frames": frames,
    });
    run.finish("morph", cfg.seed, cfg, metrics)
}
