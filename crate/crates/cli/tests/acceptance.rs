//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Set `GRADNETOT_FULL_MORPH=1` to also run the 10000-iteration morphing
//! budget and print its map-vs-projection MSE next to the reference values.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gradnetot_cli::commands::{cmd_gauss2d, cmd_gauss_highdim, cmd_morph, cmd_verify};
use gradnetot_cli::config::{
    DensitySpec, Gauss2dConfig, HighDimConfig, ImageSource, ModelPlan, MorphConfig, VerifyConfig,
};
use gradnetot_cli::RunManifest;
use gradnetot_core::autodiff::{Eval, Graph, NodeRef, Order, PointLoss, Tape};
use gradnetot_core::densities::{random_gaussian, DensityModel, GaussianDensity, GaussianMixture};
use gradnetot_core::discrete_ot::{
    barycentric_projection, mse_between, sinkhorn, squared_euclidean_cost, uniform_weights, whitening_map,
    PointMap, SinkhornParams,
};
use gradnetot_core::gradcheck::{central_difference, max_relative_error};
use gradnetot_core::gradnet::{Activation, ArchSpec, GradNet, GradNetC};
use gradnetot_core::linalg::min_eigenvalue;
use gradnetot_core::training::{batch_loss, loss_and_gradient, TrainConfig};
use gradnetot_core::{DenseMatrix, DenseVector, Result, SeededRng};

type Outcome = std::result::Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn run(&mut self, id: u32, name: &str, budget: Duration, check: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs())),
            Err(d) => (false, d),
        };
        if !ok {
            self.failures += 1;
        }
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {id}. {name}: {detail} [{:.1} s]", elapsed.as_secs_f64());
    }
}

fn info(msg: &str) {
    println!("     info: {msg}");
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, rng.normal_vec(rows * cols)).unwrap()
}

// 1 ------------------------------------------------------------------------

fn spd_invariant() -> Outcome {
    let mut rng = SeededRng::new(2024);
    let mut worst_eig = f64::INFINITY;
    let mut draws = 0;
    for dim in [1, 2, 8, 16] {
        for spec in [ArchSpec::default_c(), ArchSpec::default_m()] {
            for k in 0..100 {
                let act = [Activation::Tanh, Activation::Sigmoid][k % 2];
                let mut net = GradNet::init(&spec, dim, act, &mut rng).map_err(err)?;
                // Arbitrary parameter values, not just the initializer's.
                for p in net.parameters_mut() {
                    *p = random(p.rows(), p.cols(), &mut rng);
                }
                let x = DenseVector::new(rng.normal_vec(dim).iter().map(|v| 2.0 * v).collect());
                let j = net.jacobian(&x).map_err(err)?;
                let asym = j.max_asymmetry();
                ensure(asym == 0.0, || format!("{spec:?} dim {dim}: asymmetry {asym:e}"))?;
                let eig = min_eigenvalue(&j).map_err(err)?;
                ensure(eig > 0.0, || format!("{spec:?} dim {dim}: min eigenvalue {eig:e}"))?;
                worst_eig = worst_eig.min(eig);
                draws += 1;
            }
        }
    }
    Ok(format!("{draws} draws, asymmetry 0, smallest eigenvalue {worst_eig:.3e}"))
}

// 2 ------------------------------------------------------------------------

const FD_TOL: f64 = 1e-4;

fn project<G: Graph>(g: &mut G, y: &G::Var) -> Result<G::Var> {
    let (r, c) = g.value(y).shape();
    let mut rng = SeededRng::new(99);
    let a = g.constant(random(1, r, &mut rng));
    let b = g.constant(random(c, 1, &mut rng));
    let ay = g.matmul(&a, y)?;
    g.matmul(&ay, &b)
}

macro_rules! fd_error {
    ($inputs:expr, |$g:ident, $x:ident| $body:expr) => {{
        let inputs: Vec<DenseMatrix> = $inputs;
        let mut tape = Tape::new();
        let leaves: Vec<NodeRef> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let y = (|$g: &mut Tape, $x: &[NodeRef]| -> Result<NodeRef> { $body })(&mut tape, &leaves).map_err(err)?;
        let root = project(&mut tape, &y).map_err(err)?;
        tape.backward(root).map_err(err)?;
        let analytic = leaves
            .iter()
            .map(|l| tape.grad_or_zeros(*l))
            .collect::<Result<Vec<_>>>()
            .map_err(err)?;
        let numeric = central_difference(&inputs, 1e-5, |xs| {
            let mut ev = Eval;
            let y = (|$g: &mut Eval, $x: &[DenseMatrix]| -> Result<DenseMatrix> { $body })(&mut ev, xs)?;
            project(&mut ev, &y)?.to_scalar()
        })
        .map_err(err)?;
        max_relative_error(&analytic, &numeric, 1e-8)
    }};
}

fn op_errors() -> std::result::Result<Vec<(String, f64)>, String> {
    let mut rng = SeededRng::new(7);
    let mut r = |rows, cols| random(rows, cols, &mut rng);
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, e: f64| out.push((name.to_owned(), e));

    push("add", fd_error!(vec![r(3, 3), r(3, 3)], |g, x| g.add(&x[0], &x[1])));
    push("sub", fd_error!(vec![r(3, 3), r(3, 3)], |g, x| g.sub(&x[0], &x[1])));
    push("scalar_mul", fd_error!(vec![r(3, 3)], |g, x| g.scalar_mul(-1.7, &x[0])));
    push("scale", fd_error!(vec![r(1, 1), r(3, 3)], |g, x| g.scale(&x[0], &x[1])));
    push("matmul", fd_error!(vec![r(3, 4), r(4, 2)], |g, x| g.matmul(&x[0], &x[1])));
    push("transpose", fd_error!(vec![r(3, 2)], |g, x| g.transpose(&x[0])));
    push("diag_embed", fd_error!(vec![r(3, 1)], |g, x| g.diag_embed(&x[0])));
    push("weighted_gram", fd_error!(vec![r(4, 3), r(4, 1)], |g, x| g.weighted_gram(&x[0], &x[1])));
    push("lower_factor", fd_error!(vec![r(3, 3)], |g, x| g.lower_factor(&x[0])));
    push("sum", fd_error!(vec![r(3, 3)], |g, x| g.sum(&x[0])));
    push("square", fd_error!(vec![r(3, 3)], |g, x| g.square(&x[0])));
    push("softmax", fd_error!(vec![r(4, 1)], |g, x| g.softmax(&x[0])));
    push("mean", fd_error!(vec![r(3, 3)], |g, x| g.mean(&x[0])));
    push(
        "stack/element",
        fd_error!(vec![r(1, 1), r(3, 1)], |g, x| {
            let e = g.element(&x[1], 2)?;
            g.stack(&[x[0].clone(), e])
        }),
    );
    push("point_loss squared", fd_error!(vec![r(3, 1)], |g, x| g.point_loss(&x[0], PointLoss::Squared)));
    let huber_in = DenseMatrix::column(vec![0.3, -0.6, 2.5, -3.0]);
    push(
        "point_loss huber",
        fd_error!(vec![huber_in], |g, x| g.point_loss(&x[0], PointLoss::Huber { delta: 1.0 })),
    );
    for act in [Activation::Tanh, Activation::Sigmoid, Activation::Softplus] {
        for order in [Order::Antiderivative, Order::Value, Order::First] {
            if order == Order::Antiderivative && !act.has_antiderivative() {
                continue;
            }
            let e = fd_error!(vec![r(3, 1)], |g, x| g.elementwise(&x[0], act, order));
            push(&format!("elementwise {act} {order:?}"), e);
        }
    }
    push(
        "logdet_spd",
        fd_error!(vec![r(3, 3)], |g, x| {
            let at = g.transpose(&x[0])?;
            let aat = g.matmul(&x[0], &at)?;
            let eye = g.constant(DenseMatrix::identity(3));
            let spd = g.add(&aat, &eye)?;
            g.logdet_spd(&spd)
        }),
    );
    let gauss = Arc::new(DensityModel::from(
        GaussianDensity::new(
            DenseVector::new(vec![0.2, -0.1, 0.5]),
            DenseMatrix::from_rows(&[[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.7]]).unwrap(),
        )
        .map_err(err)?,
    ));
    push("log_density gaussian", fd_error!(vec![r(3, 1)], |g, x| g.log_density(&gauss, &x[0])));
    let mix = Arc::new(DensityModel::from(
        GaussianMixture::new(
            vec![0.3, 0.7],
            &[DenseVector::new(vec![0.0, 0.0, 0.0]), DenseVector::new(vec![1.0, -1.0, 0.5])],
            0.8,
        )
        .map_err(err)?,
    ));
    push("log_density mixture", fd_error!(vec![r(3, 1)], |g, x| g.log_density(&mix, &x[0])));
    Ok(out)
}

fn loss_errors() -> std::result::Result<Vec<(String, f64)>, String> {
    let mut rng = SeededRng::new(4);
    let p: DensityModel = random_gaussian(2, &mut rng).map_err(err)?.into();
    let q: DensityModel = GaussianMixture::new(
        vec![0.4, 0.6],
        &[DenseVector::new(vec![-0.5, 0.0]), DenseVector::new(vec![0.7, 0.3])],
        0.5,
    )
    .map_err(err)?
    .into();
    let q_arc = Arc::new(q.clone());
    let batch = p.sample(&mut rng, 4);
    let specs = [
        ArchSpec::C { groups: 2, width: 4 },
        ArchSpec::M { modules: 2, width: 3, temperature: 0.7 },
        ArchSpec::Baseline { hidden: 6 },
    ];
    let mut out = Vec::new();
    for spec in specs {
        let net = GradNet::init(&spec, 2, Activation::Tanh, &mut rng).map_err(err)?;
        let n = net.num_parameters();
        ensure(n <= 200, || format!("{spec:?} has {n} parameters"))?;
        for loss in [PointLoss::Squared, PointLoss::Huber { delta: 0.5 }] {
            let mut tape = Tape::new();
            let (_, grads) = loss_and_gradient(&mut tape, &net, &batch, &p, &q_arc, loss, false).map_err(err)?;
            let params: Vec<DenseMatrix> = net.parameters().into_iter().cloned().collect();
            let fd = central_difference(&params, 1e-5, |ps| {
                let mut probe = net.clone();
                for (dst, src) in probe.parameters_mut().into_iter().zip(ps) {
                    *dst = src.clone();
                }
                batch_loss(&probe, &batch, &p, &q, loss)
            })
            .map_err(err)?;
            out.push((format!("loss {:?} {loss:?} ({n} params)", net.arch()), max_relative_error(&grads, &fd, 1e-8)));
        }
    }
    Ok(out)
}

fn autodiff_fd() -> Outcome {
    let mut all = op_errors()?;
    all.extend(loss_errors()?);
    let (name, worst) = all
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or("no checks ran")?;
    ensure(worst <= FD_TOL, || format!("{name}: relative error {worst:.3e} > {FD_TOL:e}"))?;
    Ok(format!("{} checks, worst relative error {worst:.2e} ({name})", all.len()))
}

// 3 ------------------------------------------------------------------------

fn zero_loss() -> Outcome {
    let p = DensityModel::from(GaussianDensity::new(DenseVector::new(vec![0.0]), DenseMatrix::scalar(4.0)).map_err(err)?);
    let q = DensityModel::from(GaussianDensity::standard(1));
    let mut c = GradNetC::identity(1, 2, 4, Activation::Tanh);
    c.set_lower_factor(&DenseMatrix::scalar(0.5f64.sqrt())).map_err(err)?;
    let net = GradNet::C(c);
    let x = DenseVector::new(vec![1.7]);
    let tx = net.forward(&x).map_err(err)?[0];
    ensure((tx - 0.85).abs() < 1e-15, || format!("T(1.7) = {tx}"))?;
    let batch = p.sample(&mut SeededRng::new(3), 1000);
    let loss = batch_loss(&net, &batch, &p, &q, PointLoss::Squared).map_err(err)?;
    ensure(loss.abs() <= 1e-12, || format!("loss {loss:e}"))?;
    Ok(format!("loss {loss:.3e} on 1000 samples"))
}

// 4 ------------------------------------------------------------------------

fn model_metric(m: &RunManifest, model: &str, key: &str) -> f64 {
    m.metrics["models"][model][key].as_f64().unwrap_or(f64::NAN)
}

fn gauss2d(dir: &Path) -> Outcome {
    let m = cmd_gauss2d(&Gauss2dConfig::default(), dir).map_err(err)?;
    let (c, mm) = (model_metric(&m, "mgradnet_c", "mse_to_whitening"), model_metric(&m, "mgradnet_m", "mse_to_whitening"));
    let vc = model_metric(&m, "mgradnet_c", "monotonicity_violations");
    let vm = model_metric(&m, "mgradnet_m", "monotonicity_violations");
    let vb = model_metric(&m, "baseline", "monotonicity_violations");
    let pairs = m.metrics["monotonicity_pairs"].as_u64().unwrap_or(0);
    info(&format!(
        "baseline MSE to whitening {:.4}",
        model_metric(&m, "baseline", "mse_to_whitening")
    ));
    ensure(pairs == 10_000, || format!("{pairs} pairs checked"))?;
    ensure(c <= 1e-2 && mm <= 1e-2, || format!("MSE C {c:.4e}, M {mm:.4e} (limit 1e-2)"))?;
    ensure(vc == 0.0 && vm == 0.0, || format!("violations C {vc}, M {vm}"))?;
    ensure(vb > 0.0, || "baseline reported no violations".into())?;
    Ok(format!(
        "MSE C {c:.2e}, M {mm:.2e}; violations C {vc}, M {vm}, baseline {vb} of {pairs}"
    ))
}

// 5 ------------------------------------------------------------------------

fn highdim(dir: &Path) -> Outcome {
    let m = cmd_gauss_highdim(&HighDimConfig::default(), dir).map_err(err)?;
    let rows = m.metrics["per_dim"].as_array().cloned().unwrap_or_default();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for r in &rows {
        let d = r["dim"].as_u64().unwrap_or(0);
        let c = r["mgradnet_c"].as_f64().unwrap_or(f64::NAN);
        let mm = r["mgradnet_m"].as_f64().unwrap_or(f64::NAN);
        worst = worst.max(c).max(mm);
        if c.is_nan() || mm.is_nan() {
            worst = f64::NAN;
        }
        let order = if mm <= c { "M <= C" } else { "M > C" };
        info(&format!("d={d}: C {c:.3e}, M {mm:.3e} ({order})"));
        parts.push(format!("d{d} C {c:.2e} M {mm:.2e}"));
    }
    let dims: Vec<u64> = rows.iter().filter_map(|r| r["dim"].as_u64()).collect();
    ensure(dims == [2, 4, 8, 16], || format!("ran dims {dims:?}"))?;
    ensure(worst <= 0.1, || format!("worst MSE {worst:.3e} > 0.1; {}", parts.join(", ")))?;
    Ok(format!("worst MSE {worst:.2e}; {}", parts.join(", ")))
}

// 6 ------------------------------------------------------------------------

fn random_problem(n: usize, seed: u64) -> (DenseMatrix, Vec<f64>, Vec<f64>) {
    let mut rng = SeededRng::new(seed);
    let xs: Vec<_> = (0..n).map(|_| DenseVector::new(rng.normal_vec(2))).collect();
    let ys: Vec<_> = (0..n).map(|_| DenseVector::new(rng.normal_vec(2))).collect();
    let mut weights = |k: usize| {
        let w: Vec<f64> = (0..k).map(|_| 0.5 + rng.uniform()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let mu = weights(n);
    let nu = weights(n);
    (squared_euclidean_cost(&xs, &ys).unwrap(), mu, nu)
}

fn sinkhorn_soundness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (cost, mu, nu) = random_problem(200, seed);
        let plan = sinkhorn(&cost, &mu, &nu, SinkhornParams::default()).map_err(err)?;
        // Marginals recomputed from the returned plan.
        let g = &plan.gamma;
        let rows: f64 = (0..200).map(|i| (g.row(i).iter().sum::<f64>() - mu[i]).abs()).sum();
        let cols: f64 = (0..200)
            .map(|j| ((0..200).map(|i| g[(i, j)]).sum::<f64>() - nu[j]).abs())
            .sum();
        worst = worst.max(rows).max(cols);
    }
    ensure(worst <= 1e-6, || format!("marginal l1 error {worst:.3e}"))?;
    let cost = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let plan = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], SinkhornParams::default()).map_err(err)?;
    let dev = plan.gamma.sub(&DenseMatrix::identity(2).scaled(0.5)).map_err(err)?.max_abs();
    ensure(dev <= 1e-3, || format!("2x2 plan off the diagonal coupling by {dev:.3e}"))?;
    Ok(format!("200x200 marginal error {worst:.2e}; 2x2 deviation {dev:.2e}"))
}

// 7 ------------------------------------------------------------------------

fn projection_vs_whitening() -> Outcome {
    let mut rng = SeededRng::new(31);
    let src = random_gaussian(2, &mut rng).map_err(err)?;
    let p = DensityModel::from(src.clone());
    let q = DensityModel::from(GaussianDensity::standard(2));
    let xs = p.sample(&mut rng, 500);
    let ys = q.sample(&mut rng, 500);
    let cost = squared_euclidean_cost(&xs, &ys).map_err(err)?;
    let w = uniform_weights(500);
    // Sampling noise dominates at 500 points; a wider kernel averages it out
    // faster than it adds entropic shrinkage.
    let params = SinkhornParams {
        epsilon: 0.2,
        max_iter: 100_000,
        ..SinkhornParams::default()
    };
    let plan = sinkhorn(&cost, &w, &w, params).map_err(err)?;
    let proj = barycentric_projection(&plan, &ys).map_err(err)?;
    let white = whitening_map(&src).map_err(err)?;
    let exact = xs.iter().map(|x| white.apply(x)).collect::<Result<Vec<_>>>().map_err(err)?;
    let mse = mse_between(&proj, &exact).map_err(err)?;
    ensure(mse <= 0.05, || format!("MSE {mse:.4} > 0.05"))?;
    Ok(format!("MSE {mse:.4} on 500 samples"))
}

// 8 ------------------------------------------------------------------------

fn morph_config(target: &str) -> MorphConfig {
    MorphConfig {
        source: Some(ImageSource { path: data("digit0.pgm"), index: 0 }),
        target: Some(ImageSource { path: data(target), index: 0 }),
        ..MorphConfig::default()
    }
}

fn map_mse(m: &RunManifest) -> f64 {
    m.metrics["map_mse"].as_f64().unwrap_or(f64::NAN)
}

fn morph(dir: &Path) -> Outcome {
    let cfg = morph_config("digit2.pgm");
    ensure(cfg.train.iterations == 2000 && cfg.samples == 1000, || "desk budget changed".into())?;
    let m = cmd_morph(&cfg, &dir.join("0to2")).map_err(err)?;
    let mse = map_mse(&m);
    ensure(mse <= 0.02, || format!("0->2 map-vs-projection MSE {mse:.4} > 0.02"))?;
    Ok(format!("0->2 map-vs-projection MSE {mse:.4} after 2000 iterations"))
}

fn morph_extra(dir: &Path) {
    match cmd_morph(&morph_config("digit4.pgm"), &dir.join("0to4")) {
        Ok(m) => info(&format!("0->4 at the desk budget: map-vs-projection MSE {:.4} (not gated)", map_mse(&m))),
        Err(e) => info(&format!("0->4 at the desk budget failed: {e}")),
    }
    if std::env::var_os("GRADNETOT_FULL_MORPH").is_none() {
        info("full 10000-iteration budget skipped (set GRADNETOT_FULL_MORPH=1)");
        return;
    }
    for (target, reference) in [("digit2.pgm", 0.00566), ("digit4.pgm", 0.00145)] {
        let mut cfg = morph_config(target);
        cfg.train.iterations = 10_000;
        cfg.train.batch_size = 1000;
        let name = format!("full_{target}");
        match cmd_morph(&cfg, &dir.join(name)) {
            Ok(m) => info(&format!(
                "0->{} full budget: MSE {:.5}, reference {reference}",
                &target[5..6],
                map_mse(&m)
            )),
            Err(e) => info(&format!("full budget {target} failed: {e}")),
        }
    }
}

// 9 ------------------------------------------------------------------------

fn csv_bytes(m: &RunManifest) -> Vec<(PathBuf, Vec<u8>)> {
    m.outputs
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (PathBuf::from(p.file_name().unwrap()), std::fs::read(p).unwrap_or_default()))
        .collect()
}

fn same_csvs(name: &str, run: impl Fn(&Path) -> gradnetot_cli::CliResult<RunManifest>, dir: &Path) -> std::result::Result<usize, String> {
    let a = run(&dir.join(format!("{name}_a"))).map_err(err)?;
    let b = run(&dir.join(format!("{name}_b"))).map_err(err)?;
    let (ca, cb) = (csv_bytes(&a), csv_bytes(&b));
    ensure(!ca.is_empty(), || format!("{name} wrote no CSV"))?;
    ensure(ca == cb, || format!("{name}: CSV outputs differ between runs"))?;
    Ok(ca.len())
}

fn reproducibility(dir: &Path) -> Outcome {
    let train = TrainConfig {
        batch_size: 50,
        iterations: 40,
        ..TrainConfig::default()
    };
    let g2 = Gauss2dConfig {
        seed: 8,
        train: train.clone(),
        mgradnet_c: ModelPlan::new(ArchSpec::C { groups: 2, width: 8 }, None),
        mgradnet_m: ModelPlan::new(ArchSpec::M { modules: 2, width: 8, temperature: 1.0 }, None),
        baseline: ModelPlan::new(ArchSpec::Baseline { hidden: 16 }, None),
        test_points: 200,
        monotonicity_pairs: 1000,
        ..Gauss2dConfig::default()
    };
    let hd = HighDimConfig {
        seed: 8,
        dims: vec![2, 4],
        train: train.clone(),
        mgradnet_c: g2.mgradnet_c.clone(),
        mgradnet_m: g2.mgradnet_m.clone(),
        test_points: 200,
        ..HighDimConfig::default()
    };
    let mut mo = morph_config("digit4.pgm");
    mo.seed = 8;
    mo.train.batch_size = 50;
    mo.train.iterations = 40;
    mo.samples = 200;

    let mut files = 0;
    files += same_csvs("gauss2d", |d| cmd_gauss2d(&g2, d), dir)?;
    files += same_csvs("gauss-highdim", |d| cmd_gauss_highdim(&hd, d), dir)?;
    files += same_csvs("morph", |d| cmd_morph(&mo, d), dir)?;

    let ckpt = dir.join("gauss2d_a").join("mgradnet_m_checkpoint.json");
    let src = &serde_json::from_str::<serde_json::Value>(
        &std::fs::read_to_string(dir.join("gauss2d_a/manifest.json")).map_err(err)?,
    )
    .map_err(err)?["metrics"]["source"];
    let ver = VerifyConfig {
        seed: 8,
        checkpoint: Some(ckpt),
        points: 300,
        source: Some(DensitySpec::Gaussian {
            mean: serde_json::from_value(src["mean"].clone()).map_err(err)?,
            covariance: serde_json::from_value(src["covariance"].clone()).map_err(err)?,
        }),
        target: Some(DensitySpec::StandardNormal { dim: 2 }),
    };
    files += same_csvs("verify", |d| cmd_verify(&ver, d), dir)?;
    Ok(format!("4 subcommands, {files} CSV files identical across reruns"))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = tmp.path();
    let mut report = Report { failures: 0 };
    let secs = Duration::from_secs;

    report.run(1, "structural SPD invariant", secs(10), spd_invariant);
    report.run(2, "autodiff vs finite differences", secs(30), autodiff_fd);
    report.run(3, "zero loss at the analytic optimum", secs(10), zero_loss);
    report.run(4, "2-D Gaussian transport", secs(300), || gauss2d(&dir.join("gauss2d")));
    report.run(5, "high-dimensional sweep", secs(1200), || highdim(&dir.join("highdim")));
    report.run(6, "Sinkhorn soundness", secs(30), sinkhorn_soundness);
    report.run(7, "barycentric projection vs whitening", secs(60), projection_vs_whitening);
    report.run(8, "morphing at the desk budget", secs(600), || morph(&dir.join("morph")));
    morph_extra(&dir.join("morph"));
    report.run(9, "bitwise reproducibility", secs(300), || reproducibility(&dir.join("repro")));

    if report.failures == 0 {
        println!("all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{} of 9 criteria failed", report.failures);
        ExitCode::FAILURE
    }
}
