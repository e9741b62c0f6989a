use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gradnetot_cli::commands::{cmd_gauss2d, cmd_gauss_highdim, cmd_morph, cmd_verify, time_label};
use gradnetot_cli::config::{
    DensitySpec, Gauss2dConfig, HighDimConfig, ImageSource, ModelPlan, MorphConfig, VerifyConfig,
};
use gradnetot_cli::{CliError, RunManifest};
use gradnetot_core::densities::{DensityModel, GaussianDensity};
use gradnetot_core::discrete_ot::{whitening_map, PointMap};
use gradnetot_core::gradnet::{Activation, ArchSpec, Checkpoint, GradNet};
use gradnetot_core::numfmt::fmt_f64;
use gradnetot_core::training::{train, TrainConfig};
use gradnetot_core::{DenseMatrix, DenseVector, SeededRng};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn small_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        iterations,
        ..TrainConfig::default()
    }
}

fn small_gauss2d() -> Gauss2dConfig {
    Gauss2dConfig {
        seed: 4,
        train: small_train(20),
        mgradnet_c: ModelPlan::new(ArchSpec::C { groups: 2, width: 4 }, None),
        mgradnet_m: ModelPlan::new(ArchSpec::M { modules: 2, width: 4, temperature: 1.0 }, Some(10)),
        baseline: ModelPlan::new(ArchSpec::Baseline { hidden: 8 }, None),
        test_points: 50,
        monotonicity_pairs: 500,
        ..Gauss2dConfig::default()
    }
}

fn csv_outputs(m: &RunManifest) -> Vec<(String, Vec<u8>)> {
    m.outputs
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).unwrap()))
        .collect()
}

fn all_outputs_exist(m: &RunManifest) {
    for p in &m.outputs {
        assert!(p.is_file(), "{} missing", p.display());
    }
    let text = fs::read_to_string(m.output("manifest.json").unwrap()).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, m);
}

#[test]
fn gauss2d_writes_everything_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_gauss2d();
    let a = cmd_gauss2d(&cfg, &tmp.path().join("a")).unwrap();
    all_outputs_exist(&a);
    for name in ["baseline", "mgradnet_c", "mgradnet_m"] {
        assert!(a.output(&format!("{name}.csv")).is_some());
        assert!(a.output(&format!("{name}_checkpoint.json")).is_some());
        assert!(a.output(&format!("{name}_train.jsonl")).is_some());
    }
    for name in ["mgradnet_c", "mgradnet_m"] {
        assert_eq!(a.metrics["models"][name]["monotonicity_violations"], 0);
    }
    assert_eq!(a.metrics["models"]["mgradnet_m"]["iterations"], 10);

    let b = cmd_gauss2d(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(csv_outputs(&a), csv_outputs(&b));
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn whitening_csv_rederives_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = cmd_gauss2d(&small_gauss2d(), tmp.path()).unwrap();
    let src = &m.metrics["source"];
    let mean: Vec<f64> = serde_json::from_value(src["mean"].clone()).unwrap();
    let cov: Vec<Vec<f64>> = serde_json::from_value(src["covariance"].clone()).unwrap();
    let g = GaussianDensity::new(DenseVector::new(mean), DenseMatrix::from_rows(&cov).unwrap()).unwrap();
    let white = whitening_map(&g).unwrap();

    let mut rdr = csv::Reader::from_path(m.output("whitening.csv").unwrap()).unwrap();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let x: Vec<f64> = (0..2).map(|k| rec[k].parse().unwrap()).collect();
        let y = white.apply(&DenseVector::new(x)).unwrap();
        assert_eq!(&rec[2], fmt_f64(y[0]));
        assert_eq!(&rec[3], fmt_f64(y[1]));
        n += 1;
    }
    assert_eq!(n, 50);
}

#[test]
fn config_snapshot_replays_to_the_same_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let first = cmd_gauss2d(&small_gauss2d(), &tmp.path().join("first")).unwrap();
    let replayed: Gauss2dConfig = serde_json::from_value(first.config.clone()).unwrap();
    let second = cmd_gauss2d(&replayed, &tmp.path().join("second")).unwrap();
    assert_eq!(first.metrics, second.metrics);
}

#[test]
fn highdim_rows_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = HighDimConfig {
        seed: 2,
        dims: vec![2, 3],
        train: small_train(15),
        mgradnet_c: ModelPlan::new(ArchSpec::C { groups: 2, width: 4 }, None),
        mgradnet_m: ModelPlan::new(ArchSpec::M { modules: 2, width: 4, temperature: 1.0 }, None),
        test_points: 40,
        ..HighDimConfig::default()
    };
    let a = cmd_gauss_highdim(&cfg, &tmp.path().join("a")).unwrap();
    all_outputs_exist(&a);
    let text = fs::read_to_string(a.output("mse.csv").unwrap()).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "dim,model,mse");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("2,mgradnet_c,") && lines[4].starts_with("3,mgradnet_m,"));
    let b = cmd_gauss_highdim(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(csv_outputs(&a), csv_outputs(&b));
}

#[test]
fn config_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = |cfg: HighDimConfig| matches!(cmd_gauss_highdim(&cfg, tmp.path()), Err(CliError::Config(_)));
    assert!(bad(HighDimConfig { dims: vec![], ..HighDimConfig::default() }));
    assert!(bad(HighDimConfig { dims: vec![1], ..HighDimConfig::default() }));
    let mut cfg = small_gauss2d();
    cfg.train.lr_start = -1.0;
    assert!(matches!(cmd_gauss2d(&cfg, tmp.path()), Err(CliError::Config(_))));
    assert!(matches!(cmd_morph(&MorphConfig::default(), tmp.path()), Err(CliError::Config(_))));
    assert!(matches!(cmd_verify(&VerifyConfig::default(), tmp.path()), Err(CliError::Config(_))));

    assert!(serde_json::from_str::<Gauss2dConfig>(r#"{"seed": 1, "sed": 2}"#).is_err());
    assert!(serde_json::from_str::<MorphConfig>(r#"{"train": {"iters": 5}}"#).is_err());
    let cfg: HighDimConfig = serde_json::from_str(r#"{"dims": [3]}"#).unwrap();
    assert_eq!(cfg.dims, vec![3]);
    assert_eq!(cfg.test_points, 1000);
}

fn small_morph(source: &str, target: &str, iterations: usize) -> MorphConfig {
    let mut cfg = MorphConfig {
        seed: 1,
        source: Some(ImageSource { path: data(source), index: 0 }),
        target: Some(ImageSource { path: data(target), index: 0 }),
        model: ArchSpec::M { modules: 2, width: 8, temperature: 1.0 },
        samples: 200,
        ..MorphConfig::default()
    };
    cfg.train.batch_size = 64;
    cfg.train.iterations = iterations;
    cfg
}

#[test]
fn morph_identical_images_learns_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let m = cmd_morph(&small_morph("digit2.pgm", "digit2_p5.pgm", 300), tmp.path()).unwrap();
    all_outputs_exist(&m);
    let id = m.metrics["identity_mse"].as_f64().unwrap();
    assert!(id <= 1e-2, "{id}");
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let label = time_label(t);
        for prefix in ["frame", "projection"] {
            assert!(m.output(&format!("{prefix}_t{label}.csv")).is_some());
            assert!(m.output(&format!("{prefix}_t{label}.pgm")).is_some());
        }
    }
    // Near-identity map: every frame still looks like the input.
    for f in m.metrics["frames"].as_array().unwrap() {
        assert!(f["ncc_source"].as_f64().unwrap() >= 0.7, "{f}");
    }
}

#[test]
fn morph_reproducible_and_reads_idx() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_morph("digit0.pgm", "digits.idx", 20);
    cfg.target.as_mut().unwrap().index = 2;
    let a = cmd_morph(&cfg, &tmp.path().join("a")).unwrap();
    let b = cmd_morph(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(csv_outputs(&a), csv_outputs(&b));
    let t = time_label(0.0);
    assert_eq!(
        fs::read(a.output(&format!("frame_t{t}.pgm")).unwrap()).unwrap(),
        fs::read(b.output(&format!("frame_t{t}.pgm")).unwrap()).unwrap()
    );
}

#[test]
fn morph_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let blank = tmp.path().join("blank.pgm");
    fs::write(&blank, "P2 2 2 255\n0 0 0 0\n").unwrap();
    let mut cfg = small_morph("digit0.pgm", "digit2.pgm", 1);
    cfg.target = Some(ImageSource { path: blank, index: 0 });
    let err = cmd_morph(&cfg, tmp.path()).unwrap_err();
    assert_eq!(err.kind(), "all_zero_image");

    cfg.target = Some(ImageSource { path: data("nope.pgm"), index: 0 });
    assert_eq!(cmd_morph(&cfg, tmp.path()).unwrap_err().kind(), "io");
}

#[test]
fn time_labels() {
    assert_eq!(time_label(0.0), "0.0");
    assert_eq!(time_label(0.25), "0.25");
    assert_eq!(time_label(1.0), "1.0");
}

fn one_dim_checkpoint(dir: &Path) -> PathBuf {
    let p = DensityModel::from(GaussianDensity::new(DenseVector::new(vec![0.0]), DenseMatrix::scalar(4.0)).unwrap());
    let q = DensityModel::from(GaussianDensity::standard(1));
    let mut net = GradNet::init(&ArchSpec::C { groups: 2, width: 8 }, 1, Activation::Tanh, &mut SeededRng::new(11)).unwrap();
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 200,
        seed: 5,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &p, &q, &cfg).unwrap();
    let path = dir.join("one_dim.json");
    report.checkpoint.save(&path).unwrap();
    path
}

#[test]
fn verify_trained_checkpoint_with_densities() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = VerifyConfig {
        checkpoint: Some(one_dim_checkpoint(tmp.path())),
        points: 500,
        source: Some(DensitySpec::Gaussian { mean: vec![0.0], covariance: vec![vec![4.0]] }),
        target: Some(DensitySpec::StandardNormal { dim: 1 }),
        ..VerifyConfig::default()
    };
    let m = cmd_verify(&cfg, &tmp.path().join("out")).unwrap();
    all_outputs_exist(&m);
    assert_eq!(m.metrics["max_asymmetry"], 0.0);
    assert!(m.metrics["min_eigenvalue"].as_f64().unwrap() > 0.0);
    assert_eq!(m.metrics["monotonicity_violations"], 0);
    let mean = m.metrics["residual"]["mean_abs"].as_f64().unwrap();
    assert!(mean <= 0.05, "{mean}");
}

#[test]
fn verify_reports_baseline_asymmetry() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(3);
    for spec in [ArchSpec::default_m(), ArchSpec::default_c(), ArchSpec::default_baseline()] {
        let net = GradNet::init(&spec, 3, Activation::Tanh, &mut rng).unwrap();
        let path = tmp.path().join("net.json");
        Checkpoint::from_net(&net, 0, 0).save(&path).unwrap();
        let cfg = VerifyConfig {
            checkpoint: Some(path),
            points: 200,
            ..VerifyConfig::default()
        };
        let m = cmd_verify(&cfg, &tmp.path().join("out")).unwrap();
        let asym = m.metrics["max_asymmetry"].as_f64().unwrap();
        if net.is_monotone() {
            assert_eq!(asym, 0.0);
            assert!(m.metrics["min_eigenvalue"].as_f64().unwrap() > 0.0);
            assert_eq!(m.metrics["monotonicity_violations"], 0);
        } else {
            assert!(asym > 0.0);
        }
        assert!(m.metrics["residual"].is_null());
    }
}

#[test]
fn verify_rejects_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"format_version": 1}"#).unwrap();
    let cfg = VerifyConfig {
        checkpoint: Some(path),
        ..VerifyConfig::default()
    };
    assert_eq!(cmd_verify(&cfg, tmp.path()).unwrap_err().kind(), "checkpoint");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradnetot"))
}

#[test]
fn binary_runs_and_reports_errors_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"dims": [2], "test_points": 20,
            "train": {"batch_size": 16},
            "mgradnet_c": {"spec": {"arch": "c", "groups": 1, "width": 4}},
            "mgradnet_m": {"spec": {"arch": "m", "modules": 2, "width": 4}}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    let out = bin()
        .args(["gauss-highdim", "--iterations", "5", "--seed", "9", "--config"])
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.config["train"]["iterations"], 5);

    fs::write(&cfg_path, r#"{"dims": [2], "bogus": true}"#).unwrap();
    let out = bin().arg("gauss-highdim").arg("--config").arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let out = bin().arg("teleport").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let out = bin().args(["verify", "--iterations", "3"]).output().unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}
