//! JSON run configurations. Every field has a default, and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use gradnetot_core::discrete_ot::SinkhornParams;
use gradnetot_core::gradnet::{Activation, ArchSpec};
use gradnetot_core::training::{PointLoss, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One network to train. `iterations` replaces the shared budget for this
/// model only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPlan {
    pub spec: ArchSpec,
    #[serde(default)]
    pub iterations: Option<usize>,
}

impl ModelPlan {
    pub fn new(spec: ArchSpec, iterations: Option<usize>) -> Self {
        Self { spec, iterations }
    }

    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations.unwrap_or(base.iterations),
            seed,
            ..base.clone()
        }
    }
}

fn desk_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 200,
        iterations,
        eval_every: 10,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gauss2dConfig {
    pub seed: u64,
    pub activation: Activation,
    /// Shared optimizer settings. Its `seed` is replaced by one derived from
    /// the top-level seed.
    pub train: TrainConfig,
    pub mgradnet_c: ModelPlan,
    pub mgradnet_m: ModelPlan,
    pub baseline: ModelPlan,
    pub test_points: usize,
    pub monotonicity_pairs: usize,
}

impl Default for Gauss2dConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            activation: Activation::Tanh,
            train: desk_train(2000),
            mgradnet_c: ModelPlan::new(ArchSpec::default_c(), Some(3000)),
            mgradnet_m: ModelPlan::new(ArchSpec::default_m(), None),
            baseline: ModelPlan::new(ArchSpec::default_baseline(), Some(1000)),
            test_points: 1000,
            monotonicity_pairs: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighDimConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub mgradnet_c: ModelPlan,
    pub mgradnet_m: ModelPlan,
    pub test_points: usize,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: vec![2, 4, 8, 16],
            activation: Activation::Tanh,
            // Wishart covariances at d = 16 are badly conditioned; wide nets and
            // a 1e-4 learning-rate floor stall well short of the whitening map.
            train: TrainConfig {
                lr_start: 5e-2,
                lr_end: 1e-3,
                ..desk_train(5000)
            },
            mgradnet_c: ModelPlan::new(ArchSpec::C { groups: 2, width: 16 }, None),
            mgradnet_m: ModelPlan::new(
                ArchSpec::M {
                    modules: 4,
                    width: 16,
                    temperature: 1.0,
                },
                None,
            ),
            test_points: 1000,
        }
    }
}

/// An image file, plus the image index when it is an IDX archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSource {
    pub path: PathBuf,
    #[serde(default)]
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    pub seed: u64,
    pub source: Option<ImageSource>,
    pub target: Option<ImageSource>,
    /// Kernel variance of the image densities after decay.
    pub sigma2: f64,
    pub activation: Activation,
    /// Training settings; `sigma2_end` must equal `sigma2` when set.
    pub train: TrainConfig,
    pub model: ArchSpec,
    pub samples: usize,
    pub times: Vec<f64>,
    pub sinkhorn: SinkhornParams,
    pub raster_size: usize,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            source: None,
            target: None,
            sigma2: 1e-4,
            activation: Activation::Tanh,
            train: TrainConfig {
                sigma2_start: Some(1e-2),
                sigma2_end: Some(1e-4),
                clip_norm: Some(100.0),
                loss: PointLoss::Squared,
                ..desk_train(2000)
            },
            model: ArchSpec::default_m(),
            samples: 1000,
            times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sinkhorn: SinkhornParams {
                epsilon: 1e-3,
                max_iter: 20_000,
                tol: 1e-6,
            },
            raster_size: 28,
        }
    }
}

/// A density given by value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    StandardNormal { dim: usize },
    Image { path: PathBuf, #[serde(default)] index: usize, sigma2: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub points: usize,
    pub source: Option<DensitySpec>,
    pub target: Option<DensitySpec>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint: None,
            points: 1000,
            source: None,
            target: None,
        }
    }
}

/// Reads a config file, or the defaults when `path` is `None`.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub(crate) fn check_train(cfg: &TrainConfig, what: &str) -> CliResult<()> {
    cfg.validate().map_err(|e| CliError::Config(format!("{what}: {e}")))
}

pub(crate) fn check_plan(plan: &ModelPlan, base: &TrainConfig, what: &str) -> CliResult<()> {
    if plan.iterations == Some(0) {
        return Err(CliError::Config(format!("{what}: iterations must be positive")));
    }
    check_train(&plan.train_config(base, 0), what)
}

impl Gauss2dConfig {
    pub fn validate(&self) -> CliResult<()> {
        check_train(&self.train, "train")?;
        for (name, plan) in self.plans() {
            check_plan(plan, &self.train, name)?;
        }
        if self.test_points == 0 || self.monotonicity_pairs == 0 {
            return Err(CliError::Config("test_points and monotonicity_pairs must be positive".into()));
        }
        Ok(())
    }

    pub fn plans(&self) -> [(&'static str, &ModelPlan); 3] {
        [("baseline", &self.baseline), ("mgradnet_c", &self.mgradnet_c), ("mgradnet_m", &self.mgradnet_m)]
    }

    /// Applies `--iterations`: every model then trains for `n` iterations.
    pub fn override_iterations(&mut self, n: usize) {
        self.train.iterations = n;
        for plan in [&mut self.baseline, &mut self.mgradnet_c, &mut self.mgradnet_m] {
            plan.iterations = None;
        }
    }
}

impl HighDimConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.dims.is_empty() {
            return Err(CliError::Config("dims must not be empty".into()));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d < 2) {
            return Err(CliError::Config(format!("every dimension must be at least 2, got {d}")));
        }
        check_train(&self.train, "train")?;
        check_plan(&self.mgradnet_c, &self.train, "mgradnet_c")?;
        check_plan(&self.mgradnet_m, &self.train, "mgradnet_m")?;
        if self.test_points == 0 {
            return Err(CliError::Config("test_points must be positive".into()));
        }
        Ok(())
    }

    pub fn override_iterations(&mut self, n: usize) {
        self.train.iterations = n;
        self.mgradnet_c.iterations = None;
        self.mgradnet_m.iterations = None;
    }
}

impl MorphConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.source.is_none() || self.target.is_none() {
            return Err(CliError::Config("morph needs both source and target images".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(CliError::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        check_train(&self.train, "train")?;
        if let Some(end) = self.train.sigma2_end {
            if end != self.sigma2 {
                return Err(CliError::Config(format!(
                    "train.sigma2_end ({end}) must equal sigma2 ({})",
                    self.sigma2
                )));
            }
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples must be positive".into()));
        }
        if let Some(t) = self.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::Config(format!("interpolation time {t} outside [0, 1]")));
        }
        if self.raster_size < 2 {
            return Err(CliError::Config("raster_size must be at least 2".into()));
        }
        Ok(())
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.checkpoint.is_none() {
            return Err(CliError::Config("verify needs a checkpoint".into()));
        }
        if self.points == 0 {
            return Err(CliError::Config("points must be positive".into()));
        }
        if self.source.is_some() != self.target.is_some() {
            return Err(CliError::Config("give both source and target densities, or neither".into()));
        }
        Ok(())
    }
}
