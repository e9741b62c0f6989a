//! JSON checkpoints with exact floats.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, ArchTag, BaselineMlp, GradNet, GradNetC, GradNetM, PotentialModule, RidgeGroup};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::numfmt::to_json_exact_pretty;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: ArchTag,
    pub dimension: usize,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub params: Vec<ParamRecord>,
    pub seed: u64,
    pub iteration: usize,
}

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_net(net: &GradNet, seed: u64, iteration: usize) -> Self {
        let params = net
            .parameter_names()
            .into_iter()
            .zip(net.parameters())
            .map(|(name, m)| ParamRecord {
                name,
                shape: [m.rows(), m.cols()],
                data: m.as_slice().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: net.arch(),
            dimension: net.dim(),
            activation: net.activation(),
            temperature: net.temperature(),
            params,
            seed,
            iteration,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_exact_pretty(self).map_err(|e| ck_err(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ck_err(e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ck_err(format!("unsupported format_version {}", ck.format_version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| ck_err(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ck_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Rebuilds the network; the parameter names and shapes must match the
    /// declared architecture exactly.
    pub fn to_net(&self) -> Result<GradNet> {
        let mut table: HashMap<&str, DenseMatrix> = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let m = DenseMatrix::from_vec(p.shape[0], p.shape[1], p.data.clone())
                .map_err(|_| ck_err(format!("{}: shape {:?} does not match {} values", p.name, p.shape, p.data.len())))?;
            if table.insert(p.name.as_str(), m).is_some() {
                return Err(ck_err(format!("duplicate parameter {}", p.name)));
            }
        }
        let mut take = |name: &str| table.remove(name).ok_or_else(|| ck_err(format!("missing parameter {name}")));
        let net = match self.architecture {
            ArchTag::MgradnetC => {
                let groups = count_prefixed(&self.params, "", "group");
                GradNet::C(take_c(&mut take, "", groups, self.activation)?)
            }
            ArchTag::MgradnetM => {
                let modules = self
                    .params
                    .iter()
                    .filter(|p| p.name.starts_with("module") && p.name.ends_with(".offset"))
                    .count();
                let temperature = self
                    .temperature
                    .ok_or_else(|| ck_err("mgradnet_m checkpoint without temperature"))?;
                let mut mods = Vec::with_capacity(modules);
                for k in 0..modules {
                    let prefix = format!("module{k}.");
                    let groups = count_prefixed(&self.params, &prefix, "group");
                    let body = take_c(&mut take, &prefix, groups, self.activation)?;
                    let offset = take(&format!("{prefix}offset"))?;
                    mods.push(PotentialModule { body, offset });
                }
                if mods.is_empty() {
                    return Err(ck_err("mgradnet_m checkpoint without modules"));
                }
                GradNet::M(GradNetM {
                    activation: self.activation,
                    temperature,
                    modules: mods,
                })
            }
            ArchTag::Baseline => GradNet::Baseline(BaselineMlp {
                activation: self.activation,
                w1: take("layer1.weight")?,
                b1: take("layer1.bias")?,
                w2: take("layer2.weight")?,
                b2: take("layer2.bias")?,
                w3: take("layer3.weight")?,
                b3: take("layer3.bias")?,
            }),
        };
        if !table.is_empty() {
            let mut extra: Vec<_> = table.keys().collect();
            extra.sort();
            return Err(ck_err(format!("unexpected parameters {extra:?}")));
        }
        let rebuilt = Checkpoint::from_net(&net, self.seed, self.iteration);
        let shapes = |c: &Checkpoint| c.params.iter().map(|p| (p.name.clone(), p.shape)).collect::<HashMap<_, _>>();
        if net.dim() != self.dimension || shapes(&rebuilt) != shapes(self) || !consistent_shapes(&net) {
            return Err(ck_err("parameter shapes are inconsistent with the architecture"));
        }
        Ok(net)
    }
}

fn count_prefixed(params: &[ParamRecord], prefix: &str, unit: &str) -> usize {
    let head = format!("{prefix}{unit}");
    params
        .iter()
        .filter(|p| {
            p.name
                .strip_prefix(&head)
                .and_then(|rest| rest.split_once('.'))
                .is_some_and(|(idx, leaf)| leaf == "weight" && idx.parse::<usize>().is_ok())
        })
        .count()
}

fn take_c(
    take: &mut impl FnMut(&str) -> Result<DenseMatrix>,
    prefix: &str,
    groups: usize,
    activation: Activation,
) -> Result<GradNetC> {
    let groups = (0..groups)
        .map(|k| {
            Ok(RidgeGroup {
                weight: take(&format!("{prefix}group{k}.weight"))?,
                bias: take(&format!("{prefix}group{k}.bias"))?,
                scale_raw: take(&format!("{prefix}group{k}.scale"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradNetC {
        activation,
        groups,
        lower_raw: take(&format!("{prefix}lower"))?,
        shift: take(&format!("{prefix}shift"))?,
    })
}

fn consistent_c(c: &GradNetC, d: usize) -> bool {
    c.lower_raw.shape() == (d, d)
        && c.shift.shape() == (d, 1)
        && c.groups.iter().all(|g| {
            let k = g.weight.rows();
            g.weight.cols() == d && g.bias.shape() == (k, 1) && g.scale_raw.shape() == (1, 1)
        })
}

fn consistent_shapes(net: &GradNet) -> bool {
    let d = net.dim();
    match net {
        GradNet::C(c) => consistent_c(c, d),
        GradNet::M(m) => m
            .modules
            .iter()
            .all(|md| consistent_c(&md.body, d) && md.offset.shape() == (1, 1)),
        GradNet::Baseline(b) => {
            let h = b.w1.rows();
            b.b1.shape() == (h, 1)
                && b.w2.shape() == (h, h)
                && b.b2.shape() == (h, 1)
                && b.w3.shape() == (d, h)
                && b.b3.shape() == (d, 1)
        }
    }
}
