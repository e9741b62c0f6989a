//! Monotone gradient networks.
//!
//! * [`GradNetC`]: `T(x) = Σ_g softplus(a_g)·W_gᵀσ(W_g x + b_g) + L·Lᵀ·x + c`,
//!   the gradient of a sum of convex ridge functions plus a strictly convex
//!   quadratic. Its Jacobian `Σ_g softplus(a_g)·W_gᵀ diag(σ′) W_g + L·Lᵀ` is
//!   symmetric positive definite for every input and parameter value.
//! * [`GradNetM`]: the gradient of `τ·logsumexp(φ_m(x)/τ)` over convex module
//!   potentials `φ_m`, each shaped like a `GradNetC` potential plus an offset.
//! * [`BaselineMlp`]: an unconstrained two-hidden-layer network used as the
//!   non-monotone comparison.
//!
//! Each architecture is written once against [`Graph`], so the same code
//! evaluates directly or records onto a [`Tape`](crate::autodiff::Tape).

mod checkpoint;

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

pub use crate::autodiff::Activation;
use crate::autodiff::{softplus_inv, Eval, Graph, Order};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::SeededRng;

/// One family of ridge units: `W` is `k x d`, `b` is `k x 1`, and the group
/// weight is `softplus(scale_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeGroup {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
    pub scale_raw: DenseMatrix,
}

impl RidgeGroup {
    fn init(width: usize, dim: usize, group_weight: f64, rng: &mut SeededRng) -> Result<Self> {
        let sd = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            weight: DenseMatrix::from_vec(width, dim, rng.normal_vec(width * dim))?.scaled(sd),
            bias: DenseMatrix::zeros(width, 1),
            scale_raw: DenseMatrix::scalar(softplus_inv(group_weight)),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradNetC {
    pub activation: Activation,
    pub groups: Vec<RidgeGroup>,
    /// Free values of the lower factor; the diagonal passes through softplus.
    pub lower_raw: DenseMatrix,
    pub shift: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialModule {
    pub body: GradNetC,
    pub offset: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradNetM {
    pub activation: Activation,
    pub temperature: f64,
    pub modules: Vec<PotentialModule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineMlp {
    pub activation: Activation,
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
    pub w3: DenseMatrix,
    pub b3: DenseMatrix,
}

/// Architecture choice and widths for [`GradNet::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    C {
        #[serde(default = "default_c_groups")]
        groups: usize,
        #[serde(default = "default_c_width")]
        width: usize,
    },
    M {
        #[serde(default = "default_m_modules")]
        modules: usize,
        #[serde(default = "default_m_width")]
        width: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Baseline {
        #[serde(default = "default_c_width")]
        hidden: usize,
    },
}

fn default_c_groups() -> usize {
    4
}
fn default_c_width() -> usize {
    64
}
fn default_m_modules() -> usize {
    8
}
fn default_m_width() -> usize {
    32
}
fn default_temperature() -> f64 {
    1.0
}

impl ArchSpec {
    pub fn default_c() -> Self {
        ArchSpec::C {
            groups: default_c_groups(),
            width: default_c_width(),
        }
    }

    pub fn default_m() -> Self {
        ArchSpec::M {
            modules: default_m_modules(),
            width: default_m_width(),
            temperature: default_temperature(),
        }
    }

    pub fn default_baseline() -> Self {
        ArchSpec::Baseline {
            hidden: default_c_width(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradNet {
    C(GradNetC),
    M(GradNetM),
    Baseline(BaselineMlp),
}

/// Identifies the architecture in checkpoints and reports.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchTag {
    MgradnetC,
    MgradnetM,
    Baseline,
}

impl ArchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchTag::MgradnetC => "mgradnet_c",
            ArchTag::MgradnetM => "mgradnet_m",
            ArchTag::Baseline => "baseline",
        }
    }
}

impl GradNetC {
    pub fn init(dim: usize, groups: usize, width: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 || groups == 0 || width == 0 {
            return Err(Error::InvalidArgument("dimension, groups and width must be at least 1".into()));
        }
        // Each group sums `width` ridge gradients, so the weight averages them.
        let gw = 1.0 / (groups * width) as f64;
        let groups = (0..groups)
            .map(|_| RidgeGroup::init(width, dim, gw, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            activation,
            groups,
            lower_raw: identity_lower_raw(dim),
            shift: DenseMatrix::zeros(dim, 1),
        })
    }

    /// All ridge weights zero and `L = I`, so `T(x) = x`.
    pub fn identity(dim: usize, groups: usize, width: usize, activation: Activation) -> Self {
        let gw = 1.0 / (groups * width).max(1) as f64;
        Self {
            activation,
            groups: (0..groups)
                .map(|_| RidgeGroup {
                    weight: DenseMatrix::zeros(width, dim),
                    bias: DenseMatrix::zeros(width, 1),
                    scale_raw: DenseMatrix::scalar(softplus_inv(gw)),
                })
                .collect(),
            lower_raw: identity_lower_raw(dim),
            shift: DenseMatrix::zeros(dim, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower_raw.rows()
    }

    /// Sets `L` from a lower-triangular factor with positive diagonal.
    pub fn set_lower_factor(&mut self, l: &DenseMatrix) -> Result<()> {
        let d = self.dim();
        if l.shape() != (d, d) {
            return Err(shape_err("set_lower_factor", format!("{}x{} for dim {d}", l.rows(), l.cols())));
        }
        let mut raw = DenseMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..i {
                raw[(i, j)] = l[(i, j)];
            }
            if !(l[(i, i)] > 0.0) {
                return Err(Error::InvalidArgument("factor diagonal must be positive".into()));
            }
            raw[(i, i)] = softplus_inv(l[(i, i)]);
        }
        self.lower_raw = raw;
        Ok(())
    }

    fn params(&self) -> Vec<&DenseMatrix> {
        let mut out = Vec::with_capacity(3 * self.groups.len() + 2);
        for g in &self.groups {
            out.extend([&g.weight, &g.bias, &g.scale_raw]);
        }
        out.extend([&self.lower_raw, &self.shift]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out = Vec::with_capacity(3 * self.groups.len() + 2);
        for g in &mut self.groups {
            out.extend([&mut g.weight, &mut g.bias, &mut g.scale_raw]);
        }
        out.extend([&mut self.lower_raw, &mut self.shift]);
        out
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.groups.len() {
            for leaf in ["weight", "bias", "scale"] {
                out.push(format!("{prefix}group{k}.{leaf}"));
            }
        }
        out.push(format!("{prefix}lower"));
        out.push(format!("{prefix}shift"));
        out
    }

    fn bind<G: Graph>(&self, g: &mut G) -> Result<BoundC<G::Var>> {
        let mut groups = Vec::with_capacity(self.groups.len());
        let mut leaves = Vec::new();
        for grp in &self.groups {
            let w = g.param(&grp.weight);
            let b = g.param(&grp.bias);
            let a_raw = g.param(&grp.scale_raw);
            leaves.extend([w.clone(), b.clone(), a_raw.clone()]);
            let wt = g.transpose(&w)?;
            let a = g.elementwise(&a_raw, Activation::Softplus, Order::Value)?;
            groups.push(BoundGroup { w, wt, b, a });
        }
        let raw = g.param(&self.lower_raw);
        let shift = g.param(&self.shift);
        leaves.extend([raw.clone(), shift.clone()]);
        let l = g.lower_factor(&raw)?;
        let lt = g.transpose(&l)?;
        let llt = g.matmul(&l, &lt)?;
        let shift_t = g.transpose(&shift)?;
        Ok(BoundC {
            groups,
            llt,
            shift,
            shift_t,
            leaves,
        })
    }
}

fn identity_lower_raw(dim: usize) -> DenseMatrix {
    DenseMatrix::identity(dim).scaled(softplus_inv(1.0))
}

impl GradNetM {
    pub fn init(
        dim: usize,
        modules: usize,
        width: usize,
        temperature: f64,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if modules == 0 {
            return Err(Error::InvalidArgument("at least one module is required".into()));
        }
        if !activation.has_antiderivative() {
            return Err(Error::UnsupportedActivation(activation));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        let modules = (0..modules)
            .map(|_| {
                Ok(PotentialModule {
                    body: GradNetC::init(dim, 1, width, activation, rng)?,
                    offset: DenseMatrix::scalar(0.0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            activation,
            temperature,
            modules,
        })
    }

    pub fn dim(&self) -> usize {
        self.modules[0].body.dim()
    }
}

impl BaselineMlp {
    pub fn init(dim: usize, hidden: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("dimension and hidden width must be at least 1".into()));
        }
        let mut layer = |rows: usize, cols: usize| -> Result<DenseMatrix> {
            let sd = 1.0 / (cols as f64).sqrt();
            Ok(DenseMatrix::from_vec(rows, cols, rng.normal_vec(rows * cols))?.scaled(sd))
        };
        Ok(Self {
            activation,
            w1: layer(hidden, dim)?,
            b1: DenseMatrix::zeros(hidden, 1),
            w2: layer(hidden, hidden)?,
            b2: DenseMatrix::zeros(hidden, 1),
            w3: layer(dim, hidden)?,
            b3: DenseMatrix::zeros(dim, 1),
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }
}

struct BoundGroup<V> {
    w: V,
    wt: V,
    b: V,
    /// softplus of the raw group scale
    a: V,
}

struct BoundC<V> {
    groups: Vec<BoundGroup<V>>,
    llt: V,
    shift: V,
    shift_t: V,
    leaves: Vec<V>,
}

/// Network parameters placed on a [`Graph`], with parameter-only
/// subexpressions (`L·Lᵀ`, `Wᵀ`, softplus weights) computed once.
pub struct Bound<V> {
    kind: BoundKind<V>,
}

enum BoundKind<V> {
    C(BoundC<V>),
    M {
        modules: Vec<(BoundC<V>, V)>,
    },
    Baseline {
        w1: V,
        b1: V,
        w2: V,
        b2: V,
        w3: V,
        b3: V,
    },
}

impl<V: Clone> Bound<V> {
    /// Parameter variables in [`GradNet::parameters`] order.
    pub fn leaves(&self) -> Vec<V> {
        match &self.kind {
            BoundKind::C(c) => c.leaves.clone(),
            BoundKind::M { modules } => modules
                .iter()
                .flat_map(|(c, off)| c.leaves.iter().cloned().chain(std::iter::once(off.clone())))
                .collect(),
            BoundKind::Baseline { w1, b1, w2, b2, w3, b3 } => {
                vec![w1.clone(), b1.clone(), w2.clone(), b2.clone(), w3.clone(), b3.clone()]
            }
        }
    }
}

/// Gradient, optional Hessian and optional value of a GradNetC-form potential.
struct Parts<V> {
    grad: V,
    hess: Option<V>,
    potential: Option<V>,
}

fn eval_c<G: Graph>(
    g: &mut G,
    c: &BoundC<G::Var>,
    act: Activation,
    x: &G::Var,
    need_hess: bool,
    need_potential: bool,
) -> Result<Parts<G::Var>> {
    let lltx = g.matmul(&c.llt, x)?;
    let potential = if need_potential {
        let xt = g.transpose(x)?;
        let quad = g.matmul(&xt, &lltx)?;
        let half = g.scalar_mul(0.5, &quad)?;
        let lin = g.matmul(&c.shift_t, x)?;
        Some(g.add(&half, &lin)?)
    } else {
        None
    };
    let mut grad = g.add(&lltx, &c.shift)?;
    let mut hess = if need_hess { Some(c.llt.clone()) } else { None };
    let mut potential = potential;
    for grp in &c.groups {
        let wx = g.matmul(&grp.w, x)?;
        let z = g.add(&wx, &grp.b)?;
        let s = g.elementwise(&z, act, Order::Value)?;
        let ws = g.matmul(&grp.wt, &s)?;
        let term = g.scale(&grp.a, &ws)?;
        grad = g.add(&grad, &term)?;
        if let Some(h) = hess.as_mut() {
            let sp = g.elementwise(&z, act, Order::First)?;
            let gram = g.weighted_gram(&grp.w, &sp)?;
            let term = g.scale(&grp.a, &gram)?;
            *h = g.add(h, &term)?;
        }
        if let Some(p) = potential.as_mut() {
            let anti = g.elementwise(&z, act, Order::Antiderivative)?;
            let total = g.sum(&anti)?;
            let term = g.scale(&grp.a, &total)?;
            *p = g.add(p, &term)?;
        }
    }
    Ok(Parts {
        grad,
        hess,
        potential,
    })
}

fn outer<G: Graph>(g: &mut G, v: &G::Var) -> Result<G::Var> {
    let vt = g.transpose(v)?;
    g.matmul(v, &vt)
}

impl GradNet {
    pub fn init(spec: &ArchSpec, dim: usize, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        Ok(match *spec {
            ArchSpec::C { groups, width } => GradNet::C(GradNetC::init(dim, groups, width, activation, rng)?),
            ArchSpec::M {
                modules,
                width,
                temperature,
            } => GradNet::M(GradNetM::init(dim, modules, width, temperature, activation, rng)?),
            ArchSpec::Baseline { hidden } => GradNet::Baseline(BaselineMlp::init(dim, hidden, activation, rng)?),
        })
    }

    pub fn arch(&self) -> ArchTag {
        match self {
            GradNet::C(_) => ArchTag::MgradnetC,
            GradNet::M(_) => ArchTag::MgradnetM,
            GradNet::Baseline(_) => ArchTag::Baseline,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GradNet::C(c) => c.dim(),
            GradNet::M(m) => m.dim(),
            GradNet::Baseline(b) => b.dim(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            GradNet::C(c) => c.activation,
            GradNet::M(m) => m.activation,
            GradNet::Baseline(b) => b.activation,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            GradNet::M(m) => Some(m.temperature),
            _ => None,
        }
    }

    /// Whether the Jacobian is symmetric positive definite by construction.
    pub fn is_monotone(&self) -> bool {
        !matches!(self, GradNet::Baseline(_))
    }

    pub fn parameters(&self) -> Vec<&DenseMatrix> {
        match self {
            GradNet::C(c) => c.params(),
            GradNet::M(m) => m
                .modules
                .iter()
                .flat_map(|md| md.body.params().into_iter().chain(std::iter::once(&md.offset)))
                .collect(),
            GradNet::Baseline(b) => vec![&b.w1, &b.b1, &b.w2, &b.b2, &b.w3, &b.b3],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix> {
        match self {
            GradNet::C(c) => c.params_mut(),
            GradNet::M(m) => m
                .modules
                .iter_mut()
                .flat_map(|md| md.body.params_mut().into_iter().chain(std::iter::once(&mut md.offset)))
                .collect(),
            GradNet::Baseline(b) => vec![&mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2, &mut b.w3, &mut b.b3],
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        match self {
            GradNet::C(c) => c.param_names(""),
            GradNet::M(m) => m
                .modules
                .iter()
                .enumerate()
                .flat_map(|(k, md)| {
                    let prefix = format!("module{k}.");
                    let mut names = md.body.param_names(&prefix);
                    names.push(format!("{prefix}offset"));
                    names
                })
                .collect(),
            GradNet::Baseline(_) => ["layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias", "layer3.weight", "layer3.bias"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Places the parameters on `g`.
    pub fn bind<G: Graph>(&self, g: &mut G) -> Result<Bound<G::Var>> {
        let kind = match self {
            GradNet::C(c) => BoundKind::C(c.bind(g)?),
            GradNet::M(m) => BoundKind::M {
                modules: m
                    .modules
                    .iter()
                    .map(|md| Ok((md.body.bind(g)?, g.param(&md.offset))))
                    .collect::<Result<Vec<_>>>()?,
            },
            GradNet::Baseline(b) => BoundKind::Baseline {
                w1: g.param(&b.w1),
                b1: g.param(&b.b1),
                w2: g.param(&b.w2),
                b2: g.param(&b.b2),
                w3: g.param(&b.w3),
                b3: g.param(&b.b3),
            },
        };
        Ok(Bound { kind })
    }

    /// `T(x)` and, when requested, `J_T(x)` for a `d x 1` input on `g`.
    pub fn eval_on<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::Var>,
        x: &G::Var,
        need_jacobian: bool,
    ) -> Result<(G::Var, Option<G::Var>)> {
        let shape = g.value(x).shape();
        if shape != (self.dim(), 1) {
            return Err(shape_err(
                "gradnet",
                format!("input {}x{} for a {}-dimensional net", shape.0, shape.1, self.dim()),
            ));
        }
        match (&bound.kind, self) {
            (BoundKind::C(c), GradNet::C(net)) => {
                let p = eval_c(g, c, net.activation, x, need_jacobian, false)?;
                Ok((p.grad, p.hess))
            }
            (BoundKind::M { modules }, GradNet::M(net)) => {
                let mut grads = Vec::with_capacity(modules.len());
                let mut hessians = Vec::with_capacity(modules.len());
                let mut phis = Vec::with_capacity(modules.len());
                for (c, offset) in modules {
                    let p = eval_c(g, c, net.activation, x, need_jacobian, true)?;
                    let phi = g.add(p.potential.as_ref().expect("requested"), offset)?;
                    phis.push(phi);
                    grads.push(p.grad);
                    hessians.push(p.hess);
                }
                let stacked = g.stack(&phis)?;
                let logits = g.scalar_mul(1.0 / net.temperature, &stacked)?;
                let w = g.softmax(&logits)?;
                let weights = (0..modules.len())
                    .map(|k| g.element(&w, k))
                    .collect::<Result<Vec<_>>>()?;
                let mut out = g.scale(&weights[0], &grads[0])?;
                for k in 1..grads.len() {
                    let t = g.scale(&weights[k], &grads[k])?;
                    out = g.add(&out, &t)?;
                }
                if !need_jacobian {
                    return Ok((out, None));
                }
                let mut mix = None;
                let mut second = None;
                for k in 0..grads.len() {
                    let h = hessians[k].as_ref().expect("requested");
                    let wh = g.scale(&weights[k], h)?;
                    mix = Some(match mix {
                        None => wh,
                        Some(acc) => g.add(&acc, &wh)?,
                    });
                    let gg = outer(g, &grads[k])?;
                    let wgg = g.scale(&weights[k], &gg)?;
                    second = Some(match second {
                        None => wgg,
                        Some(acc) => g.add(&acc, &wgg)?,
                    });
                }
                let mean_outer = outer(g, &out)?;
                let cov = g.sub(&second.expect("nonempty"), &mean_outer)?;
                let cov = g.scalar_mul(1.0 / net.temperature, &cov)?;
                let jac = g.add(&mix.expect("nonempty"), &cov)?;
                Ok((out, Some(jac)))
            }
            (BoundKind::Baseline { w1, b1, w2, b2, w3, b3 }, GradNet::Baseline(net)) => {
                let act = net.activation;
                let z1 = g.matmul(w1, x)?;
                let z1 = g.add(&z1, b1)?;
                let h1 = g.elementwise(&z1, act, Order::Value)?;
                let z2 = g.matmul(w2, &h1)?;
                let z2 = g.add(&z2, b2)?;
                let h2 = g.elementwise(&z2, act, Order::Value)?;
                let y = g.matmul(w3, &h2)?;
                let y = g.add(&y, b3)?;
                if !need_jacobian {
                    return Ok((y, None));
                }
                let d1 = g.elementwise(&z1, act, Order::First)?;
                let d2 = g.elementwise(&z2, act, Order::First)?;
                let d1 = g.diag_embed(&d1)?;
                let d2 = g.diag_embed(&d2)?;
                // Right to left keeps every intermediate at width x d.
                let j = g.matmul(&d1, w1)?;
                let j = g.matmul(w2, &j)?;
                let j = g.matmul(&d2, &j)?;
                let j = g.matmul(w3, &j)?;
                Ok((y, Some(j)))
            }
            _ => Err(Error::InvalidArgument("bound parameters belong to another architecture".into())),
        }
    }

    /// `T(x)`.
    pub fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        let (y, _) = self.eval_on(&mut g, &bound, &x.to_column(), false)?;
        DenseVector::from_matrix(&y)
    }

    /// Closed-form input Jacobian `J_T(x)`.
    pub fn jacobian(&self, x: &DenseVector) -> Result<DenseMatrix> {
        Ok(self.forward_and_jacobian(x)?.1)
    }

    pub fn forward_and_jacobian(&self, x: &DenseVector) -> Result<(DenseVector, DenseMatrix)> {
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        let (y, j) = self.eval_on(&mut g, &bound, &x.to_column(), true)?;
        Ok((DenseVector::from_matrix(&y)?, j.expect("requested")))
    }

    /// `T` applied to many points with one parameter binding.
    pub fn map_points(&self, xs: &[DenseVector]) -> Result<Vec<DenseVector>> {
        let mut g = Eval;
        let bound = self.bind(&mut g)?;
        xs.iter()
            .map(|x| {
                let (y, _) = self.eval_on(&mut g, &bound, &x.to_column(), false)?;
                DenseVector::from_matrix(&y)
            })
            .collect()
    }

    /// Convex potential `φ` with `∇φ = T`. For mGradNet-M this is
    /// `τ·logsumexp(φ_m/τ)`; the baseline has no potential.
    pub fn potential(&self, x: &DenseVector) -> Result<f64> {
        match self {
            GradNet::C(c) => {
                let mut g = Eval;
                let bound = c.bind(&mut g)?;
                let p = eval_c(&mut g, &bound, c.activation, &self.check_input(x)?, false, true)?;
                p.potential.expect("requested").to_scalar()
            }
            GradNet::M(m) => {
                let phis = (0..m.modules.len())
                    .map(|k| self.module_potential(k, x))
                    .collect::<Result<Vec<_>>>()?;
                let tau = m.temperature;
                let max = phis.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
                let s: f64 = phis.iter().map(|p| (p / tau - max).exp()).sum();
                Ok(tau * (max + s.ln()))
            }
            GradNet::Baseline(_) => Err(Error::InvalidArgument("the baseline network has no potential".into())),
        }
    }

    /// `φ_m(x)` of one mGradNet-M module.
    pub fn module_potential(&self, module: usize, x: &DenseVector) -> Result<f64> {
        let GradNet::M(m) = self else {
            return Err(Error::InvalidArgument("module potentials exist only for mgradnet_m".into()));
        };
        let md = m
            .modules
            .get(module)
            .ok_or_else(|| Error::InvalidArgument(format!("no module {module}")))?;
        let mut g = Eval;
        let bound = md.body.bind(&mut g)?;
        let p = eval_c(&mut g, &bound, m.activation, &self.check_input(x)?, false, true)?;
        Ok(p.potential.expect("requested").to_scalar()? + md.offset.to_scalar()?)
    }

    /// `∇φ_m(x)` of one mGradNet-M module.
    pub fn module_gradient(&self, module: usize, x: &DenseVector) -> Result<DenseVector> {
        let GradNet::M(m) = self else {
            return Err(Error::InvalidArgument("module gradients exist only for mgradnet_m".into()));
        };
        let md = m
            .modules
            .get(module)
            .ok_or_else(|| Error::InvalidArgument(format!("no module {module}")))?;
        GradNet::C(md.body.clone()).forward(x)
    }

    fn check_input(&self, x: &DenseVector) -> Result<DenseMatrix> {
        if x.dim() != self.dim() {
            return Err(shape_err(
                "gradnet",
                format!("input of dim {} for a {}-dimensional net", x.dim(), self.dim()),
            ));
        }
        Ok(x.to_column())
    }

    /// Pairs violating monotonicity of this network's map.
    pub fn monotonicity_violations(&self, pairs: &[(DenseVector, DenseVector)]) -> Result<usize> {
        monotonicity_violations(|x| self.forward(x), pairs)
    }
}

/// Counts pairs with `(T(x₁) − T(x₂))·(x₁ − x₂) < −1e-10`.
pub fn monotonicity_violations<F>(map: F, pairs: &[(DenseVector, DenseVector)]) -> Result<usize>
where
    F: Fn(&DenseVector) -> Result<DenseVector>,
{
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to check".into()));
    }
    let mut count = 0;
    for (a, b) in pairs {
        let (ta, tb) = (map(a)?, map(b)?);
        if ta.dim() != a.dim() || tb.dim() != b.dim() || a.dim() != b.dim() {
            return Err(shape_err("monotonicity", "map changes dimension"));
        }
        let inner: f64 = (0..a.dim()).map(|k| (ta[k] - tb[k]) * (a[k] - b[k])).sum();
        if inner < -1e-10 {
            count += 1;
        }
    }
    Ok(count)
}

/// `count` pairs of independent standard-normal points.
pub fn random_pairs(dim: usize, count: usize, rng: &mut SeededRng) -> Vec<(DenseVector, DenseVector)> {
    (0..count)
        .map(|_| {
            (
                DenseVector::new(rng.normal_vec(dim)),
                DenseVector::new(rng.normal_vec(dim)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests;
