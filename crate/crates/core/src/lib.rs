//! Monotone gradient networks for Monge optimal transport.
//!
//! A transport map `T = ∇φ` with `φ` convex is parameterized by a network whose
//! input Jacobian is symmetric positive definite for every input and every
//! parameter value. Training drives the pointwise Monge-Ampère residual
//!
//! ```text
//! log det J_T(x) − (log p(x) − log q(T(x)))
//! ```
//!
//! to zero on batches sampled from the source density `p`.
//!
//! Layout:
//!
//! | module | contents |
//! |--------|----------|
//! | [`linalg`] | dense matrices, Cholesky, Jacobi eigensolver, inverse square roots |
//! | [`autodiff`] | reverse-mode tape over matrix operations |
//! | [`densities`] | Gaussian and isotropic Gaussian-mixture densities, image densities |
//! | [`gradnet`] | mGradNet-C, mGradNet-M and the unconstrained baseline, checkpoints |
//! | [`training`] | residual loss, Adam, decay schedules, the training loop |
//! | [`discrete_ot`] | whitening map, log-domain Sinkhorn, barycentric projection |
//! | [`gradcheck`] | central finite differences |

pub mod autodiff;
pub mod densities;
pub mod discrete_ot;
pub mod gradcheck;
pub mod gradnet;
pub mod linalg;
pub mod numfmt;
pub mod rng;
pub mod training;

mod error;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use rng::SeededRng;
