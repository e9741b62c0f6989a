use super::*;
use crate::autodiff::Tape;
use crate::gradcheck::{central_difference, max_relative_error};
use crate::linalg::{logdet_spd, min_eigenvalue};
use proptest::prelude::*;

fn all_archs() -> [ArchSpec; 3] {
    [
        ArchSpec::C { groups: 2, width: 5 },
        ArchSpec::M {
            modules: 3,
            width: 4,
            temperature: 0.7,
        },
        ArchSpec::Baseline { hidden: 6 },
    ]
}

/// Init followed by noise on every parameter, so biases, offsets and the
/// factor are generic too.
fn random_net(spec: &ArchSpec, dim: usize, act: Activation, seed: u64) -> GradNet {
    let mut rng = SeededRng::new(seed);
    let mut net = GradNet::init(spec, dim, act, &mut rng).unwrap();
    for p in net.parameters_mut() {
        for v in p.as_mut_slice() {
            *v += 0.5 * rng.normal();
        }
    }
    net
}

fn random_point(dim: usize, rng: &mut SeededRng) -> DenseVector {
    DenseVector::new(rng.normal_vec(dim))
}

fn fd_jacobian(net: &GradNet, x: &DenseVector) -> DenseMatrix {
    let d = x.dim();
    let mut j = DenseMatrix::zeros(d, d);
    let h = 1e-5;
    for c in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_mut_slice()[c] += h;
        xm.as_mut_slice()[c] -= h;
        let (yp, ym) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
        for r in 0..d {
            j[(r, c)] = (yp[r] - ym[r]) / (2.0 * h);
        }
    }
    j
}

#[test]
fn identity_configured_c_is_identity() {
    let net = GradNet::C(GradNetC::identity(3, 2, 4, Activation::Tanh));
    let x = DenseVector::new(vec![0.3, -1.2, 2.0]);
    let y = net.forward(&x).unwrap();
    for k in 0..3 {
        assert!((y[k] - x[k]).abs() < 1e-15);
    }
    let j = net.jacobian(&x).unwrap();
    assert!(j.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-15);
    assert!(logdet_spd(&j).unwrap().abs() < 1e-15);
    let phi = net.potential(&x).unwrap();
    assert!((phi - 0.5 * x.norm_squared()).abs() < 1e-14);
}

#[test]
fn single_tanh_unit_at_origin() {
    let mut c = GradNetC::identity(1, 1, 1, Activation::Tanh);
    c.groups[0].weight = DenseMatrix::scalar(1.0);
    c.groups[0].scale_raw = DenseMatrix::scalar(softplus_inv(1.0));
    let net = GradNet::C(c);
    assert_eq!(net.forward(&DenseVector::new(vec![0.0])).unwrap()[0], 0.0);
    let y = net.forward(&DenseVector::new(vec![0.5])).unwrap()[0];
    assert!((y - (0.5f64.tanh() + 0.5)).abs() < 1e-15);
}

#[test]
fn single_module_m_equals_module_gradient() {
    let spec = ArchSpec::M {
        modules: 1,
        width: 6,
        temperature: 1.0,
    };
    let net = random_net(&spec, 3, Activation::Tanh, 4);
    let mut rng = SeededRng::new(8);
    for _ in 0..10 {
        let x = random_point(3, &mut rng);
        assert_eq!(net.forward(&x).unwrap(), net.module_gradient(0, &x).unwrap());
    }
}

#[test]
fn jacobians_are_exactly_symmetric_and_definite() {
    let mut rng = SeededRng::new(21);
    for spec in &all_archs()[..2] {
        for (k, dim) in [1, 2, 8, 16].into_iter().enumerate() {
            for draw in 0..25 {
                let net = random_net(spec, dim, Activation::Tanh, 1000 * k as u64 + draw);
                let x = random_point(dim, &mut rng);
                let j = net.jacobian(&x).unwrap();
                assert_eq!(j.max_asymmetry(), 0.0);
                assert!(min_eigenvalue(&j).unwrap() > 0.0);
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = SeededRng::new(2);
    for spec in all_archs() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let net = random_net(&spec, 3, act, 17);
            for _ in 0..5 {
                let x = random_point(3, &mut rng);
                let j = net.jacobian(&x).unwrap();
                let fd = fd_jacobian(&net, &x);
                let e = max_relative_error(&[j], &[fd], 1e-8);
                assert!(e <= 1e-5, "{spec:?} {act}: {e:e}");
            }
        }
    }
    let soft = random_net(&ArchSpec::C { groups: 2, width: 3 }, 2, Activation::Softplus, 1);
    let x = random_point(2, &mut rng);
    let e = max_relative_error(&[soft.jacobian(&x).unwrap()], &[fd_jacobian(&soft, &x)], 1e-8);
    assert!(e <= 1e-5);
}

#[test]
fn potential_gradient_is_forward() {
    let mut rng = SeededRng::new(12);
    for spec in &all_archs()[..2] {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let net = random_net(spec, 3, act, 31);
            for _ in 0..5 {
                let x = random_point(3, &mut rng);
                let fd = central_difference(&[x.to_column()], 1e-5, |xs| {
                    net.potential(&DenseVector::from_matrix(&xs[0])?)
                })
                .unwrap();
                let y = net.forward(&x).unwrap().to_column();
                let e = max_relative_error(&[y], &fd, 1e-8);
                assert!(e <= 1e-5, "{spec:?} {act}: {e:e}");
            }
        }
    }
}

#[test]
fn potential_is_midpoint_convex() {
    let mut rng = SeededRng::new(13);
    for spec in &all_archs()[..2] {
        let net = random_net(spec, 2, Activation::Tanh, 77);
        for _ in 0..1000 {
            let (x, y) = (random_point(2, &mut rng), random_point(2, &mut rng));
            let mid = DenseVector::new((0..2).map(|k| 0.5 * x[k] + 0.5 * y[k]).collect());
            let lhs = net.potential(&mid).unwrap();
            let rhs = 0.5 * net.potential(&x).unwrap() + 0.5 * net.potential(&y).unwrap();
            assert!(lhs <= rhs + 1e-12 * rhs.abs().max(1.0));
        }
    }
}

#[test]
fn unsupported_potentials() {
    let soft = random_net(&ArchSpec::C { groups: 1, width: 2 }, 2, Activation::Softplus, 0);
    let x = DenseVector::zeros(2);
    assert!(matches!(soft.potential(&x), Err(Error::UnsupportedActivation(Activation::Softplus))));
    let mut rng = SeededRng::new(0);
    let m = GradNet::init(&ArchSpec::default_m(), 2, Activation::Softplus, &mut rng);
    assert!(matches!(m, Err(Error::UnsupportedActivation(_))));
    let base = random_net(&ArchSpec::Baseline { hidden: 3 }, 2, Activation::Tanh, 0);
    assert!(base.potential(&x).is_err());
}

#[test]
fn dimension_mismatch_is_reported() {
    for spec in all_archs() {
        let net = random_net(&spec, 3, Activation::Tanh, 0);
        let x = DenseVector::zeros(2);
        assert!(matches!(net.forward(&x), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(net.jacobian(&x), Err(Error::DimensionMismatch { .. })));
    }
}

#[test]
fn large_temperature_averages_modules() {
    let spec = ArchSpec::M {
        modules: 4,
        width: 5,
        temperature: 1e6,
    };
    let net = random_net(&spec, 3, Activation::Tanh, 9);
    let mut rng = SeededRng::new(10);
    for _ in 0..20 {
        let x = random_point(3, &mut rng);
        let y = net.forward(&x).unwrap();
        let mut avg = [0.0; 3];
        for m in 0..4 {
            let g = net.module_gradient(m, &x).unwrap();
            for k in 0..3 {
                avg[k] += g[k] / 4.0;
            }
        }
        let diff: f64 = (0..3).map(|k| (y[k] - avg[k]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * norm, "{diff} vs {norm}");
    }
}

#[test]
fn init_properties() {
    for spec in all_archs() {
        let a = GradNet::init(&spec, 4, Activation::Tanh, &mut SeededRng::new(5)).unwrap();
        let b = GradNet::init(&spec, 4, Activation::Tanh, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
    }
    for spec in &all_archs()[..2] {
        let net = GradNet::init(spec, 4, Activation::Tanh, &mut SeededRng::new(6)).unwrap();
        assert!(min_eigenvalue(&net.jacobian(&DenseVector::zeros(4)).unwrap()).unwrap() > 0.0);
    }
    let net = GradNet::init(&ArchSpec::C { groups: 1, width: 8 }, 2, Activation::Tanh, &mut SeededRng::new(7)).unwrap();
    let y = net.forward(&DenseVector::zeros(2)).unwrap();
    assert!(y.is_finite() && y.norm_squared().sqrt() < 10.0);
    assert!(GradNet::init(&ArchSpec::C { groups: 0, width: 8 }, 2, Activation::Tanh, &mut SeededRng::new(7)).is_err());
    assert!(GradNet::init(&ArchSpec::Baseline { hidden: 0 }, 2, Activation::Tanh, &mut SeededRng::new(7)).is_err());
}

#[test]
fn monotone_nets_have_no_violations() {
    let mut rng = SeededRng::new(14);
    let pairs = random_pairs(2, 10_000, &mut rng);
    for spec in &all_archs()[..2] {
        let net = random_net(spec, 2, Activation::Tanh, 3);
        assert_eq!(net.monotonicity_violations(&pairs).unwrap(), 0);
    }
    let neg = |x: &DenseVector| Ok(DenseVector::new(x.as_slice().iter().map(|v| -v).collect()));
    assert_eq!(monotonicity_violations(neg, &pairs).unwrap(), pairs.len());
    assert!(monotonicity_violations(neg, &[]).is_err());
}

#[test]
fn tape_and_eval_agree_bitwise() {
    let mut rng = SeededRng::new(15);
    for spec in all_archs() {
        let net = random_net(&spec, 3, Activation::Tanh, 44);
        let x = random_point(3, &mut rng);
        let (y, j) = net.forward_and_jacobian(&x).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape).unwrap();
        let xn = tape.leaf(x.to_column(), false);
        let (ty, tj) = net.eval_on(&mut tape, &bound, &xn, true).unwrap();
        assert_eq!(tape.get(ty).unwrap(), &y.to_column());
        assert_eq!(tape.get(tj.unwrap()).unwrap(), &j);
    }
}

#[test]
fn parameter_order_matches_bound_leaves() {
    for spec in all_archs() {
        let net = random_net(&spec, 2, Activation::Tanh, 1);
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape).unwrap();
        let leaves = bound.leaves();
        let params = net.parameters();
        assert_eq!(leaves.len(), params.len());
        assert_eq!(net.parameter_names().len(), params.len());
        for (l, p) in leaves.iter().zip(params) {
            assert_eq!(tape.get(*l).unwrap(), p);
        }
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    for spec in all_archs() {
        let net = random_net(&spec, 3, Activation::Sigmoid, 2);
        let ck = Checkpoint::from_net(&net, 42, 123);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_net().unwrap(), net);
        assert_eq!(back.seed, 42);
        assert_eq!(back.iteration, 123);
    }
}

#[test]
fn checkpoint_rejects_malformed_input() {
    let net = random_net(&ArchSpec::C { groups: 2, width: 3 }, 2, Activation::Tanh, 2);
    let ck = Checkpoint::from_net(&net, 1, 1);
    let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
    v["extra"] = serde_json::json!(1);
    assert!(Checkpoint::from_json(&v.to_string()).is_err());

    let mut missing = ck.clone();
    missing.params.retain(|p| p.name != "lower");
    assert!(matches!(missing.to_net(), Err(Error::Checkpoint(_))));

    let mut bad_shape = ck.clone();
    bad_shape.params[0].shape = [2, 3];
    assert!(bad_shape.to_net().is_err());

    let mut wrong_dim = ck.clone();
    wrong_dim.dimension = 5;
    assert!(wrong_dim.to_net().is_err());

    let mut version = ck;
    version.format_version = 99;
    assert!(Checkpoint::from_json(&version.to_json().unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_symmetric_pd_for_any_parameters(
        seed in any::<u64>(),
        dim in 1usize..6,
        arch in 0usize..2,
        xs in proptest::collection::vec(-5.0f64..5.0, 6),
    ) {
        let net = random_net(&all_archs()[arch], dim, Activation::Tanh, seed);
        let x = DenseVector::new(xs[..dim].to_vec());
        let j = net.jacobian(&x).unwrap();
        prop_assert_eq!(j.max_asymmetry(), 0.0);
        prop_assert!(min_eigenvalue(&j).unwrap() > 0.0);
    }

    #[test]
    fn monotone_on_random_pairs(seed in any::<u64>(), arch in 0usize..2) {
        let net = random_net(&all_archs()[arch], 3, Activation::Sigmoid, seed);
        let pairs = random_pairs(3, 50, &mut SeededRng::new(seed ^ 1));
        prop_assert_eq!(net.monotonicity_violations(&pairs).unwrap(), 0);
    }
}
