use momentmap::liecore::{AlgebraElement, CMat, C64};
use momentmap::targets::{ExtendedWeight, Target, TargetPoint};
use proptest::prelude::*;

mod common;

/// `|grad mu_s|^2` at `y`: `2 sum tau_k |(1 - P_k) H P_k|^2`, or `|H x|^2` on the linear target.
fn grad_norm_sq(t: &Target, y: &TargetPoint, h: &CMat) -> f64 {
    let frame = y.frame();
    if t.components().is_empty() {
        return (h * frame).norm_squared();
    }
    let m = t.ambient_dim();
    t.components()
        .iter()
        .map(|&(r, tau)| {
            let v = frame.columns(0, r).into_owned();
            let p = &v * v.adjoint();
            let q = CMat::identity(m, m) - &p;
            2.0 * tau * (q * h * p).norm_squared()
        })
        .sum()
}

fn close(a: &ExtendedWeight, b: &ExtendedWeight, tol: f64) -> bool {
    match (a, b) {
        (ExtendedWeight::Infinite, ExtendedWeight::Infinite) => true,
        (ExtendedWeight::Finite { value: x, .. }, ExtendedWeight::Finite { value: y, .. }) => {
            (x - y).abs() <= tol * x.abs().max(1.0)
        }
        _ => false,
    }
}

proptest! {
    #![proptest_config(common::cases(100))]

    #[test]
    fn lambda_is_monotone(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let path = t.flow_path(&x, &s.weight_operator().unwrap()).unwrap();
        let mut prev = path.lambda(0.0).unwrap();
        for k in 1..=100 {
            let l = path.lambda(k as f64 * 0.05).unwrap();
            prop_assert!(l >= prev - 1e-9, "{} at step {k}: {l} < {prev}", common::kind_name(&t));
            prev = l;
        }
    }

    #[test]
    fn lambda_derivative_is_gradient_norm(seed in any::<u64>(), kind in 0usize..4, t0 in 0.0f64..2.0) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let h = s.weight_operator().unwrap();
        let dt = 1e-5;
        let fd = (t.lambda_t(&x, &s, t0 + dt).unwrap() - t.lambda_t(&x, &s, t0 - dt).unwrap()) / (2.0 * dt);
        let y = t.flow(&x, &s, t0).unwrap();
        let g = grad_norm_sq(&t, &y, &h);
        prop_assert!(fd >= -1e-8);
        prop_assert!((fd - g).abs() <= 1e-5 * g.max(1.0), "{}: fd {fd} vs {g}", common::kind_name(&t));
    }

    #[test]
    fn maximal_weight_is_homogeneous(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let w = t.maximal_weight(&x, &s).unwrap();
        for f in [2.0, 10.0] {
            let ws = t.maximal_weight(&x, &s.scale(f)).unwrap();
            let expect = match w {
                ExtendedWeight::Finite { value, .. } => ExtendedWeight::exact(f * value),
                ExtendedWeight::Infinite => ExtendedWeight::Infinite,
            };
            prop_assert!(close(&ws, &expect, 1e-12), "{ws:?} vs {expect:?}");
        }
    }

    #[test]
    fn maximal_weight_is_k_equivariant(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let k = t.anchor().random_unitary(&mut rng);
        let kx = t.act(&k, &x).unwrap();
        let a = t.maximal_weight(&x, &s).unwrap();
        let b = t.maximal_weight(&kx, &s.adjoint(&k)).unwrap();
        prop_assert!(close(&a, &b, 1e-10), "{a:?} vs {b:?}");
    }

    #[test]
    fn moment_is_equivariant(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let k = t.anchor().random_unitary(&mut rng);
        let mu = t.moment_element(&x).unwrap();
        let mu_kx = t.moment_element(&t.act(&k, &x).unwrap()).unwrap();
        prop_assert!((mu_kx.mat() - mu.adjoint(&k).mat()).norm() <= 1e-10);
    }

    #[test]
    fn moment_pair_is_linear(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = common::rng(seed);
        let t = common::target(kind, &mut rng);
        let x = t.random_point(&mut rng);
        let s = common::generator(&t, &mut rng, 1.0);
        let u = common::generator(&t, &mut rng, 1.0);
        let sum = AlgebraElement::skew_hermitian(s.mat() * C64::new(2.0, 0.0) + u.mat()).unwrap();
        let lhs = t.moment_pair(&x, &sum).unwrap();
        let rhs = 2.0 * t.moment_pair(&x, &s).unwrap() + t.moment_pair(&x, &u).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
