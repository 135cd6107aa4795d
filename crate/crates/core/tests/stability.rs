mod common;

use blds::model::{random_system, scale_to_spectral_radius, Dims};
use blds::simulate::InputDistribution;
use blds::stability::{
    certify_uniform_stability, f_norm_check, jsr_estimate, phi_estimate, search_certificate,
};
use blds::{Mat, SystemParamsF64};
use common::*;

const SPHERE: InputDistribution = InputDistribution::Sphere;

fn with_a0(a0: Mat<f64>, p: usize) -> SystemParamsF64 {
    let n = a0.nrows();
    let mut a = vec![a0];
    a.extend((0..p).map(|_| Mat::zeros(n, n)));
    SystemParamsF64::new(
        a,
        Mat::from_fn(n, p, |i, j| (i + j) as f64 + 1.0),
        Mat::from_fn(1, n, |_, j| j as f64 + 1.0),
        Mat::zeros(1, p),
    )
    .unwrap()
}

fn jordan(lambda: f64) -> Mat<f64> {
    Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => lambda,
        (0, 1) => 1.0,
        _ => 0.0,
    })
}

/// `|J^k|_op` for `J = [[l, 1], [0, l]]` from the closed form of the 2x2
/// singular values: `sigma_max^2 = (s + sqrt(s^2 - 4 det^2)) / 2` with
/// `s = |J^k|_F^2`.
fn jordan_power_norm(lambda: f64, k: usize) -> f64 {
    let lk = lambda.powi(k as i32);
    let off = k as f64 * lambda.powi(k as i32 - 1);
    let s = 2.0 * lk * lk + off * off;
    let det = lk * lk;
    ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

#[test]
fn input_independent_scaled_identity_is_exact() {
    let sys = with_a0(Mat::from_fn(3, 3, |i, j| if i == j { 0.5 } else { 0.0 }), 2);
    for depth in [1, 5, 32] {
        let est = jsr_estimate(&sys, SPHERE, depth, 8, 1).unwrap();
        assert!((est.lower - 0.5).abs() < 1e-12);
        assert!((est.norm_bound - 0.5).abs() < 1e-12);
    }
    let phi = phi_estimate(&sys, SPHERE, 0.5, 32, 4, 0).unwrap();
    assert!((phi - 1.0).abs() < 1e-12);
}

#[test]
fn linear_system_estimate_approaches_spectral_radius() {
    let mut r = rng(4);
    for seed in 0..5u64 {
        let a0 = scale_to_spectral_radius(random_mat(4, 4, &mut r).as_ref(), 0.8).unwrap();
        let rho = blds::linalg::spectral_radius(a0.as_ref()).unwrap();
        let sys = with_a0(a0, 1);
        let est = jsr_estimate(&sys, SPHERE, 64, 4, seed).unwrap();
        assert!(
            (est.lower - rho).abs() <= 0.1 * rho,
            "seed {seed}: {} vs {rho}",
            est.lower
        );
        assert!(est.norm_bound >= est.lower - 1e-12);
    }
}

#[test]
fn jordan_block_matches_closed_form() {
    let lambda = 0.6;
    let sys = with_a0(jordan(lambda), 1);
    let est = jsr_estimate(&sys, SPHERE, 40, 2, 0).unwrap();
    assert!((est.lower - lambda).abs() < 1e-6);
    let want_bound = jordan_power_norm(lambda, 40).powf(1.0 / 40.0);
    assert!(
        (est.norm_bound - want_bound).abs() < 1e-10,
        "{} vs {want_bound}",
        est.norm_bound
    );
    let rho: f64 = 0.8;
    let want_phi = (1..=40)
        .map(|k| jordan_power_norm(lambda, k) / rho.powi(k as i32))
        .fold(1.0, f64::max);
    let phi = phi_estimate(&sys, SPHERE, rho, 40, 2, 0).unwrap();
    assert!(
        (phi - want_phi).abs() < 1e-10 * want_phi,
        "{phi} vs {want_phi}"
    );
}

#[test]
fn normal_matrix_transient_is_bounded_by_eigenbasis_condition() {
    // orthogonal eigenbasis: condition number 1
    let c = 0.6f64;
    let s = 0.8f64;
    let q = Mat::from_fn(2, 2, |i, j| [[c, -s], [s, c]][i][j]);
    let d = Mat::from_fn(2, 2, |i, j| if i == j { [0.7, -0.4][i] } else { 0.0 });
    let a0 = matmul(&matmul(&q, &d), &transpose(&q));
    let sys = with_a0(a0, 1);
    let phi = phi_estimate(&sys, SPHERE, 0.75, 64, 4, 2).unwrap();
    assert!(phi <= 1.0 + 1e-12, "{phi}");
}

#[test]
fn estimates_grow_with_depth_and_samples() {
    let sys = random_system::<f64>(Dims::new(4, 2, 1).unwrap(), 0.6, 0.4, 8).unwrap();
    let mut prev = 0.0;
    for depth in [2, 8, 16, 32] {
        let est = jsr_estimate(&sys, SPHERE, depth, 16, 5).unwrap();
        assert!(est.lower >= prev);
        prev = est.lower;
    }
    let mut prev = 0.0;
    for samples in [1, 4, 16, 64] {
        let phi = phi_estimate(&sys, SPHERE, 0.9, 24, samples, 5).unwrap();
        assert!(phi >= prev);
        prev = phi;
    }
}

#[test]
fn moderate_radius_systems_are_stable_under_sphere_inputs() {
    for seed in 0..10u64 {
        let sys = random_system::<f64>(Dims::new(5, 2, 2).unwrap(), 0.4, 0.2, seed).unwrap();
        let est = jsr_estimate(&sys, SPHERE, 32, 32, seed).unwrap();
        assert!(est.lower < 1.0, "seed {seed}: {}", est.lower);
        let cert = search_certificate(&sys, SPHERE, 32, 32, seed).unwrap();
        assert!(cert.is_some_and(|r| r.certified && r.rho < 1.0));
    }
}

#[test]
fn certification_outcomes() {
    let contraction = with_a0(Mat::from_fn(2, 2, |i, j| if i == j { 0.3 } else { 0.0 }), 2);
    assert!(
        certify_uniform_stability(&contraction, SPHERE, 0.5, 1.1, 32, 8, 0)
            .unwrap()
            .certified
    );

    let mut r = rng(1);
    let expanding = with_a0(
        scale_to_spectral_radius(random_mat(3, 3, &mut r).as_ref(), 1.2).unwrap(),
        1,
    );
    for rho in [0.5, 0.9, 0.99] {
        let report = certify_uniform_stability(&expanding, SPHERE, rho, 1e6, 32, 8, 0).unwrap();
        assert!(!report.certified);
    }
    assert!(search_certificate(&expanding, SPHERE, 32, 8, 0)
        .unwrap()
        .is_none());
}

#[test]
fn product_overflow_is_detected() {
    // u = +1 gives 3e308 (inf); u = -1 gives the zero matrix
    let big = Mat::from_fn(2, 2, |i, j| if i == j { 1.5e308 } else { 0.0 });
    let sys = SystemParamsF64::new(
        vec![big.clone(), big],
        Mat::zeros(2, 1),
        Mat::zeros(1, 2),
        Mat::zeros(1, 1),
    )
    .unwrap();
    assert!(matches!(
        jsr_estimate(&sys, SPHERE, 8, 2, 0),
        Err(blds::Error::ProductOverflow { .. })
    ));
}

#[test]
fn f_norm_bound_cases() {
    // C = 0
    let n = 2;
    let sys = SystemParamsF64::new(
        vec![
            Mat::from_fn(n, n, |i, j| if i == j { 0.5 } else { 0.0 }),
            Mat::zeros(n, n),
        ],
        Mat::from_fn(n, 1, |_, _| 1.0),
        Mat::zeros(1, n),
        Mat::zeros(1, 1),
    )
    .unwrap();
    let chk = f_norm_check(&sys, Mat::from_fn(3, 1, |_, _| 1.0).as_ref(), 1.0, 0.5).unwrap();
    assert!((chk.norm - 1.0).abs() < 1e-14 && chk.holds);

    // L = 1: F = [I | C]
    let sys = random_system::<f64>(Dims::new(3, 2, 2).unwrap(), 0.5, 0.2, 1).unwrap();
    let chk = f_norm_check(&sys, Mat::<f64>::zeros(0, 2).as_ref(), 1.0, 0.5).unwrap();
    assert!(chk.holds);

    // seeded stable instances with a sampled certificate
    let mut checked = 0;
    for seed in 0..100u64 {
        let sys = random_system::<f64>(Dims::new(3, 2, 2).unwrap(), 0.4, 0.2, seed).unwrap();
        let Some(cert) = search_certificate(&sys, SPHERE, 16, 16, seed).unwrap() else {
            continue;
        };
        let window = blds::simulate::sample_inputs::<f64, _>(
            SPHERE,
            2,
            4,
            &mut blds::rng::rng_from_seed(seed),
        );
        let chk = f_norm_check(&sys, window.as_ref(), cert.kappa_hat, cert.rho).unwrap();
        assert!(chk.holds, "seed {seed}: {chk:?}");
        checked += 1;
    }
    assert!(checked >= 90);
}

#[test]
fn deep_products_of_tiny_matrices_do_not_underflow() {
    let sys = with_a0(
        Mat::from_fn(2, 2, |i, j| if i == j { 1e-6 } else { 0.0 }),
        1,
    );
    let est = jsr_estimate(&sys, SPHERE, 64, 2, 0).unwrap();
    assert!((est.lower / 1e-6 - 1.0).abs() < 1e-10);
    assert!((est.norm_bound / 1e-6 - 1.0).abs() < 1e-10);
}
