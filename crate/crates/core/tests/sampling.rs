//! Monte Carlo checks of the sampler against exact covariances, in both
//! scalar precisions.

use silt_core::process::covariance;
use silt_core::silt::mean_and_stderr;
use silt_core::{
    build_operator, sample_paths, GridContext, OperatorMatrix32, OperatorMatrix64, OperatorSpec, SmoothKernel,
};

const PATHS: usize = 8000;

fn perturbed() -> OperatorSpec {
    OperatorSpec::CompactPerturbation {
        kernel: SmoothKernel::Gaussian { length: 0.3 },
        scale: 0.4,
    }
}

#[test]
fn sampled_cross_covariance_matches_exact() {
    let n = 64;
    let op: OperatorMatrix64 = build_operator(&perturbed(), GridContext::new(n).unwrap()).unwrap();
    let (s, t) = (16, 48);
    let products: Vec<f64> = sample_paths(&op, 3, PATHS)
        .unwrap()
        .iter()
        .map(|p| p.coord1[s] * p.coord1[t])
        .collect();
    let (mean, se) = mean_and_stderr(&products);
    let exact = covariance(&op, 0.25, 0.75);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn coordinates_are_uncorrelated() {
    let n = 32;
    let op: OperatorMatrix64 = build_operator(&OperatorSpec::Identity, GridContext::new(n).unwrap()).unwrap();
    let products: Vec<f64> = sample_paths(&op, 5, PATHS)
        .unwrap()
        .iter()
        .map(|p| p.coord1[n] * p.coord2[n])
        .collect();
    let (mean, se) = mean_and_stderr(&products);
    assert!(mean.abs() < 4.0 * se, "{mean} (se {se})");
}

#[test]
fn single_precision_agrees_with_double() {
    let ctx = GridContext::new(48).unwrap();
    let op32: OperatorMatrix32 = build_operator(&perturbed(), ctx).unwrap();
    let op64: OperatorMatrix64 = build_operator(&perturbed(), ctx).unwrap();
    for (s, t) in [(0.25, 0.5), (0.5, 1.0), (1.0, 1.0)] {
        let a = covariance(&op32, s, t) as f64;
        let b = covariance(&op64, s, t);
        assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "{s},{t}: {a} vs {b}");
    }
    let p32 = &sample_paths(&op32, 9, 1).unwrap()[0];
    let p64 = &sample_paths(&op64, 9, 1).unwrap()[0];
    let drift = p32
        .coord1
        .iter()
        .zip(&p64.coord1)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(drift < 1e-4, "{drift}");
}
