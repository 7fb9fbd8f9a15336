//! Shared helpers for integration tests: finite-difference oracles and
//! small random-instance generators.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use har_core::nn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let len = dims.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(dims, data).unwrap()
}

pub fn random_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Relative error with a floor so finite-difference noise on near-zero
/// gradients cannot dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite difference of `f` with respect to one scalar slot that
/// the closure perturbs itself.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, eps: f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Checks every analytic gradient in `analytic` against a finite
/// difference of `loss_with`, where `loss_with(i, delta)` re-evaluates the
/// loss with scalar slot `i` perturbed by `delta`.
pub fn check_grads(
    what: &str,
    analytic: &[f64],
    mut loss_with: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let n = central_diff(|d| loss_with(i, d), FD_EPS);
        let e = rel_err(a, n);
        assert!(
            e < FD_TOL,
            "{what}: slot {i} analytic {a} vs numeric {n} (rel err {e})"
        );
        worst = worst.max(e);
    }
    worst
}
