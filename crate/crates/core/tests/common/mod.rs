//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod gradcases;

use fdcg::tensor::Tensor;
use fdcg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type T64 = Tensor<f64>;

/// Number of random seeds every gradient check runs over.
pub const GRAD_SEEDS: u64 = 20;
pub const GRAD_TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values with magnitude in `[lo, hi]` and random sign; keeps kinks at 0
/// out of finite-difference reach.
pub fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<f64> {
    uniform(rng, shape, lo, hi)
        .into_iter()
        .map(|v| if rng.random_bool(0.5) { v } else { -v })
        .collect()
}

fn project(out: &[f64], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Largest relative error between backprop and central differences of
/// `<f(inputs), w>` for a random projection `w`, over all inputs.
///
/// Two error measures, the larger is returned: the per-element
/// `|g_a - g_n| / max(1, |g_n|)` and the vector-wise
/// `‖g_a - g_n‖ / max(‖g_a‖, ‖g_n‖, 1e-6)` which also catches errors in
/// small gradients.
pub fn grad_check(
    seed: u64,
    inputs: &[(Vec<usize>, Vec<f64>)],
    f: impl Fn(&[T64]) -> Result<T64>,
) -> f64 {
    let params: Vec<T64> = inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()).unwrap())
        .collect();
    let out = f(&params).unwrap();
    let w = uniform(&mut rng(seed ^ 0xabc), out.shape(), -1.0, 1.0);
    let wt = Tensor::new(out.shape(), w.clone()).unwrap();
    out.mul(&wt).unwrap().sum().backward().unwrap();

    let mut worst: f64 = 0.0;
    for (i, (_, data)) in inputs.iter().enumerate() {
        let analytic = params[i].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let mut numeric = vec![0.0; data.len()];
        for j in 0..data.len() {
            let eval = |delta: f64| {
                let xs: Vec<T64> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, (s, d))| {
                        let mut d = d.clone();
                        if k == i {
                            d[j] += delta;
                        }
                        Tensor::new(s, d).unwrap()
                    })
                    .collect();
                project(f(&xs).unwrap().data(), &w)
            };
            numeric[j] = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-6));
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / n.abs().max(1.0));
        }
    }
    worst
}

/// Runs `grad_check` over `GRAD_SEEDS` seeds with inputs drawn by `make`.
pub fn check_op(
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<f64>)>,
    f: impl Fn(&[T64]) -> Result<T64>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        let inputs = make(&mut rng(seed));
        let e = grad_check(seed, &inputs, &f);
        assert!(e < GRAD_TOL, "{name}: seed {seed} relative error {e:e}");
        worst = worst.max(e);
    }
    worst
}
