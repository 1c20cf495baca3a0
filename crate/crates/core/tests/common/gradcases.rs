//! Gradient-check cases shared by the gradcheck and acceptance targets.

use super::*;
use fdcg::divergence::{
    fd_term_loss, gaussian_jsd_tensor, gaussian_kl_tensor, jsd_tensor, kl_tensor, l1_tensor, log_loss_tensor,
    pixel_distance, DistanceKind, Metric,
};
use fdcg::freqrep::{
    soft_categorical, soft_histogram_local, window_mean, window_std, Binning, FdKind, FdSpec, WindowWeighting,
};
use fdcg::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

const IMG: [usize; 4] = [1, 2, 5, 6];

fn one(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<(Vec<usize>, Vec<f64>)> {
    vec![(shape.to_vec(), uniform(rng, shape, lo, hi))]
}

fn two(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Vec<(Vec<usize>, Vec<f64>)> {
    vec![
        (shape.to_vec(), uniform(rng, shape, lo, hi)),
        (shape.to_vec(), uniform(rng, shape, lo, hi)),
    ]
}

fn kinked(rng: &mut ChaCha8Rng) -> Vec<(Vec<usize>, Vec<f64>)> {
    vec![(IMG.to_vec(), signed_away_from_zero(rng, &IMG, 0.05, 2.0))]
}

pub fn elementwise_unary_ops() {
    check_op("relu", kinked, |x| Ok(x[0].relu()));
    check_op("leaky_relu", kinked, |x| Ok(x[0].leaky_relu(0.2)));
    check_op("abs", kinked, |x| Ok(x[0].abs()));
    check_op("tanh", |r| one(r, &IMG, -2.0, 2.0), |x| Ok(x[0].tanh()));
    check_op("sigmoid", |r| one(r, &IMG, -3.0, 3.0), |x| Ok(x[0].sigmoid()));
    check_op("softplus", |r| one(r, &IMG, -3.0, 3.0), |x| Ok(x[0].softplus()));
    check_op("log", |r| one(r, &IMG, 0.2, 3.0), |x| x[0].log());
    check_op("sqrt", |r| one(r, &IMG, 0.2, 3.0), |x| x[0].sqrt());
    check_op(
        "clamp",
        |r| vec![(IMG.to_vec(), signed_away_from_zero(r, &IMG, 0.0, 0.45).iter().map(|v| v * 2.0).collect())],
        // bounds at +-0.95 and inputs never within 0.05 of them
        |x| Ok(x[0].clamp(-0.95, 0.95)),
    );
    check_op("scale", |r| one(r, &IMG, -1.0, 1.0), |x| Ok(x[0].scale(-1.7)));
    check_op("add_scalar", |r| one(r, &IMG, -1.0, 1.0), |x| Ok(x[0].add_scalar(0.3)));
}

pub fn elementwise_binary_ops() {
    check_op("add", |r| two(r, &IMG, -1.0, 1.0), |x| x[0].add(&x[1]));
    check_op("sub", |r| two(r, &IMG, -1.0, 1.0), |x| x[0].sub(&x[1]));
    check_op("mul", |r| two(r, &IMG, -1.0, 1.0), |x| x[0].mul(&x[1]));
    check_op("div", |r| two(r, &IMG, 0.3, 2.0), |x| x[0].div(&x[1]));
}

pub fn reductions_and_shape_ops() {
    check_op("sum", |r| one(r, &IMG, -1.0, 1.0), |x| Ok(x[0].sum()));
    check_op("mean", |r| one(r, &IMG, -1.0, 1.0), |x| Ok(x[0].mean()));
    check_op("reshape", |r| one(r, &IMG, -1.0, 1.0), |x| x[0].reshape(&[2, 30]));
    check_op("slice", |r| one(r, &IMG, -1.0, 1.0), |x| x[0].slice(3, 1, 4));
    check_op("concat", |r| two(r, &IMG, -1.0, 1.0), |x| Tensor::concat(&[x[0].clone(), x[1].clone()], 1));
    check_op("pad_reflect", |r| one(r, &IMG, -1.0, 1.0), |x| x[0].pad_reflect(2));
}

pub fn convolutions() {
    let conv = |r: &mut ChaCha8Rng, k: usize| {
        vec![
            (vec![1, 2, 6, 6], uniform(r, &[1, 2, 6, 6], -1.0, 1.0)),
            (vec![3, 2, k, k], uniform(r, &[3, 2, k, k], -0.5, 0.5)),
            (vec![3], uniform(r, &[3], -0.5, 0.5)),
        ]
    };
    check_op("conv2d s1", |r| conv(r, 3), |x| x[0].conv2d(&x[1], Some(&x[2]), 1, 1));
    check_op("conv2d s2", |r| conv(r, 4), |x| x[0].conv2d(&x[1], Some(&x[2]), 2, 1));
    check_op("conv2d k7", |r| conv(r, 7), |x| x[0].conv2d(&x[1], Some(&x[2]), 1, 3));
    check_op(
        "conv_transpose2d",
        |r| {
            vec![
                (vec![1, 3, 3, 3], uniform(r, &[1, 3, 3, 3], -1.0, 1.0)),
                (vec![3, 2, 3, 3], uniform(r, &[3, 2, 3, 3], -0.5, 0.5)),
                (vec![2], uniform(r, &[2], -0.5, 0.5)),
            ]
        },
        |x| x[0].conv_transpose2d(&x[1], Some(&x[2]), 2, 1, 1),
    );
    check_op(
        "instance_norm",
        |r| {
            vec![
                (IMG.to_vec(), uniform(r, &IMG, -1.0, 1.0)),
                (vec![2], uniform(r, &[2], 0.5, 1.5)),
                (vec![2], uniform(r, &[2], -0.5, 0.5)),
            ]
        },
        |x| x[0].instance_norm(Some(&x[1]), Some(&x[2]), 1e-5),
    );
}

pub fn divergence_ops() {
    // probability vectors along the last axis; perturbations stay within
    // the normalization tolerance
    let probs = |r: &mut ChaCha8Rng| {
        let mut mk = || {
            let mut v = uniform(r, &[3, 4], 0.05, 1.0);
            for row in v.chunks_mut(4) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            (vec![3, 4], v)
        };
        vec![mk(), mk()]
    };
    check_op("kl", probs, |x| kl_tensor(&x[0], &x[1], 1e-8));
    check_op("jsd", probs, |x| jsd_tensor(&x[0], &x[1], 1e-8));
    let gauss = |r: &mut ChaCha8Rng| {
        vec![
            (vec![6], uniform(r, &[6], -1.0, 1.0)),
            (vec![6], uniform(r, &[6], 0.05, 1.0)),
            (vec![6], uniform(r, &[6], -1.0, 1.0)),
            (vec![6], uniform(r, &[6], 0.05, 1.0)),
        ]
    };
    check_op("gaussian_kl", gauss, |x| gaussian_kl_tensor(&x[0], &x[1], &x[2], &x[3]));
    check_op("gaussian_jsd", gauss, |x| gaussian_jsd_tensor(&x[0], &x[1], &x[2], &x[3]));
    check_op("log_loss", |r| two(r, &IMG, 0.05, 0.95), |x| log_loss_tensor(&x[0], &x[1], 1e-6));
    check_op(
        "l1",
        |r| vec![(IMG.to_vec(), uniform(r, &IMG, -1.0, 1.0)), (IMG.to_vec(), uniform(r, &IMG, 2.0, 3.0))],
        |x| l1_tensor(&x[0], &x[1]),
    );
    for metric in [Metric::Kld, Metric::Jsd, Metric::Log] {
        check_op(
            "pixel_distance",
            |r| two(r, &IMG, -0.95, 0.95),
            move |x| pixel_distance(&x[0], &x[1], &DistanceKind::new(metric)),
        );
    }
}

pub fn soft_representations() {
    let b = Binning::new(5).unwrap();
    check_op("window_mean", |r| one(r, &IMG, -1.0, 1.0), |x| window_mean(&x[0], 3));
    check_op("window_std", |r| one(r, &IMG, -1.0, 1.0), |x| window_std(&x[0], 3, 1e-3));
    for w in [WindowWeighting::Uniform, WindowWeighting::ChebyshevGaussian] {
        check_op(
            "soft_histogram_local",
            |r| one(r, &IMG, -1.0, 1.0),
            move |x| soft_histogram_local(&x[0], 3, b, 0.5, w),
        );
    }
    check_op("soft_categorical global", |r| one(r, &IMG, -1.0, 1.0), move |x| {
        soft_categorical(&x[0], (5, 6), b, 0.5)
    });
    // tiles that run past the border read reflected pixels
    check_op("soft_categorical tiles", |r| one(r, &IMG, -1.0, 1.0), move |x| {
        soft_categorical(&x[0], (4, 4), b, 0.5)
    });
}

pub fn every_fd_with_every_metric() {
    let shape = [1, 3, 6, 7];
    for kind in FdKind::ALL {
        for metric in [Metric::L1, Metric::Kld, Metric::Jsd, Metric::Log] {
            let spec = FdSpec {
                bins: 6,
                patch: 4,
                tau: 0.5,
                ..FdSpec::new(kind)
            };
            let dk = DistanceKind::new(metric);
            check_op(
                &format!("{} + {}", kind.name(), metric.name()),
                |r| {
                    (0..4)
                        .map(|_| (shape.to_vec(), uniform(r, &shape, -0.95, 0.95)))
                        .collect()
                },
                move |x| fd_term_loss(&x[0], &x[1], &x[2], &x[3], &spec, &dk),
            );
        }
    }
}

/// Every case by name.
pub const ALL: [(&str, fn()); 7] = [
    ("elementwise unary", elementwise_unary_ops),
    ("elementwise binary", elementwise_binary_ops),
    ("reductions and shape", reductions_and_shape_ops),
    ("convolutions", convolutions),
    ("divergences", divergence_ops),
    ("soft representations", soft_representations),
    ("fd x metric compositions", every_fd_with_every_metric),
];
