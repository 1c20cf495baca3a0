//! Brute-force references for the numeric building blocks, shared by the
//! oracle and acceptance targets.

use super::{rng, uniform};
use fdcg::data::resize_bilinear;
use fdcg::divergence::{gaussian_kl, jsd, kl};
use fdcg::freqrep::{categorical_global, categorical_patch, gauss_local, histogram_local, Binning};
use fdcg::image::ImagePlane;
use fdcg::lne::{self, LneConfig};
use fdcg::metrics::{gaussian_taps, psnr, ssim, PSNR_MAX, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use rand::Rng;

pub fn random_image(seed: u64, h: usize, w: usize) -> ImagePlane<f64> {
    ImagePlane::new(h, w, 3, uniform(&mut rng(seed), &[h, w, 3], -1.0, 1.0)).unwrap()
}

pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    r as usize
}

pub fn kl_of_the_reference_pair() {
    let oracle: f64 = [(0.5f64, 0.25f64), (0.5, 0.75)].iter().map(|(p, q)| p * (p / q).log2()).sum();
    let got = kl(&[0.5, 0.5], &[0.25, 0.75], 2).unwrap();
    assert!((got - 0.20752).abs() < 1e-4);
    assert!((got - oracle).abs() < 1e-6);
}

pub fn jsd_matches_its_definition() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut vec = || {
            let v: Vec<f64> = (0..8).map(|_| r.random_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (vec(), vec());
        let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let kl2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).log2()).sum::<f64>();
        let oracle = 0.5 * kl2(&p, &m) + 0.5 * kl2(&q, &m);
        assert!((jsd(&p, &q, 8).unwrap() - oracle).abs() < 1e-6);
    }
}

pub fn gaussian_kl_matches_numeric_integration() {
    let mut r = rng(42);
    for _ in 0..10 {
        let (m1, s1) = (r.random_range(-1.0..1.0), r.random_range(0.1..1.0));
        let (m2, s2) = (r.random_range(-1.0..1.0), r.random_range(0.1..1.0));
        let log_pdf = |x: f64, m: f64, s: f64| -(x - m).powi(2) / (2.0 * s * s) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let (lo, hi) = (m1 - 12.0 * s1, m1 + 12.0 * s1);
        let n = 200_000;
        let dx = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * dx;
            let lp = log_pdf(x, m1, s1);
            let v = lp.exp() * (lp - log_pdf(x, m2, s2)) / std::f64::consts::LN_2;
            total += if i == 0 || i == n { 0.5 * v } else { v };
        }
        total *= dx;
        let got = gaussian_kl(m1, s1, m2, s2).unwrap();
        assert!((got - total).abs() < 1e-3, "{got} vs {total}");
    }
}

pub fn gauss_local_mean_is_a_box_filter() {
    for (seed, k) in [(1, 3), (2, 5), (3, 3)] {
        let img = random_image(seed, 9, 7);
        let r = gauss_local(&img, k).unwrap();
        let half = (k / 2) as isize;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    let mut s = 0.0;
                    for dy in -half..=half {
                        for dx in -half..=half {
                            s += img.get(mirror(y as isize + dy, 9), mirror(x as isize + dx, 7), c);
                        }
                    }
                    let mu = r.values[((c * 9 + y) * 7 + x) * 2];
                    assert!((mu - s / (k * k) as f64).abs() < 1e-5);
                }
            }
        }
    }
}

pub fn soft_histograms_approach_hard_counts() {
    let bins = 8;
    let b = Binning::new(bins).unwrap();
    let width = b.width();
    // keep every pixel at least 0.1 bin widths from an edge
    let mut r = rng(5);
    let data: Vec<f64> = (0..6 * 6 * 3)
        .map(|_| {
            let bin = r.random_range(0..bins) as f64;
            -1.0 + (bin + r.random_range(0.1..0.9)) * width
        })
        .collect();
    let img = ImagePlane::new(6, 6, 3, data).unwrap();
    let hard = histogram_local(&img, 3, bins, false, 1.0).unwrap();
    let mut last_gap = f64::INFINITY;
    for tau in [0.5, 0.1, 0.01] {
        let soft = histogram_local(&img, 3, bins, true, tau).unwrap();
        let gap = hard.values.iter().zip(&soft.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= last_gap + 1e-12);
        last_gap = gap;
    }
    assert!(last_gap < 0.02, "gap {last_gap}");
}

pub fn patch_distributions_average_to_the_global_one() {
    let bins = 6;
    for seed in 0..5 {
        let img = random_image(seed, 16, 24);
        let patches = categorical_patch(&img, 8, bins, false, 1.0).unwrap();
        let global = categorical_global(&img, bins, false, 1.0).unwrap();
        let tiles = patches.shape[1];
        assert_eq!(tiles, 6);
        for c in 0..3 {
            for j in 0..bins {
                // integer pixel counts, so the identity is exact
                let from_patches: f64 = (0..tiles).map(|t| (patches.values[(c * tiles + t) * bins + j] * 64.0).round()).sum();
                let total = (global.values[c * bins + j] * 384.0).round();
                assert_eq!(from_patches, total);
                let mean: f64 = (0..tiles).map(|t| patches.values[(c * tiles + t) * bins + j]).sum::<f64>() / tiles as f64;
                assert!((mean - global.values[c * bins + j]).abs() < 1e-12);
            }
        }
    }
}

/// SSIM straight from its definition: weighted statistics per window, no
/// separable filtering.
pub fn ssim_oracle(a: &ImagePlane<f64>, b: &ImagePlane<f64>) -> f64 {
    let luma = |img: &ImagePlane<f64>, y: usize, x: usize| {
        0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
    };
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let k = SSIM_WINDOW;
    let (c1, c2) = ((SSIM_K1 * PSNR_MAX).powi(2), (SSIM_K2 * PSNR_MAX).powi(2));
    let (h, w, _) = a.dims();
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = taps[i] * taps[j];
                    ma += wt * luma(a, y0 + i, x0 + j);
                    mb += wt * luma(b, y0 + i, x0 + j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = taps[i] * taps[j];
                    let (pa, pb) = (luma(a, y0 + i, x0 + j) - ma, luma(b, y0 + i, x0 + j) - mb);
                    va += wt * pa * pa;
                    vb += wt * pb * pb;
                    cov += wt * pa * pb;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn ssim_matches_direct_definition() {
    for seed in 0..8 {
        let a = random_image(seed, 16, 14);
        let noise = random_image(seed + 100, 16, 14);
        let b = ImagePlane::new(
            16,
            14,
            3,
            a.data().iter().zip(noise.data()).map(|(x, n)| (x + 0.3 * n).clamp(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let got = ssim(&a, &b).unwrap();
        assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6);
    }
}

pub fn psnr_analytic_offset() {
    let a = ImagePlane::constant(8, 8, 3, 0.1);
    let b = ImagePlane::constant(8, 8, 3, 0.12);
    assert!((psnr(&a, &b, PSNR_MAX).unwrap() - 40.0).abs() < 1e-6);
}

pub fn bilinear_upsampling_of_a_ramp() {
    let ramp = ImagePlane::from_fn(4, 4, 1, |y, x, _| x as f64 + 10.0 * y as f64);
    let up = resize_bilinear(&ramp, 8, 8);
    let src = |o: usize| ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 3.0);
    for y in 0..8 {
        for x in 0..8 {
            assert!((up.get(y, x, 0) - (src(x) + 10.0 * src(y))).abs() < 1e-12);
        }
    }
    // same size is the identity
    assert_eq!(resize_bilinear(&ramp, 4, 4).data(), ramp.data());
}

pub fn lne_smooths_noise() {
    let cfg = LneConfig::default();
    let mut smoother = 0;
    for seed in 0..100 {
        let img = random_image(seed, 16, 16);
        if lne::encode(&img, &cfg).unwrap().total_variation() <= img.total_variation() {
            smoother += 1;
        }
    }
    assert!(smoother >= 95, "{smoother}/100");
}

fn random_distribution(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn divergence_basics() {
    let mut r = rng(17);
    let mut asymmetric = 0;
    for _ in 0..50 {
        let (p, q) = (random_distribution(&mut r, 6), random_distribution(&mut r, 6));
        assert!(kl(&p, &p, 6).unwrap().abs() < 1e-9);
        let j = jsd(&p, &q, 6).unwrap();
        assert!((0.0..=1.0).contains(&j), "{j}");
        assert!((j - jsd(&q, &p, 6).unwrap()).abs() < 1e-12);
        if (kl(&p, &q, 6).unwrap() - kl(&q, &p, 6).unwrap()).abs() > 1e-3 {
            asymmetric += 1;
        }
    }
    assert!(asymmetric > 0);
    // disjoint supports reach the upper bound
    assert!((jsd(&[1.0, 0.0], &[0.0, 1.0], 2).unwrap() - 1.0).abs() < 1e-6);
}

pub fn lne_probabilities_are_normalized() {
    for (seed, kernel, mode) in [
        (0, 3, lne::SigmaMode::Fixed),
        (1, 5, lne::SigmaMode::Fixed),
        (2, 3, lne::SigmaMode::PerPixelLocalStd),
        (3, 5, lne::SigmaMode::PerPixelLocalStd),
    ] {
        let cfg = LneConfig {
            sigma_mode: mode,
            ..LneConfig::with_kernel(kernel)
        };
        let (_, p) = lne::encode_with_weights(&random_image(seed, 9, 8), &cfg).unwrap();
        for y in 0..9 {
            for x in 0..8 {
                let v = p.field.at(y, x);
                assert_eq!(v.len(), kernel * kernel - 1);
                assert!(v.iter().all(|w| *w >= 0.0));
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

pub fn lne_uniform_image_weights() {
    for (k, want) in [(3, 1.0 / 8.0), (5, 1.0 / 24.0)] {
        let img = ImagePlane::<f64>::constant(6, 6, 3, 0.3);
        let (_, p) = lne::encode_with_weights(&img, &LneConfig::with_kernel(k)).unwrap();
        assert!(p.field.weights.iter().all(|&v| (v - want).abs() < 1e-12));
    }
}

/// Every output pixel is a convex combination of its neighbors, and closer
/// neighbors (in color) never weigh less than farther ones.
pub fn lne_convex_and_monotone() {
    for (seed, k) in [(4, 3), (5, 5)] {
        let img = random_image(seed, 8, 7);
        let (out, p) = lne::encode_with_weights(&img, &LneConfig::with_kernel(k)).unwrap();
        let offsets = lne::neighbor_offsets(k);
        for y in 0..8 {
            for x in 0..7 {
                let px = |dy: isize, dx: isize| (mirror(y as isize + dy, 8), mirror(x as isize + dx, 7));
                for c in 0..3 {
                    let vals: Vec<f64> = offsets.iter().map(|&(dy, dx)| {
                        let (yy, xx) = px(dy, dx);
                        img.get(yy, xx, c)
                    }).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let v = out.get(y, x, c);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
                let dist: Vec<f64> = offsets
                    .iter()
                    .map(|&(dy, dx)| {
                        let (yy, xx) = px(dy, dx);
                        (0..3).map(|c| (img.get(y, x, c) - img.get(yy, xx, c)).powi(2)).sum()
                    })
                    .collect();
                let w = p.field.at(y, x);
                for a in 0..w.len() {
                    for b in 0..w.len() {
                        if dist[a] < dist[b] {
                            assert!(w[a] >= w[b]);
                        }
                    }
                }
            }
        }
    }
}

pub fn representations_are_probability_vectors() {
    use fdcg::freqrep::{represent_image, FdKind, FdSpec};
    for seed in 0..4 {
        let img = random_image(seed, 10, 12);
        for kind in FdKind::ALL {
            for soft in [false, true] {
                let spec = FdSpec { bins: 8, patch: 4, ..FdSpec::new(kind) };
                let r = represent_image(&img, &spec, soft).unwrap();
                r.check_invariants(1e-6).unwrap();
                if kind != FdKind::GaussianLocal {
                    for v in r.vectors() {
                        assert!(v.iter().all(|p| *p >= 0.0));
                        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    }
                } else {
                    assert!(r.sigma().iter().all(|s| *s >= fdcg::freqrep::SIGMA_FLOOR));
                }
            }
        }
    }
}
