//! Image fidelity metrics: PSNR, SSIM and pixel F1.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::scalar::Scalar;

/// Peak-to-peak range of `[-1, 1]` images.
pub const PSNR_MAX: f64 = 2.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Luma below this counts as ink.
pub const INK_THRESHOLD: f64 = 0.0;

/// `10 log10(max^2 / MSE)`; identical images give `+inf`.
///
/// The value does not change under a joint affine rescale of images and
/// `max_val`, so it equals the `[0, 1]` figure with `max_val = 1`.
pub fn psnr<T: Scalar>(a: &ImagePlane<T>, b: &ImagePlane<T>, max_val: f64) -> Result<f64> {
    a.same_dims(b, "psnr")?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a single-channel `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity on luma over all fully-inside windows.
pub fn ssim<T: Scalar>(a: &ImagePlane<T>, b: &ImagePlane<T>) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_SIGMA, SSIM_K1, SSIM_K2)
}

pub fn ssim_with<T: Scalar>(
    a: &ImagePlane<T>,
    b: &ImagePlane<T>,
    window: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
) -> Result<f64> {
    a.same_dims(b, "ssim")?;
    let (h, w, _) = a.dims();
    if window == 0 || h < window || w < window {
        return Err(Error::Param(format!("image {h}x{w} smaller than SSIM window {window}")));
    }
    let la: Vec<f64> = a.luma().data().iter().map(|v| v.f64()).collect();
    let lb: Vec<f64> = b.luma().data().iter().map(|v| v.f64()).collect();
    let taps = gaussian_taps(window, sigma);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&la, h, w, &taps);
    let mu_b = filter_valid(&lb, h, w, &taps);
    let aa = filter_valid(&prod(&la, &la), h, w, &taps);
    let bb = filter_valid(&prod(&lb, &lb), h, w, &taps);
    let ab = filter_valid(&prod(&la, &lb), h, w, &taps);
    let c1 = (k1 * PSNR_MAX).powi(2);
    let c2 = (k2 * PSNR_MAX).powi(2);
    let n = mu_a.len() as f64;
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n)
}

/// Ink mask: luma strictly below `threshold`.
pub fn ink_mask<T: Scalar>(image: &ImagePlane<T>, threshold: f64) -> Vec<bool> {
    image.luma().data().iter().map(|v| v.f64() < threshold).collect()
}

/// F1 of the positive class. Both masks empty scores 1.
pub fn pixel_f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("pixel_f1", &[pred.len()], &[truth.len()]));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

/// Averages over `n_images` pairs. Infinite per-pair PSNR makes the mean
/// infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub f1: Option<f64>,
    pub n_images: usize,
    pub psnr_max_val: f64,
    pub f1_threshold: f64,
}

/// Per-pair values feeding a [`MetricReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub f1: Option<f64>,
}

pub fn pair_metrics<T: Scalar>(a: &ImagePlane<T>, b: &ImagePlane<T>, with_f1: bool) -> Result<PairMetrics> {
    Ok(PairMetrics {
        psnr_db: psnr(a, b, PSNR_MAX)?,
        ssim: ssim(a, b)?,
        f1: if with_f1 {
            Some(pixel_f1(&ink_mask(a, INK_THRESHOLD), &ink_mask(b, INK_THRESHOLD))?)
        } else {
            None
        },
    })
}

impl MetricReport {
    pub fn aggregate(pairs: &[PairMetrics]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Param("metric report needs at least one image pair".into()));
        }
        let n = pairs.len() as f64;
        let f1 = if pairs.iter().all(|p| p.f1.is_some()) {
            Some(pairs.iter().filter_map(|p| p.f1).sum::<f64>() / n)
        } else {
            None
        };
        Ok(MetricReport {
            psnr_db: pairs.iter().map(|p| p.psnr_db).sum::<f64>() / n,
            ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / n,
            f1,
            n_images: pairs.len(),
            psnr_max_val: PSNR_MAX,
            f1_threshold: INK_THRESHOLD,
        })
    }
}
