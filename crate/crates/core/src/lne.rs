//! Local Neighborhood Encoding.
//!
//! Each pixel `i` gets Gaussian similarity weights
//! `w(j|i) = exp(-|x_i - x_j|^2 / (2 sigma_i^2))` over the other pixels `j`
//! of its `k x k` window, normalized to `p(j|i) = w(j|i) / sum_j w(j|i)`.
//! The encoded image replaces every pixel by `sum_j p(j|i) x_j`, a convex
//! combination of its neighbors. Distances use all channels jointly and the
//! border is reflect-padded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect_index, ImagePlane};
use crate::scalar::Scalar;

/// Lower bound on the per-pixel sigma in [`SigmaMode::PerPixelLocalStd`].
pub const LOCAL_STD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Fixed,
    PerPixelLocalStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LneConfig {
    /// Window side: 3 for one hop, 5 for two hops.
    pub kernel: usize,
    /// Bandwidth in normalized-intensity units.
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for LneConfig {
    fn default() -> Self {
        LneConfig {
            kernel: 3,
            sigma: 0.3,
            sigma_mode: SigmaMode::Fixed,
        }
    }
}

impl LneConfig {
    pub fn with_kernel(kernel: usize) -> Self {
        LneConfig {
            kernel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "LNE kernel must be odd and >= 3, got {}",
                self.kernel
            )));
        }
        if self.sigma_mode == SigmaMode::Fixed && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("LNE sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Neighbors per pixel, `k^2 - 1`.
    pub fn neighbors(&self) -> usize {
        self.kernel * self.kernel - 1
    }
}

/// Window offsets `(dy, dx)` in row-major order, center excluded.
pub fn neighbor_offsets(kernel: usize) -> Vec<(isize, isize)> {
    let r = (kernel / 2) as isize;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&o| o != (0, 0))
        .collect()
}

/// Per-pixel weights laid out `H x W x (k^2 - 1)`, neighbors in
/// [`neighbor_offsets`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField<T> {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub weights: Vec<T>,
}

impl<T: Scalar> WeightField<T> {
    pub fn neighbors(&self) -> usize {
        self.kernel * self.kernel - 1
    }

    pub fn at(&self, y: usize, x: usize) -> &[T] {
        let k = self.neighbors();
        let i = (y * self.width + x) * k;
        &self.weights[i..i + k]
    }
}

/// Normalized weights `p(j|i)`; every pixel's vector sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodWeights<T> {
    pub field: WeightField<T>,
    /// Pixels whose raw weights all underflowed and were replaced by the
    /// uniform distribution.
    pub underflow_fallbacks: usize,
}

fn neighbor<T: Scalar>(img: &ImagePlane<T>, y: usize, x: usize, dy: isize, dx: isize) -> &[T] {
    let yy = reflect_index(y as isize + dy, img.height());
    let xx = reflect_index(x as isize + dx, img.width());
    img.pixel(yy, xx)
}

/// Standard deviation of every sample (all channels) in the full window.
fn window_std<T: Scalar>(img: &ImagePlane<T>, y: usize, x: usize, kernel: usize) -> f64 {
    let r = (kernel / 2) as isize;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            for v in neighbor(img, y, x, dy, dx) {
                let v = v.f64();
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
    }
    let mean = sum / n;
    (sq / n - mean * mean).max(0.0).sqrt()
}

/// Raw Gaussian similarity weights `w(j|i)`.
pub fn gaussian_weights<T: Scalar>(image: &ImagePlane<T>, cfg: &LneConfig) -> Result<WeightField<T>> {
    cfg.validate()?;
    let offsets = neighbor_offsets(cfg.kernel);
    let (h, w, _) = image.dims();
    let mut weights = Vec::with_capacity(h * w * offsets.len());
    for y in 0..h {
        for x in 0..w {
            let sigma = match cfg.sigma_mode {
                SigmaMode::Fixed => cfg.sigma,
                SigmaMode::PerPixelLocalStd => window_std(image, y, x, cfg.kernel).max(LOCAL_STD_FLOOR),
            };
            let denom = 2.0 * sigma * sigma;
            let center = image.pixel(y, x);
            for &(dy, dx) in &offsets {
                let d2: f64 = center
                    .iter()
                    .zip(neighbor(image, y, x, dy, dx))
                    .map(|(a, b)| (a.f64() - b.f64()).powi(2))
                    .sum();
                weights.push(T::of((-d2 / denom).exp()));
            }
        }
    }
    Ok(WeightField {
        height: h,
        width: w,
        kernel: cfg.kernel,
        weights,
    })
}

/// `p(j|i) = w(j|i) / sum_j w(j|i)`, falling back to uniform weights when a
/// neighborhood sums to zero.
pub fn normalize_weights<T: Scalar>(raw: &WeightField<T>) -> NeighborhoodWeights<T> {
    let k = raw.neighbors();
    let uniform = T::of(1.0 / k as f64);
    let mut fallbacks = 0;
    let mut weights = Vec::with_capacity(raw.weights.len());
    for chunk in raw.weights.chunks(k) {
        let total: f64 = chunk.iter().map(|v| v.f64()).sum();
        if total > 0.0 && total.is_finite() {
            weights.extend(chunk.iter().map(|v| T::of(v.f64() / total)));
        } else {
            fallbacks += 1;
            weights.extend(std::iter::repeat_n(uniform, k));
        }
    }
    NeighborhoodWeights {
        field: WeightField {
            weights,
            ..raw.clone()
        },
        underflow_fallbacks: fallbacks,
    }
}

/// Applies precomputed normalized weights to an image.
pub fn apply_weights<T: Scalar>(image: &ImagePlane<T>, weights: &NeighborhoodWeights<T>) -> Result<ImagePlane<T>> {
    let (h, w, c) = image.dims();
    let f = &weights.field;
    if (f.height, f.width) != (h, w) {
        return Err(Error::shape("lne::apply_weights", &[h, w], &[f.height, f.width]));
    }
    let offsets = neighbor_offsets(f.kernel);
    let mut out = ImagePlane::constant(h, w, c, T::zero());
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&(dy, dx), p) in offsets.iter().zip(f.at(y, x)) {
                for (a, v) in acc.iter_mut().zip(neighbor(image, y, x, dy, dx)) {
                    *a += p.f64() * v.f64();
                }
            }
            for (ch, a) in acc.iter().enumerate() {
                out.set(y, x, ch, T::of(*a));
            }
        }
    }
    Ok(out)
}

/// Encoded image together with the weights that produced it.
pub fn encode_with_weights<T: Scalar>(
    image: &ImagePlane<T>,
    cfg: &LneConfig,
) -> Result<(ImagePlane<T>, NeighborhoodWeights<T>)> {
    let weights = normalize_weights(&gaussian_weights(image, cfg)?);
    let out = apply_weights(image, &weights)?;
    Ok((out, weights))
}

/// The neighborhood-encoded image (`wt_image`).
pub fn encode<T: Scalar>(image: &ImagePlane<T>, cfg: &LneConfig) -> Result<ImagePlane<T>> {
    encode_with_weights(image, cfg).map(|(img, _)| img)
}
