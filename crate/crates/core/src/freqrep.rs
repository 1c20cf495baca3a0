//! Frequency-distribution views of an image.
//!
//! Five representations, numbered as in the experiment tables:
//!
//! 1. local Gaussian: per-pixel window mean and standard deviation
//! 2. local histogram over a `k x k` window
//! 3. local histogram with center-weighted window
//! 4. global per-channel categorical distribution
//! 5. categorical distribution per non-overlapping `p x p` patch
//!
//! "Frequency" is intensity frequency, not spectral content. Intensities
//! are binned uniformly over `[-1, 1]`. Each representation has a hard
//! (counting) form and a soft form whose bin masses are differentiable in
//! the pixel values; the soft forms are tensor ops recorded on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{reflect_index, ImagePlane};
use crate::scalar::Scalar;
use crate::tensor::{OpKind, Tensor};

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_TAU: f64 = 1.0;
/// Smallest standard deviation a local Gaussian may report.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Uniform bins over `[-1, 1]` with soft assignment.
///
/// The soft mass of bin `b` is the bin indicator convolved with a triangular
/// kernel of total width `tau * bin_width`:
/// `F(v - lo_b) - F(v - hi_b)` with `F` the kernel CDF and the outer edges
/// pushed to infinity. The masses telescope to exactly one, only the two bins
/// around the nearest edge are touched when `tau <= 1`, and the hard
/// histogram is recovered as `tau -> 0` away from edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub bins: usize,
}

impl Binning {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Param(format!("need at least 2 bins, got {bins}")));
        }
        Ok(Binning { bins })
    }

    pub fn width(&self) -> f64 {
        2.0 / self.bins as f64
    }

    pub fn hard_index(&self, v: f64) -> usize {
        let i = ((v + 1.0) / self.width()).floor();
        if i.is_nan() || i < 0.0 {
            0
        } else {
            (i as usize).min(self.bins - 1)
        }
    }

    /// Writes soft masses and their derivatives w.r.t. `v`.
    pub fn soft_assign(&self, v: f64, tau: f64, mass: &mut [f64], dmass: &mut [f64]) {
        let width = self.width();
        let h = 0.5 * tau * width;
        let cdf = |u: f64| -> (f64, f64) {
            if u <= -h {
                (0.0, 0.0)
            } else if u >= h {
                (1.0, 0.0)
            } else if u <= 0.0 {
                ((u + h).powi(2) / (2.0 * h * h), (u + h) / (h * h))
            } else {
                (1.0 - (h - u).powi(2) / (2.0 * h * h), (h - u) / (h * h))
            }
        };
        for b in 0..self.bins {
            let (lo, dlo) = if b == 0 {
                (1.0, 0.0)
            } else {
                cdf(v - (-1.0 + b as f64 * width))
            };
            let (hi, dhi) = if b + 1 == self.bins {
                (0.0, 0.0)
            } else {
                cdf(v - (-1.0 + (b + 1) as f64 * width))
            };
            mass[b] = (lo - hi).max(0.0);
            dmass[b] = dlo - dhi;
        }
    }
}

/// Spatial weighting of the local-histogram window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowWeighting {
    Uniform,
    /// `exp(-d^2 / 2)` in Chebyshev distance `d` from the center, normalized.
    ChebyshevGaussian,
}

impl WindowWeighting {
    pub fn weights(&self, kernel: usize) -> Vec<f64> {
        let r = (kernel / 2) as isize;
        let raw: Vec<f64> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .map(|(dy, dx)| match self {
                WindowWeighting::Uniform => 1.0,
                WindowWeighting::ChebyshevGaussian => {
                    let d = dy.abs().max(dx.abs()) as f64;
                    (-d * d / 2.0).exp()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Which representation, numbered 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdKind {
    GaussianLocal,
    HistogramLocal,
    WeightedHistogramLocal,
    CategoricalGlobal,
    CategoricalPatch,
}

impl FdKind {
    pub const ALL: [FdKind; 5] = [
        FdKind::GaussianLocal,
        FdKind::HistogramLocal,
        FdKind::WeightedHistogramLocal,
        FdKind::CategoricalGlobal,
        FdKind::CategoricalPatch,
    ];

    pub fn id(self) -> u8 {
        match self {
            FdKind::GaussianLocal => 1,
            FdKind::HistogramLocal => 2,
            FdKind::WeightedHistogramLocal => 3,
            FdKind::CategoricalGlobal => 4,
            FdKind::CategoricalPatch => 5,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        FdKind::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::Config(format!("frequency function id must be 1..=5, got {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            FdKind::GaussianLocal => "gaussian_local",
            FdKind::HistogramLocal => "histogram_local",
            FdKind::WeightedHistogramLocal => "weighted_histogram_local",
            FdKind::CategoricalGlobal => "categorical_global",
            FdKind::CategoricalPatch => "categorical_patch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(id) = s.parse::<u8>() {
            return FdKind::from_id(id);
        }
        let lower = s.to_ascii_lowercase();
        FdKind::ALL
            .into_iter()
            .find(|k| {
                k.name() == lower
                    || matches!(
                        (k, lower.as_str()),
                        (FdKind::GaussianLocal, "gauss" | "gaussian")
                            | (FdKind::HistogramLocal, "hist" | "histogram")
                            | (FdKind::WeightedHistogramLocal, "whist" | "weighted_histogram")
                            | (FdKind::CategoricalGlobal, "cat" | "categorical")
                            | (FdKind::CategoricalPatch, "patch" | "patch_categorical")
                    )
            })
            .ok_or_else(|| Error::Config(format!("unknown frequency function {s:?}")))
    }
}

/// Fully specified representation: kind plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdSpec {
    pub kind: FdKind,
    pub bins: usize,
    pub kernel: usize,
    pub patch: usize,
    pub tau: f64,
}

impl FdSpec {
    pub fn new(kind: FdKind) -> Self {
        FdSpec {
            kind,
            bins: DEFAULT_BINS,
            kernel: 3,
            patch: DEFAULT_PATCH,
            tau: DEFAULT_TAU,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Binning::new(self.bins)?;
        if !matches!(self.kernel, 3 | 5) {
            return Err(Error::Config(format!("kernel must be 3 or 5, got {}", self.kernel)));
        }
        if self.patch == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Differentiable representation of an NCHW tensor.
    pub fn represent<T: Scalar>(&self, x: &Tensor<T>) -> Result<ReprTensor<T>> {
        self.validate()?;
        let binning = Binning::new(self.bins)?;
        Ok(match self.kind {
            FdKind::GaussianLocal => ReprTensor::Gaussian {
                mu: window_mean(x, self.kernel)?,
                sigma: window_std(x, self.kernel, SIGMA_FLOOR)?,
            },
            FdKind::HistogramLocal => {
                ReprTensor::Probs(soft_histogram_local(x, self.kernel, binning, self.tau, WindowWeighting::Uniform)?)
            }
            FdKind::WeightedHistogramLocal => ReprTensor::Probs(soft_histogram_local(
                x,
                self.kernel,
                binning,
                self.tau,
                WindowWeighting::ChebyshevGaussian,
            )?),
            FdKind::CategoricalGlobal => {
                let [_, _, h, w] = rank4(x)?;
                ReprTensor::Probs(soft_categorical(x, (h, w), binning, self.tau)?)
            }
            FdKind::CategoricalPatch => {
                ReprTensor::Probs(soft_categorical(x, (self.patch, self.patch), binning, self.tau)?)
            }
        })
    }
}

/// Differentiable representation: Gaussian parameters or probability
/// vectors along the last axis.
#[derive(Debug, Clone)]
pub enum ReprTensor<T: Scalar> {
    Gaussian { mu: Tensor<T>, sigma: Tensor<T> },
    Probs(Tensor<T>),
}

/// Hard or soft representation of one image, detached from any tape.
///
/// Layouts: Gaussian `[C, H, W, 2]` holding `(mu, sigma)`; local histograms
/// `[C, H, W, B]`; global `[C, B]`; patches `[C, P, B]` with patches in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqRepr<T> {
    pub kind: FdKind,
    pub bins: usize,
    /// Window side for local kinds, patch side for patches, 0 otherwise.
    pub window: usize,
    pub soft: bool,
    pub tau: Option<f64>,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    /// Padded extent when the image was not a multiple of the patch size.
    pub padded_to: Option<(usize, usize)>,
}

impl<T: Scalar> FreqRepr<T> {
    /// Probability vectors (histogram kinds only).
    pub fn vectors(&self) -> impl Iterator<Item = &[T]> {
        let b = if self.kind == FdKind::GaussianLocal { 2 } else { self.bins };
        self.values.chunks(b)
    }

    pub fn mu(&self) -> Vec<T> {
        self.values.iter().step_by(2).copied().collect()
    }

    pub fn sigma(&self) -> Vec<T> {
        self.values.iter().skip(1).step_by(2).copied().collect()
    }

    /// Checks the probability-vector and sigma-floor invariants.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        if self.kind == FdKind::GaussianLocal {
            if let Some(s) = self.sigma().into_iter().find(|s| s.f64() < SIGMA_FLOOR * (1.0 - 1e-6)) {
                return Err(Error::Contract(format!("sigma {s} below floor")));
            }
            return Ok(());
        }
        for v in self.vectors() {
            let s: f64 = v.iter().map(|x| x.f64()).sum();
            if (s - 1.0).abs() > tol || v.iter().any(|x| x.f64() < 0.0) {
                return Err(Error::Contract(format!("not a probability vector: {v:?}")));
            }
        }
        Ok(())
    }
}

fn rank4<T: Scalar>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape("freqrep", x.shape(), &[1, 0, 0, 0])),
    }
}

/// Source offsets inside one `h x w` plane for every (pixel, window slot).
fn window_index(h: usize, w: usize, kernel: usize) -> Vec<usize> {
    let r = (kernel / 2) as isize;
    let mut idx = Vec::with_capacity(h * w * kernel * kernel);
    for y in 0..h {
        for x in 0..w {
            for dy in -r..=r {
                let yy = reflect_index(y as isize + dy, h);
                for dx in -r..=r {
                    idx.push(yy * w + reflect_index(x as isize + dx, w));
                }
            }
        }
    }
    idx
}

fn check_kernel(kernel: usize, h: usize, w: usize) -> Result<()> {
    if kernel % 2 == 0 || kernel == 0 || kernel / 2 >= h.max(2) || kernel / 2 >= w.max(2) {
        return Err(Error::Param(format!("kernel {kernel} invalid for {h}x{w} image")));
    }
    Ok(())
}

/// Reflect-padded `k x k` box mean, same shape as the input.
pub fn window_mean<T: Scalar>(x: &Tensor<T>, kernel: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = rank4(x)?;
    check_kernel(kernel, h, w)?;
    let kk = kernel * kernel;
    let idx = window_index(h, w, kernel);
    let plane = h * w;
    let mut out = vec![T::zero(); x.numel()];
    for pl in 0..n * c {
        let src = &x.data()[pl * plane..(pl + 1) * plane];
        for (p, o) in out[pl * plane..(pl + 1) * plane].iter_mut().enumerate() {
            let s: f64 = idx[p * kk..(p + 1) * kk].iter().map(|&j| src[j].f64()).sum();
            *o = T::of(s / kk as f64);
        }
    }
    Ok(Tensor::from_op(
        OpKind::Custom("window_mean"),
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        move |a| {
            let mut g = vec![T::zero(); n * c * plane];
            let inv = T::of(1.0 / kk as f64);
            for pl in 0..n * c {
                let gdst = &mut g[pl * plane..(pl + 1) * plane];
                for p in 0..plane {
                    let gp = a.grad[pl * plane + p] * inv;
                    for &j in &idx[p * kk..(p + 1) * kk] {
                        gdst[j] += gp;
                    }
                }
            }
            vec![Some(g)]
        },
    ))
}

/// Reflect-padded `k x k` population standard deviation, floored at
/// `floor`. The gradient is zero where the floor is active.
pub fn window_std<T: Scalar>(x: &Tensor<T>, kernel: usize, floor: f64) -> Result<Tensor<T>> {
    let [n, c, h, w] = rank4(x)?;
    check_kernel(kernel, h, w)?;
    let kk = kernel * kernel;
    let idx = window_index(h, w, kernel);
    let plane = h * w;
    let mut out = vec![T::zero(); x.numel()];
    let mut means = vec![0.0f64; x.numel()];
    for pl in 0..n * c {
        let src = &x.data()[pl * plane..(pl + 1) * plane];
        for p in 0..plane {
            let win = &idx[p * kk..(p + 1) * kk];
            let mean = win.iter().map(|&j| src[j].f64()).sum::<f64>() / kk as f64;
            let var = win.iter().map(|&j| (src[j].f64() - mean).powi(2)).sum::<f64>() / kk as f64;
            means[pl * plane + p] = mean;
            out[pl * plane + p] = T::of(var.sqrt().max(floor));
        }
    }
    Ok(Tensor::from_op(
        OpKind::Custom("window_std"),
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        move |a| {
            let xd = a.inputs[0].data();
            let mut g = vec![T::zero(); n * c * plane];
            for pl in 0..n * c {
                let src = &xd[pl * plane..(pl + 1) * plane];
                let gdst = &mut g[pl * plane..(pl + 1) * plane];
                for p in 0..plane {
                    let sigma = a.output[pl * plane + p].f64();
                    if sigma <= floor {
                        continue;
                    }
                    let mean = means[pl * plane + p];
                    let scale = a.grad[pl * plane + p].f64() / (kk as f64 * sigma);
                    for &j in &idx[p * kk..(p + 1) * kk] {
                        gdst[j] += T::of(scale * (src[j].f64() - mean));
                    }
                }
            }
            vec![Some(g)]
        },
    ))
}

/// Per-sample soft masses and derivatives, `[numel, B]` each.
fn soft_table<T: Scalar>(values: &[T], binning: Binning, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let b = binning.bins;
    let mut mass = vec![0.0; values.len() * b];
    let mut dmass = vec![0.0; values.len() * b];
    for (i, v) in values.iter().enumerate() {
        binning.soft_assign(v.f64(), tau, &mut mass[i * b..(i + 1) * b], &mut dmass[i * b..(i + 1) * b]);
    }
    (mass, dmass)
}

/// Soft local histogram, `[N, C, H, W]` to `[N, C, H, W, B]`.
pub fn soft_histogram_local<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    binning: Binning,
    tau: f64,
    weighting: WindowWeighting,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = rank4(x)?;
    check_kernel(kernel, h, w)?;
    let kk = kernel * kernel;
    let idx = window_index(h, w, kernel);
    let wts = weighting.weights(kernel);
    let plane = h * w;
    let b = binning.bins;
    let (mass, dmass) = soft_table(x.data(), binning, tau);
    let mut out = vec![T::zero(); x.numel() * b];
    let mut acc = vec![0.0f64; b];
    for pl in 0..n * c {
        for p in 0..plane {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (&j, &wt) in idx[p * kk..(p + 1) * kk].iter().zip(&wts) {
                let s = pl * plane + j;
                for (a, m) in acc.iter_mut().zip(&mass[s * b..(s + 1) * b]) {
                    *a += wt * m;
                }
            }
            let o = (pl * plane + p) * b;
            for (d, a) in out[o..o + b].iter_mut().zip(&acc) {
                *d = T::of(*a);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.push(b);
    Ok(Tensor::from_op(
        OpKind::Custom("soft_histogram_local"),
        shape,
        out,
        vec![x.clone()],
        move |a| {
            let mut g = vec![0.0f64; n * c * plane];
            for pl in 0..n * c {
                for p in 0..plane {
                    let o = (pl * plane + p) * b;
                    let gp = &a.grad[o..o + b];
                    for (&j, &wt) in idx[p * kk..(p + 1) * kk].iter().zip(&wts) {
                        let s = pl * plane + j;
                        let dot: f64 = gp
                            .iter()
                            .zip(&dmass[s * b..(s + 1) * b])
                            .map(|(g, d)| g.f64() * d)
                            .sum();
                        g[s] += wt * dot;
                    }
                }
            }
            vec![Some(g.into_iter().map(T::of).collect())]
        },
    ))
}

/// Soft categorical distribution over non-overlapping `tile` regions,
/// `[N, C, H, W]` to `[N, C, P, B]`. Tiles that run past the border read
/// reflected pixels.
pub fn soft_categorical<T: Scalar>(
    x: &Tensor<T>,
    tile: (usize, usize),
    binning: Binning,
    tau: f64,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = rank4(x)?;
    let (th, tw) = tile;
    if th == 0 || tw == 0 || th > 2 * h || tw > 2 * w {
        return Err(Error::Param(format!("tile {th}x{tw} invalid for {h}x{w} image")));
    }
    let (ty, tx) = (h.div_ceil(th), w.div_ceil(tw));
    let tiles = ty * tx;
    // Source pixel of every tile slot.
    let mut members = Vec::with_capacity(tiles * th * tw);
    for by in 0..ty {
        for bx in 0..tx {
            for y in 0..th {
                for xx in 0..tw {
                    let sy = reflect_index((by * th + y) as isize, h);
                    let sx = reflect_index((bx * tw + xx) as isize, w);
                    members.push(sy * w + sx);
                }
            }
        }
    }
    let per = th * tw;
    let inv = 1.0 / per as f64;
    let plane = h * w;
    let b = binning.bins;
    let (mass, dmass) = soft_table(x.data(), binning, tau);
    let mut out = vec![T::zero(); n * c * tiles * b];
    for pl in 0..n * c {
        for t in 0..tiles {
            let o = (pl * tiles + t) * b;
            let mut acc = vec![0.0f64; b];
            for &j in &members[t * per..(t + 1) * per] {
                let s = pl * plane + j;
                for (a, m) in acc.iter_mut().zip(&mass[s * b..(s + 1) * b]) {
                    *a += m;
                }
            }
            for (d, a) in out[o..o + b].iter_mut().zip(acc) {
                *d = T::of(a * inv);
            }
        }
    }
    Ok(Tensor::from_op(
        OpKind::Custom("soft_categorical"),
        vec![n, c, tiles, b],
        out,
        vec![x.clone()],
        move |a| {
            let mut g = vec![0.0f64; n * c * plane];
            for pl in 0..n * c {
                for t in 0..tiles {
                    let o = (pl * tiles + t) * b;
                    let gt = &a.grad[o..o + b];
                    for &j in &members[t * per..(t + 1) * per] {
                        let s = pl * plane + j;
                        let dot: f64 = gt
                            .iter()
                            .zip(&dmass[s * b..(s + 1) * b])
                            .map(|(g, d)| g.f64() * d)
                            .sum();
                        g[s] += inv * dot;
                    }
                }
            }
            vec![Some(g.into_iter().map(T::of).collect())]
        },
    ))
}

// Image-level entry points ---------------------------------------------------

fn chw_tensor<T: Scalar>(image: &ImagePlane<T>) -> Tensor<T> {
    image.to_tensor()
}

/// Local Gaussian `(mu, sigma)` per pixel and channel.
pub fn gauss_local<T: Scalar>(image: &ImagePlane<T>, kernel: usize) -> Result<FreqRepr<T>> {
    if !matches!(kernel, 3 | 5) {
        return Err(Error::Param(format!("kernel must be 3 or 5, got {kernel}")));
    }
    let x = chw_tensor(image);
    let mu = window_mean(&x, kernel)?;
    let sigma = window_std(&x, kernel, SIGMA_FLOOR)?;
    let (h, w, c) = image.dims();
    let values = mu
        .data()
        .iter()
        .zip(sigma.data())
        .flat_map(|(&m, &s)| [m, s])
        .collect();
    Ok(FreqRepr {
        kind: FdKind::GaussianLocal,
        bins: 0,
        window: kernel,
        soft: false,
        tau: None,
        shape: vec![c, h, w, 2],
        values,
        padded_to: None,
    })
}

fn hard_local<T: Scalar>(
    image: &ImagePlane<T>,
    kernel: usize,
    binning: Binning,
    weighting: WindowWeighting,
) -> Vec<T> {
    let (h, w, c) = image.dims();
    let b = binning.bins;
    let wts = weighting.weights(kernel);
    let r = (kernel / 2) as isize;
    let mut out = vec![T::zero(); c * h * w * b];
    let mut acc = vec![0.0f64; b];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let mut slot = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let yy = reflect_index(y as isize + dy, h);
                        let xx = reflect_index(x as isize + dx, w);
                        acc[binning.hard_index(image.get(yy, xx, ch).f64())] += wts[slot];
                        slot += 1;
                    }
                }
                let o = ((ch * h + y) * w + x) * b;
                for (d, a) in out[o..o + b].iter_mut().zip(&acc) {
                    *d = T::of(*a);
                }
            }
        }
    }
    out
}

fn local_hist<T: Scalar>(
    image: &ImagePlane<T>,
    kernel: usize,
    bins: usize,
    soft: bool,
    tau: f64,
    weighting: WindowWeighting,
    kind: FdKind,
) -> Result<FreqRepr<T>> {
    let binning = Binning::new(bins)?;
    let (h, w, c) = image.dims();
    check_kernel(kernel, h, w)?;
    let values = if soft {
        soft_histogram_local(&chw_tensor(image), kernel, binning, tau, weighting)?.to_vec()
    } else {
        hard_local(image, kernel, binning, weighting)
    };
    Ok(FreqRepr {
        kind,
        bins,
        window: kernel,
        soft,
        tau: soft.then_some(tau),
        shape: vec![c, h, w, bins],
        values,
        padded_to: None,
    })
}

/// Normalized bin counts over each pixel's `k x k` window.
pub fn histogram_local<T: Scalar>(
    image: &ImagePlane<T>,
    kernel: usize,
    bins: usize,
    soft: bool,
    tau: f64,
) -> Result<FreqRepr<T>> {
    local_hist(image, kernel, bins, soft, tau, WindowWeighting::Uniform, FdKind::HistogramLocal)
}

/// Local histogram with center-weighted window (Chebyshev Gaussian).
pub fn weighted_histogram_local<T: Scalar>(
    image: &ImagePlane<T>,
    kernel: usize,
    bins: usize,
    soft: bool,
    tau: f64,
) -> Result<FreqRepr<T>> {
    weighted_histogram_local_with(image, kernel, bins, soft, tau, WindowWeighting::ChebyshevGaussian)
}

pub fn weighted_histogram_local_with<T: Scalar>(
    image: &ImagePlane<T>,
    kernel: usize,
    bins: usize,
    soft: bool,
    tau: f64,
    weighting: WindowWeighting,
) -> Result<FreqRepr<T>> {
    local_hist(image, kernel, bins, soft, tau, weighting, FdKind::WeightedHistogramLocal)
}

fn hard_tiles<T: Scalar>(image: &ImagePlane<T>, tile: (usize, usize), binning: Binning) -> Vec<T> {
    let (h, w, c) = image.dims();
    let (th, tw) = tile;
    let (ty, tx) = (h.div_ceil(th), w.div_ceil(tw));
    let b = binning.bins;
    let inv = 1.0 / (th * tw) as f64;
    let mut out = vec![T::zero(); c * ty * tx * b];
    for ch in 0..c {
        for by in 0..ty {
            for bx in 0..tx {
                let mut counts = vec![0usize; b];
                for y in 0..th {
                    for x in 0..tw {
                        let sy = reflect_index((by * th + y) as isize, h);
                        let sx = reflect_index((bx * tw + x) as isize, w);
                        counts[binning.hard_index(image.get(sy, sx, ch).f64())] += 1;
                    }
                }
                let o = ((ch * ty + by) * tx + bx) * b;
                for (d, n) in out[o..o + b].iter_mut().zip(counts) {
                    *d = T::of(n as f64 * inv);
                }
            }
        }
    }
    out
}

/// Per-channel distribution of intensities over the whole image.
pub fn categorical_global<T: Scalar>(
    image: &ImagePlane<T>,
    bins: usize,
    soft: bool,
    tau: f64,
) -> Result<FreqRepr<T>> {
    let binning = Binning::new(bins)?;
    let (h, w, c) = image.dims();
    let values = if soft {
        soft_categorical(&chw_tensor(image), (h, w), binning, tau)?.to_vec()
    } else {
        hard_tiles(image, (h, w), binning)
    };
    Ok(FreqRepr {
        kind: FdKind::CategoricalGlobal,
        bins,
        window: 0,
        soft,
        tau: soft.then_some(tau),
        shape: vec![c, bins],
        values,
        padded_to: None,
    })
}

/// Categorical distribution of every non-overlapping `patch x patch` tile.
/// Images that are not a multiple of `patch` are reflect-padded at the
/// bottom and right.
pub fn categorical_patch<T: Scalar>(
    image: &ImagePlane<T>,
    patch: usize,
    bins: usize,
    soft: bool,
    tau: f64,
) -> Result<FreqRepr<T>> {
    let binning = Binning::new(bins)?;
    let (h, w, c) = image.dims();
    if patch == 0 || patch > 2 * h || patch > 2 * w {
        return Err(Error::Param(format!("patch {patch} invalid for {h}x{w} image")));
    }
    let (ph, pw) = (h.div_ceil(patch) * patch, w.div_ceil(patch) * patch);
    let values = if soft {
        soft_categorical(&chw_tensor(image), (patch, patch), binning, tau)?.to_vec()
    } else {
        hard_tiles(image, (patch, patch), binning)
    };
    let tiles = (ph / patch) * (pw / patch);
    Ok(FreqRepr {
        kind: FdKind::CategoricalPatch,
        bins,
        window: patch,
        soft,
        tau: soft.then_some(tau),
        shape: vec![c, tiles, bins],
        values,
        padded_to: ((ph, pw) != (h, w)).then_some((ph, pw)),
    })
}

/// Dispatches on `spec.kind`.
pub fn represent_image<T: Scalar>(image: &ImagePlane<T>, spec: &FdSpec, soft: bool) -> Result<FreqRepr<T>> {
    spec.validate()?;
    match spec.kind {
        FdKind::GaussianLocal => gauss_local(image, spec.kernel),
        FdKind::HistogramLocal => histogram_local(image, spec.kernel, spec.bins, soft, spec.tau),
        FdKind::WeightedHistogramLocal => weighted_histogram_local(image, spec.kernel, spec.bins, soft, spec.tau),
        FdKind::CategoricalGlobal => categorical_global(image, spec.bins, soft, spec.tau),
        FdKind::CategoricalPatch => categorical_patch(image, spec.patch, spec.bins, soft, spec.tau),
    }
}
