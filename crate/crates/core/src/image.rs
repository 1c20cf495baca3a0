//! Normalized `H x W x C` images with values in `[-1, 1]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interleaved (HWC) image plane. Network code works in NCHW; use
/// [`ImagePlane::to_tensor`] / [`ImagePlane::from_tensor`] to cross over.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImagePlane<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::shape("ImagePlane", &[height, width, channels], &[data.len()]));
        }
        Ok(ImagePlane {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: T) -> Self {
        ImagePlane {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        ImagePlane {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Channel values of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ImagePlane {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn same_dims(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            let (a, b) = (self.dims(), other.dims());
            return Err(Error::shape(op, &[a.0, a.1, a.2], &[b.0, b.1, b.2]));
        }
        Ok(())
    }

    /// Single-channel luma (BT.601 weights); grayscale images pass through.
    pub fn luma(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let w = [0.299, 0.587, 0.114];
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| T::of(px.iter().take(3).zip(w).map(|(v, w)| v.f64() * w).sum()))
            .collect();
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// `[1, C, H, W]` constant tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        let (h, w, c) = self.dims();
        let mut out = vec![T::zero(); h * w * c];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + i] = v;
            }
        }
        Tensor::new(&[1, c, h, w], out).expect("shape matches by construction")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); accepts `[1, C, H, W]`.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let [1, c, h, w] = *t.shape() else {
            return Err(Error::shape("ImagePlane::from_tensor", t.shape(), &[1, 0, 0, 0]));
        };
        let src = t.data();
        let mut data = vec![T::zero(); h * w * c];
        for i in 0..h * w {
            for ch in 0..c {
                data[i * c + ch] = src[ch * h * w + i];
            }
        }
        ImagePlane::new(h, w, c, data)
    }

    pub fn cast<U: Scalar>(&self) -> ImagePlane<U> {
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Anisotropic total variation: sum of absolute differences between
    /// horizontally and vertically adjacent samples.
    pub fn total_variation(&self) -> f64 {
        let (h, w, c) = self.dims();
        let mut tv = 0.0;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = self.get(y, x, ch).f64();
                    if x + 1 < w {
                        tv += (self.get(y, x + 1, ch).f64() - v).abs();
                    }
                    if y + 1 < h {
                        tv += (self.get(y + 1, x, ch).f64() - v).abs();
                    }
                }
            }
        }
        tv
    }
}

/// Mirror index for a coordinate that may fall outside `0..len` by less than
/// `len`.
#[inline]
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * (n - 1) - j;
    }
    j.clamp(0, n - 1) as usize
}
