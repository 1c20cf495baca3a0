//! NCHW convolution, transposed convolution, reflect padding and instance
//! normalization. Convolutions go through im2col and a GEMM.

use super::{OpKind, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

pub fn conv_transpose2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    ((input - 1) * stride + kernel + output_pad).checked_sub(2 * pad)
}

/// Image-to-patch geometry shared by im2col and col2im.
#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `lo..hi` whose input column `ox * stride + kj - pad`
    /// lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let g = self;
        let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
        let hi = (g.width + g.pad).saturating_sub(kj).div_ceil(g.stride).min(g.out_w);
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let g = *self;
        let ncols = g.cols();
        for c in 0..g.channels {
            let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = g.valid_cols(kj);
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if iy < 0 || iy >= g.height as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        let start = lo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (d, s) in line[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters-adds columns back into `image`.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let g = *self;
        let ncols = g.cols();
        for c in 0..g.channels {
            let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    let (lo, hi) = g.valid_cols(kj);
                    if lo == hi {
                        continue;
                    }
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                        let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                        let start = lo * g.stride + kj - g.pad;
                        for (d, v) in dst[start..].iter_mut().step_by(g.stride).zip(line) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank4(op: &'static str, t: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, t.shape(), &[0, 0, 0, 0])),
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor<impl Scalar>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::shape(op, b.shape(), &[channels])),
        _ => Ok(()),
    }
}

fn bias_grad<T: Scalar>(grad: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![0.0f64; channels];
    for n in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            let base = (n * channels + c) * plane;
            *acc += grad[base..base + plane].iter().map(|v| v.f64()).sum::<f64>();
        }
    }
    gb.into_iter().map(T::of).collect()
}

impl<T: Scalar> Tensor<T> {
    /// 2-D convolution with zero padding. `weight` is `[out, in, k, k]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_rank4("conv2d", self)?;
        let [cout, wcin, kh, kw] = expect_rank4("conv2d", weight)?;
        if wcin != cin || kh != kw || stride == 0 {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        check_bias("conv2d", bias, cout)?;
        let (Some(oh), Some(ow)) = (
            conv2d_output_size(h, kh, stride, pad),
            conv2d_output_size(w, kw, stride, pad),
        ) else {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        };
        let geo = Geometry {
            channels: cin,
            height: h,
            width: w,
            kernel: kh,
            stride,
            pad,
            out_h: oh,
            out_w: ow,
        };
        let (k, p) = (geo.rows(), geo.cols());
        let mut out = vec![T::zero(); n * cout * p];
        let mut all_cols = Vec::with_capacity(n);
        for b in 0..n {
            let mut cols = vec![T::zero(); k * p];
            geo.im2col(&self.data()[b * cin * h * w..(b + 1) * cin * h * w], &mut cols);
            let dst = &mut out[b * cout * p..(b + 1) * cout * p];
            T::gemm(cout, k, p, T::one(), weight.data(), false, &cols, false, T::zero(), dst);
            if let Some(bias) = bias {
                for (c, &bv) in bias.data().iter().enumerate() {
                    dst[c * p..(c + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
            all_cols.push(cols);
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            OpKind::Conv2d,
            vec![n, cout, oh, ow],
            out,
            inputs,
            move |a| {
                let wdata = a.inputs[1].data();
                let mut gx = a.needs(0).then(|| vec![T::zero(); n * cin * h * w]);
                let mut gw = a.needs(1).then(|| vec![T::zero(); cout * k]);
                let mut dcols = vec![T::zero(); k * p];
                for (b, cols) in all_cols.iter().enumerate() {
                    let gout = &a.grad[b * cout * p..(b + 1) * cout * p];
                    if let Some(gw) = gw.as_mut() {
                        T::gemm(cout, p, k, T::one(), gout, false, cols, true, T::one(), gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        T::gemm(k, cout, p, T::one(), wdata, true, gout, false, T::zero(), &mut dcols);
                        geo.col2im(&dcols, &mut gx[b * cin * h * w..(b + 1) * cin * h * w]);
                    }
                }
                let mut grads = vec![gx, gw];
                if a.inputs.len() == 3 {
                    grads.push(a.needs(2).then(|| bias_grad(a.grad, n, cout, p)));
                }
                grads
            },
        ))
    }

    /// Transposed convolution (adjoint of `conv2d` w.r.t. its input).
    /// `weight` is `[in, out, k, k]`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_rank4("conv_transpose2d", self)?;
        let [wcin, cout, kh, kw] = expect_rank4("conv_transpose2d", weight)?;
        if wcin != cin || kh != kw || stride == 0 || output_pad >= stride {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        }
        check_bias("conv_transpose2d", bias, cout)?;
        let (Some(oh), Some(ow)) = (
            conv_transpose2d_output_size(h, kh, stride, pad, output_pad),
            conv_transpose2d_output_size(w, kw, stride, pad, output_pad),
        ) else {
            return Err(Error::shape("conv_transpose2d", self.shape(), weight.shape()));
        };
        // The output image plays the role of a conv input whose conv output
        // grid is exactly h x w.
        let geo = Geometry {
            channels: cout,
            height: oh,
            width: ow,
            kernel: kh,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let (k, p) = (geo.rows(), geo.cols());
        let plane_out = oh * ow;
        let mut out = vec![T::zero(); n * cout * plane_out];
        let mut cols = vec![T::zero(); k * p];
        for b in 0..n {
            let x = &self.data()[b * cin * p..(b + 1) * cin * p];
            T::gemm(k, cin, p, T::one(), weight.data(), true, x, false, T::zero(), &mut cols);
            let dst = &mut out[b * cout * plane_out..(b + 1) * cout * plane_out];
            geo.col2im(&cols, dst);
            if let Some(bias) = bias {
                for (c, &bv) in bias.data().iter().enumerate() {
                    dst[c * plane_out..(c + 1) * plane_out]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            OpKind::ConvTranspose2d,
            vec![n, cout, oh, ow],
            out,
            inputs,
            move |a| {
                let xdata = a.inputs[0].data();
                let wdata = a.inputs[1].data();
                let mut gx = a.needs(0).then(|| vec![T::zero(); n * cin * p]);
                let mut gw = a.needs(1).then(|| vec![T::zero(); cin * k]);
                let mut dcols = vec![T::zero(); k * p];
                for b in 0..n {
                    let gout = &a.grad[b * cout * plane_out..(b + 1) * cout * plane_out];
                    geo.im2col(gout, &mut dcols);
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[b * cin * p..(b + 1) * cin * p];
                        T::gemm(cin, k, p, T::one(), wdata, false, &dcols, false, T::zero(), dst);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let x = &xdata[b * cin * p..(b + 1) * cin * p];
                        T::gemm(cin, p, k, T::one(), x, false, &dcols, true, T::one(), gw);
                    }
                }
                let mut grads = vec![gx, gw];
                if a.inputs.len() == 3 {
                    grads.push(a.needs(2).then(|| bias_grad(a.grad, n, cout, plane_out)));
                }
                grads
            },
        ))
    }

    /// Mirror padding of the two spatial axes (edge pixel not repeated).
    pub fn pad_reflect(&self, pad: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("pad_reflect", self)?;
        if pad >= h || pad >= w {
            return Err(Error::shape("pad_reflect", self.shape(), &[pad]));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let index: Vec<usize> = (0..ph * pw)
            .map(|i| {
                let y = reflect(i / pw, pad, h);
                let x = reflect(i % pw, pad, w);
                y * w + x
            })
            .collect();
        let planes = n * c;
        let src = self.data();
        let mut out = Vec::with_capacity(planes * ph * pw);
        for pl in 0..planes {
            let base = pl * h * w;
            out.extend(index.iter().map(|&j| src[base + j]));
        }
        Ok(Tensor::from_op(
            OpKind::PadReflect,
            vec![n, c, ph, pw],
            out,
            vec![self.clone()],
            move |a| {
                let mut g = vec![T::zero(); planes * h * w];
                for pl in 0..planes {
                    let gsrc = &a.grad[pl * ph * pw..(pl + 1) * ph * pw];
                    let dst = &mut g[pl * h * w..(pl + 1) * h * w];
                    for (&j, &v) in index.iter().zip(gsrc) {
                        dst[j] += v;
                    }
                }
                vec![Some(g)]
            },
        ))
    }

    /// Per-sample, per-channel normalization with optional affine `[C]`
    /// scale and shift. Statistics use a 64-bit accumulator.
    pub fn instance_norm(
        &self,
        gamma: Option<&Tensor<T>>,
        beta: Option<&Tensor<T>>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("instance_norm", self)?;
        check_bias("instance_norm", gamma, c)?;
        check_bias("instance_norm", beta, c)?;
        let plane = h * w;
        let mut xhat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![0.0f64; n * c];
        for pl in 0..n * c {
            let x = &self.data()[pl * plane..(pl + 1) * plane];
            let mean = x.iter().map(|v| v.f64()).sum::<f64>() / plane as f64;
            let var = x.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[pl] = is;
            for (d, v) in xhat[pl * plane..(pl + 1) * plane].iter_mut().zip(x) {
                *d = T::of((v.f64() - mean) * is);
            }
        }
        let mut out = xhat.clone();
        for pl in 0..n * c {
            let ch = pl % c;
            let g = gamma.map_or(T::one(), |g| g.data()[ch]);
            let b = beta.map_or(T::zero(), |b| b.data()[ch]);
            out[pl * plane..(pl + 1) * plane]
                .iter_mut()
                .for_each(|v| *v = *v * g + b);
        }
        let mut inputs = vec![self.clone()];
        let has_gamma = gamma.is_some();
        inputs.extend(gamma.cloned());
        inputs.extend(beta.cloned());
        Ok(Tensor::from_op(
            OpKind::InstanceNorm,
            vec![n, c, h, w],
            out,
            inputs,
            move |a| {
                let gamma_data = has_gamma.then(|| a.inputs[1].data());
                let mut gx = a.needs(0).then(|| vec![T::zero(); n * c * plane]);
                let mut ggamma = vec![0.0f64; c];
                let mut gbeta = vec![0.0f64; c];
                for pl in 0..n * c {
                    let ch = pl % c;
                    let gy = &a.grad[pl * plane..(pl + 1) * plane];
                    let xh = &xhat[pl * plane..(pl + 1) * plane];
                    let scale = gamma_data.map_or(1.0, |g| g[ch].f64());
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for (&g, &x) in gy.iter().zip(xh) {
                        sum_g += g.f64();
                        sum_gx += g.f64() * x.f64();
                    }
                    ggamma[ch] += sum_gx;
                    gbeta[ch] += sum_g;
                    if let Some(gx) = gx.as_mut() {
                        let mg = scale * sum_g / plane as f64;
                        let mgx = scale * sum_gx / plane as f64;
                        let is = inv_std[pl];
                        for ((d, &g), &x) in gx[pl * plane..(pl + 1) * plane].iter_mut().zip(gy).zip(xh) {
                            *d = T::of(is * (scale * g.f64() - mg - x.f64() * mgx));
                        }
                    }
                }
                let mut grads = vec![gx];
                let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
                let mut idx = 1;
                if has_gamma {
                    grads.push(a.needs(idx).then(|| to_t(ggamma)));
                    idx += 1;
                }
                if a.inputs.len() > idx {
                    grads.push(a.needs(idx).then(|| to_t(gbeta)));
                }
                grads
            },
        ))
    }
}

/// Source index for padded coordinate `i` (padding `pad`, extent `len`).
fn reflect(i: usize, pad: usize, len: usize) -> usize {
    let j = i as isize - pad as isize;
    if j < 0 {
        (-j) as usize
    } else if j >= len as isize {
        2 * (len - 1) - j as usize
    } else {
        j as usize
    }
}
