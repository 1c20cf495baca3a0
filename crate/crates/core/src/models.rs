//! ResNet generator and PatchGAN discriminator.
//!
//! Both networks are plain parameter sets plus a forward function; all
//! layers are built from tensor ops so the whole model is differentiable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamSet, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Paper,
    Toy,
}

/// Network size knobs shared by the generator and the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePreset {
    pub name: PresetName,
    pub image_size: usize,
    pub resnet_blocks: usize,
    pub base_channels: usize,
    pub discriminator_layers: usize,
}

impl ScalePreset {
    pub fn paper() -> Self {
        ScalePreset {
            name: PresetName::Paper,
            image_size: 256,
            resnet_blocks: 9,
            base_channels: 64,
            discriminator_layers: 3,
        }
    }

    /// Desk-scale preset; `image_size` is 32 or 64.
    pub fn toy(image_size: usize) -> Result<Self> {
        let p = ScalePreset {
            name: PresetName::Toy,
            image_size,
            resnet_blocks: 3,
            base_channels: 16,
            discriminator_layers: 2,
        };
        if !matches!(image_size, 32 | 64) {
            return Err(Error::Config(format!("toy image size must be 32 or 64, got {image_size}")));
        }
        Ok(p)
    }

    pub fn by_name(name: &str, image_size: Option<usize>) -> Result<Self> {
        match name {
            "paper" => Ok(ScalePreset::paper()),
            "toy" => ScalePreset::toy(image_size.unwrap_or(32)),
            _ => Err(Error::Config(format!("unknown preset {name:?} (paper, toy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        if self.base_channels == 0 || self.discriminator_layers == 0 {
            return Err(Error::Config("channel and layer counts must be positive".into()));
        }
        // 7x7 reflect padding needs at least 4 pixels per side.
        if self.image_size < 4 {
            return Err(Error::Config("image too small".into()));
        }
        Ok(())
    }

    /// Analytic discriminator receptive field in pixels.
    pub fn receptive_field(&self) -> usize {
        // two trailing stride-1 4x4 convs, then the stride-2 stages
        let mut rf = 7;
        for _ in 0..self.discriminator_layers {
            rf = (rf - 1) * 2 + 4;
        }
        rf
    }

    /// Side of the discriminator's logit map for the preset image size.
    pub fn logit_size(&self) -> usize {
        let mut s = self.image_size;
        for _ in 0..self.discriminator_layers {
            s = (s + 2 - 4) / 2 + 1;
        }
        s - 2
    }
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    fn conv<T: Scalar>(&mut self, ps: &mut ParamSet<T>, name: &str, shape: [usize; 4]) {
        let n = shape.iter().product();
        let w = (0..n).map(|_| T::of(self.normal.sample(&mut self.rng))).collect();
        let bias_len = if name.starts_with("up") { shape[1] } else { shape[0] };
        ps.insert(format!("{name}.weight"), Tensor::param(&shape, w).expect("shape"));
        ps.insert(
            format!("{name}.bias"),
            Tensor::param(&[bias_len], vec![T::zero(); bias_len]).expect("shape"),
        );
    }
}

fn check_input<T: Scalar>(op: &'static str, preset: &ScalePreset, x: &Tensor<T>) -> Result<()> {
    let s = preset.image_size;
    match *x.shape() {
        [_, CHANNELS, h, w] if h == s && w == s => Ok(()),
        _ => Err(Error::shape(op, x.shape(), &[1, CHANNELS, s, s])),
    }
}

fn detached_params<T: Scalar>(ps: &ParamSet<T>) -> ParamSet<T> {
    let mut out = ParamSet::new();
    for (name, t) in ps.iter() {
        out.insert(name, t.detach());
    }
    out
}

/// ResNet generator: 7x7 head, two stride-2 downsamplings, residual blocks,
/// two stride-2 transposed convs and a 7x7 tanh tail.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    pub preset: ScalePreset,
    pub params: ParamSet<T>,
}

pub fn build_generator<T: Scalar>(preset: ScalePreset, seed: u64) -> Result<Generator<T>> {
    preset.validate()?;
    let f = preset.base_channels;
    let mut init = Init::new(seed);
    let mut ps = ParamSet::new();
    init.conv(&mut ps, "head", [f, CHANNELS, 7, 7]);
    init.conv(&mut ps, "down0", [2 * f, f, 3, 3]);
    init.conv(&mut ps, "down1", [4 * f, 2 * f, 3, 3]);
    for i in 0..preset.resnet_blocks {
        init.conv(&mut ps, &format!("res{i}.conv0"), [4 * f, 4 * f, 3, 3]);
        init.conv(&mut ps, &format!("res{i}.conv1"), [4 * f, 4 * f, 3, 3]);
    }
    init.conv(&mut ps, "up0", [4 * f, 2 * f, 3, 3]);
    init.conv(&mut ps, "up1", [2 * f, f, 3, 3]);
    init.conv(&mut ps, "tail", [CHANNELS, f, 7, 7]);
    Ok(Generator { preset, params: ps })
}

impl<T: Scalar> Generator<T> {
    /// Copy whose parameters take no gradient, for inference or for
    /// passes that must not update this network.
    pub fn detached(&self) -> Self {
        Generator {
            preset: self.preset,
            params: detached_params(&self.params),
        }
    }

    fn conv(&self, x: &Tensor<T>, name: &str, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        x.conv2d(w, Some(b), stride, pad)
    }

    fn up(&self, x: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        x.conv_transpose2d(w, Some(b), 2, 1, 1)
    }

    fn norm_relu(x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.instance_norm(None, None, NORM_EPS)?.relu())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(x, &mut |_, _| {})
    }

    /// Forward pass reporting `(stage, shape)` after every stage.
    pub fn forward_traced(&self, x: &Tensor<T>, trace: &mut dyn FnMut(&str, &[usize])) -> Result<Tensor<T>> {
        check_input("generator", &self.preset, x)?;
        let mut h = Self::norm_relu(self.conv(&x.pad_reflect(3)?, "head", 1, 0)?)?;
        trace("head", h.shape());
        for name in ["down0", "down1"] {
            h = Self::norm_relu(self.conv(&h, name, 2, 1)?)?;
            trace(name, h.shape());
        }
        for i in 0..self.preset.resnet_blocks {
            let r = Self::norm_relu(self.conv(&h.pad_reflect(1)?, &format!("res{i}.conv0"), 1, 0)?)?;
            let r = self
                .conv(&r.pad_reflect(1)?, &format!("res{i}.conv1"), 1, 0)?
                .instance_norm(None, None, NORM_EPS)?;
            h = h.add(&r)?;
            trace(&format!("res{i}"), h.shape());
        }
        for name in ["up0", "up1"] {
            h = Self::norm_relu(self.up(&h, name)?)?;
            trace(name, h.shape());
        }
        let out = self.conv(&h.pad_reflect(3)?, "tail", 1, 0)?.tanh();
        trace("tail", out.shape());
        Ok(out)
    }
}

/// PatchGAN discriminator producing a map of patch logits.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub preset: ScalePreset,
    pub params: ParamSet<T>,
}

pub fn build_discriminator<T: Scalar>(preset: ScalePreset, seed: u64) -> Result<Discriminator<T>> {
    preset.validate()?;
    let f = preset.base_channels;
    let n = preset.discriminator_layers;
    let mut init = Init::new(seed);
    let mut ps = ParamSet::new();
    init.conv(&mut ps, "conv0", [f, CHANNELS, 4, 4]);
    let mut prev = f;
    for i in 1..=n {
        let cur = f * (1 << i).min(8);
        init.conv(&mut ps, &format!("conv{i}"), [cur, prev, 4, 4]);
        prev = cur;
    }
    init.conv(&mut ps, &format!("conv{}", n + 1), [1, prev, 4, 4]);
    Ok(Discriminator { preset, params: ps })
}

impl<T: Scalar> Discriminator<T> {
    pub fn detached(&self) -> Self {
        Discriminator {
            preset: self.preset,
            params: detached_params(&self.params),
        }
    }

    fn conv(&self, x: &Tensor<T>, i: usize, stride: usize) -> Result<Tensor<T>> {
        let w = self.params.get(&format!("conv{i}.weight"))?;
        let b = self.params.get(&format!("conv{i}.bias"))?;
        x.conv2d(w, Some(b), stride, 1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(x, &mut |_, _| {})
    }

    pub fn forward_traced(&self, x: &Tensor<T>, trace: &mut dyn FnMut(&str, &[usize])) -> Result<Tensor<T>> {
        check_input("discriminator", &self.preset, x)?;
        let n = self.preset.discriminator_layers;
        let mut h = self.conv(x, 0, 2)?.leaky_relu(LEAKY_SLOPE);
        trace("conv0", h.shape());
        for i in 1..=n {
            let stride = if i < n { 2 } else { 1 };
            h = self
                .conv(&h, i, stride)?
                .instance_norm(None, None, NORM_EPS)?
                .leaky_relu(LEAKY_SLOPE);
            trace(&format!("conv{i}"), h.shape());
        }
        let out = self.conv(&h, n + 1, 1)?;
        trace(&format!("conv{}", n + 1), out.shape());
        Ok(out)
    }
}
