//! Synthetic two-domain datasets and PNG I/O.
//!
//! On disk a dataset is a directory with `trainA`, `trainB`, `testA`,
//! `testB` (and `masks` for the glyph family) holding `NNNN.png` files,
//! plus a `manifest.json`.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::scalar::Scalar;

pub const SPLITS: [&str; 4] = ["trainA", "trainB", "testA", "testB"];
pub const MASK_DIR: &str = "masks";
pub const MANIFEST: &str = "manifest.json";

/// 8-bit code to `[-1, 1]`.
pub fn from_u8(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

/// `[-1, 1]` to an 8-bit code, rounding half up and clamping.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn quantize(v: f64) -> f64 {
    from_u8(to_u8(v))
}

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA) as a 3-channel image.
pub fn load_image<T: Scalar>(path: &Path) -> Result<ImagePlane<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: unsupported bit depth {:?}, expected 8",
            path.display(),
            info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.color_type.samples();
    let bytes = &buf[..info.buffer_size()];
    let mut data = Vec::with_capacity(w * h * 3);
    for px in bytes.chunks(stride) {
        let rgb = match info.color_type {
            png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => [px[0]; 3],
            png::ColorType::Rgb | png::ColorType::Rgba => [px[0], px[1], px[2]],
            png::ColorType::Indexed => {
                return Err(Error::Format(format!("{}: palette PNG not expanded", path.display())))
            }
        };
        data.extend(rgb.iter().map(|&v| T::of(from_u8(v))));
    }
    ImagePlane::new(h, w, 3, data)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Writes an 8-bit RGB PNG (single-channel images are replicated).
pub fn save_image<T: Scalar>(image: &ImagePlane<T>, path: &Path) -> Result<()> {
    let (h, w, c) = image.dims();
    let bytes: Vec<u8> = match c {
        3 => image.data().iter().map(|v| to_u8(v.f64())).collect(),
        1 => image.data().iter().flat_map(|v| [to_u8(v.f64()); 3]).collect(),
        _ => return Err(Error::Param(format!("cannot save a {c}-channel image"))),
    };
    write_png(path, w, h, png::ColorType::Rgb, &bytes)
}

/// Binary mask as a grayscale PNG (255 = set).
pub fn save_mask(mask: &[bool], height: usize, width: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(path, width, height, png::ColorType::Grayscale, &bytes)
}

pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let img = load_image::<f64>(path)?;
    Ok(img.data().chunks(3).map(|px| px[0] > 0.0).collect())
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear<T: Scalar>(image: &ImagePlane<T>, height: usize, width: usize) -> ImagePlane<T> {
    let (h, w, c) = image.dims();
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let coord = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    ImagePlane::from_fn(height, width, c, |y, x, ch| {
        let (y0, y1, fy) = coord(y, sy, h);
        let (x0, x1, fx) = coord(x, sx, w);
        let g = |yy, xx| image.get(yy, xx, ch).f64();
        let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
        let bottom = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
        T::of(top * (1.0 - fy) + bottom * fy)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    StripesCheckers,
    GradientTexture,
    Glyphs,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stripes_checkers" | "stripes" => Ok(Family::StripesCheckers),
            "gradient_texture" | "gradient" => Ok(Family::GradientTexture),
            "glyphs" | "strike" => Ok(Family::Glyphs),
            _ => Err(Error::Config(format!(
                "unknown family {s:?} (stripes_checkers, gradient_texture, glyphs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    #[serde(rename = "trainA")]
    pub train_a: usize,
    #[serde(rename = "trainB")]
    pub train_b: usize,
    #[serde(rename = "testA")]
    pub test_a: usize,
    #[serde(rename = "testB")]
    pub test_b: usize,
}

impl Counts {
    pub fn new(train_a: usize, train_b: usize, test_a: usize, test_b: usize) -> Self {
        Counts {
            train_a,
            train_b,
            test_a,
            test_b,
        }
    }

    fn get(&self, split: usize) -> usize {
        [self.train_a, self.train_b, self.test_a, self.test_b][split]
    }
}

/// Recipe for a synthetic dataset; doubles as the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDomainPair {
    pub family: Family,
    pub seed: u64,
    pub size: usize,
    pub counts: Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

/// One generated sample. `mask` marks strike pixels (glyph family, domain B).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImagePlane<f64>,
    pub mask: Option<Vec<bool>>,
}

type Rgb = [f64; 3];

fn jitter(rng: &mut ChaCha8Rng, base: Rgb, amount: f64) -> Rgb {
    base.map(|v| (v + rng.random_range(-amount..=amount)).clamp(-1.0, 1.0))
}

fn paint(size: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> ImagePlane<f64> {
    let mut img = ImagePlane::constant(size, size, 3, 0.0);
    for y in 0..size {
        for x in 0..size {
            let c = f(y, x);
            for (ch, v) in c.iter().enumerate() {
                img.set(y, x, ch, quantize(*v));
            }
        }
    }
    img
}

fn stripes(rng: &mut ChaCha8Rng, size: usize) -> ImagePlane<f64> {
    let a = jitter(rng, [0.8, -0.6, -0.6], 0.1);
    let b = jitter(rng, [0.9, 0.7, -0.5], 0.1);
    let period = rng.random_range(4..=8) as f64;
    let phase = rng.random_range(0.0..period);
    let orient = rng.random_range(0..3);
    paint(size, |y, x| {
        let t = match orient {
            0 => y as f64,
            1 => x as f64,
            _ => (x + y) as f64 / std::f64::consts::SQRT_2,
        };
        if ((t + phase) / period).fract() < 0.5 {
            a
        } else {
            b
        }
    })
}

fn checkers(rng: &mut ChaCha8Rng, size: usize) -> ImagePlane<f64> {
    let a = jitter(rng, [-0.7, -0.5, 0.6], 0.1);
    let b = jitter(rng, [-0.5, 0.6, 0.8], 0.1);
    let cell = rng.random_range(4..=8);
    let (oy, ox) = (rng.random_range(0..cell), rng.random_range(0..cell));
    paint(size, |y, x| if ((y + oy) / cell + (x + ox) / cell) % 2 == 0 { a } else { b })
}

fn gradient(rng: &mut ChaCha8Rng, size: usize) -> ImagePlane<f64> {
    let a = jitter(rng, [0.9, 0.2, -0.8], 0.1);
    let b = jitter(rng, [0.3, -0.7, -0.2], 0.1);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = theta.sin_cos();
    let half = (size - 1) as f64 / 2.0;
    let reach = half * (dy.abs() + dx.abs());
    paint(size, |y, x| {
        let t = (((y as f64 - half) * dy + (x as f64 - half) * dx) / reach + 1.0) / 2.0;
        [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
    })
}

fn texture(rng: &mut ChaCha8Rng, size: usize) -> ImagePlane<f64> {
    let a = jitter(rng, [-0.8, 0.5, -0.2], 0.1);
    let b = jitter(rng, [-0.3, -0.4, 0.7], 0.1);
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    paint(size, |y, x| {
        let t = noise[y * size + x];
        [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
    })
}

const INK: Rgb = [-1.0, -1.0, -1.0];
const PAPER: Rgb = [1.0, 1.0, 1.0];
/// Strike strokes are blue so they are visible against black ink.
const STRIKE: Rgb = [-1.0, -1.0, 1.0];

fn stamp(mask: &mut [bool], size: usize, y: f64, x: f64, radius: f64) {
    let r = radius.ceil() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (py, px) = (y.round() as isize + dy, x.round() as isize + dx);
            if py < 0 || px < 0 || py >= size as isize || px >= size as isize {
                continue;
            }
            let d2 = (py as f64 - y).powi(2) + (px as f64 - x).powi(2);
            if d2 <= radius * radius {
                mask[py as usize * size + px as usize] = true;
            }
        }
    }
}

fn line(mask: &mut [bool], size: usize, from: (f64, f64), to: (f64, f64), radius: f64) {
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        stamp(mask, size, from.0 + (to.0 - from.0) * t, from.1 + (to.1 - from.1) * t, radius);
    }
}

/// Ink mask of a page of stroke glyphs laid out in rows.
fn glyph_ink(rng: &mut ChaCha8Rng, size: usize) -> (Vec<bool>, Vec<f64>) {
    let mut ink = vec![false; size * size];
    let scale = size as f64 / 32.0;
    let (cell_w, cell_h) = (8.0 * scale, 10.0 * scale);
    let margin = 2.0 * scale;
    let rows = ((size as f64 - 2.0 * margin) / cell_h).floor() as usize;
    let cols = ((size as f64 - 2.0 * margin) / cell_w).floor() as usize;
    let radius = 0.5 * scale;
    let mut baselines = Vec::with_capacity(rows);
    for r in 0..rows {
        let top = margin + r as f64 * cell_h;
        baselines.push(top + cell_h * 0.5);
        for c in 0..cols {
            let left = margin + c as f64 * cell_w;
            // lattice points inside the cell
            let point = |rng: &mut ChaCha8Rng| {
                let gy = rng.random_range(0..4) as f64 / 3.0;
                let gx = rng.random_range(0..3) as f64 / 2.0;
                (top + scale + gy * (cell_h - 3.0 * scale), left + scale + gx * (cell_w - 3.0 * scale))
            };
            let strokes = rng.random_range(2..=3);
            let mut p = point(rng);
            for _ in 0..strokes {
                let mut q = point(rng);
                while q == p {
                    q = point(rng);
                }
                line(&mut ink, size, p, q, radius);
                p = q;
            }
        }
    }
    (ink, baselines)
}

fn glyphs(rng: &mut ChaCha8Rng, size: usize, struck: bool) -> Sample {
    let (ink, baselines) = glyph_ink(rng, size);
    let mut strike = vec![false; size * size];
    if struck {
        let scale = size as f64 / 32.0;
        let n = rng.random_range(1..=2).min(baselines.len());
        let mut rows: Vec<usize> = (0..baselines.len()).collect();
        for i in 0..n {
            let j = rng.random_range(i..rows.len());
            rows.swap(i, j);
            let y = baselines[rows[i]] + rng.random_range(-1.0..=1.0) * scale;
            let tilt = rng.random_range(-2.0..=2.0) * scale;
            let x0 = rng.random_range(1.0..4.0) * scale;
            let x1 = size as f64 - rng.random_range(1.0..4.0) * scale;
            line(&mut strike, size, (y - tilt, x0), (y + tilt, x1), 0.5 * scale);
        }
        // strokes only land on paper
        for (s, &i) in strike.iter_mut().zip(&ink) {
            *s &= !i;
        }
    }
    let image = paint(size, |y, x| {
        let i = y * size + x;
        if ink[i] {
            INK
        } else if strike[i] {
            STRIKE
        } else {
            PAPER
        }
    });
    Sample {
        image,
        mask: struck.then_some(strike),
    }
}

fn sample_rng(seed: u64, domain: Domain, split: usize, index: usize) -> ChaCha8Rng {
    // distinct stream per (domain, split, index)
    let d = match domain {
        Domain::A => 0u64,
        Domain::B => 1,
    };
    let key = (d << 62) ^ ((split as u64) << 56) ^ index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

impl SyntheticDomainPair {
    pub fn new(family: Family, size: usize, counts: Counts, seed: u64) -> Self {
        SyntheticDomainPair {
            family,
            seed,
            size,
            counts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::Config(format!("image size {} too small (min 16)", self.size)));
        }
        Ok(())
    }

    /// Sample `index` of `split` (0..4 in [`SPLITS`] order).
    pub fn sample(&self, split: usize, index: usize) -> Sample {
        let domain = if split % 2 == 0 { Domain::A } else { Domain::B };
        let mut rng = sample_rng(self.seed, domain, split, index);
        let s = self.size;
        match (self.family, domain) {
            (Family::StripesCheckers, Domain::A) => Sample {
                image: stripes(&mut rng, s),
                mask: None,
            },
            (Family::StripesCheckers, Domain::B) => Sample {
                image: checkers(&mut rng, s),
                mask: None,
            },
            (Family::GradientTexture, Domain::A) => Sample {
                image: gradient(&mut rng, s),
                mask: None,
            },
            (Family::GradientTexture, Domain::B) => Sample {
                image: texture(&mut rng, s),
                mask: None,
            },
            (Family::Glyphs, d) => glyphs(&mut rng, s, d == Domain::B),
        }
    }

    /// The whole dataset in memory.
    pub fn build<T: Scalar>(&self) -> Result<Dataset<T>> {
        self.validate()?;
        let mut splits: [Vec<ImagePlane<T>>; 4] = Default::default();
        let mut masks = Vec::new();
        for (split, out) in splits.iter_mut().enumerate() {
            for i in 0..self.counts.get(split) {
                let s = self.sample(split, i);
                if split == 3 {
                    if let Some(m) = s.mask {
                        masks.push(m);
                    }
                }
                out.push(s.image.cast());
            }
        }
        let [train_a, train_b, test_a, test_b] = splits;
        Ok(Dataset {
            train_a,
            train_b,
            has_masks: self.family == Family::Glyphs,
            test_masks: masks,
            test_a,
            test_b,
            resized: Vec::new(),
        })
    }
}

/// Writes the dataset and its manifest under `out`.
pub fn generate(pair: &SyntheticDomainPair, out: &Path) -> Result<()> {
    pair.validate()?;
    for dir in SPLITS {
        fs::create_dir_all(out.join(dir)).map_err(|e| Error::io(&out.join(dir), e))?;
    }
    if pair.family == Family::Glyphs {
        fs::create_dir_all(out.join(MASK_DIR)).map_err(|e| Error::io(&out.join(MASK_DIR), e))?;
    }
    for (split, dir) in SPLITS.iter().enumerate() {
        for i in 0..pair.counts.get(split) {
            let s = pair.sample(split, i);
            let name = format!("{i:04}.png");
            save_image(&s.image, &out.join(dir).join(&name))?;
            if let (Some(m), 3) = (&s.mask, split) {
                save_mask(m, pair.size, pair.size, &out.join(MASK_DIR).join(&name))?;
            }
        }
    }
    let path = out.join(MANIFEST);
    let json = serde_json::to_string_pretty(pair).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<SyntheticDomainPair> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Images of the four splits. `test_masks` holds one strike mask per
/// `test_b` image when `has_masks`.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub train_a: Vec<ImagePlane<T>>,
    pub train_b: Vec<ImagePlane<T>>,
    pub test_a: Vec<ImagePlane<T>>,
    pub test_b: Vec<ImagePlane<T>>,
    pub has_masks: bool,
    pub test_masks: Vec<Vec<bool>>,
    /// Files that were resized to the requested size on load.
    pub resized: Vec<PathBuf>,
}

impl<T: Scalar> Dataset<T> {
    /// Clean counterpart of struck test image `i`: strike pixels back to paper.
    pub fn clean_truth(&self, i: usize) -> Option<ImagePlane<T>> {
        if !self.has_masks {
            return None;
        }
        let mut img = self.test_b[i].clone();
        let w = img.width();
        for (p, &m) in self.test_masks[i].iter().enumerate() {
            if m {
                for ch in 0..img.channels() {
                    img.set(p / w, p % w, ch, T::of(PAPER[ch]));
                }
            }
        }
        Some(img)
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a dataset directory, resizing any image that is not
/// `size x size`.
pub fn load_dataset<T: Scalar>(dir: &Path, size: usize) -> Result<Dataset<T>> {
    let missing: Vec<&str> = SPLITS.iter().copied().filter(|s| !dir.join(s).is_dir()).collect();
    if !missing.is_empty() {
        return Err(Error::io(
            dir,
            io::Error::new(
                io::ErrorKind::NotFound,
                format!(
                    "missing {}; expected layout {{trainA, trainB, testA, testB}}/NNNN.png [+ masks/]",
                    missing.join(", ")
                ),
            ),
        ));
    }
    let mut resized = Vec::new();
    let mut load_split = |name: &str| -> Result<Vec<ImagePlane<T>>> {
        png_files(&dir.join(name))?
            .into_iter()
            .map(|p| {
                let img = load_image::<T>(&p)?;
                if img.height() != size || img.width() != size {
                    resized.push(p);
                    Ok(resize_bilinear(&img, size, size))
                } else {
                    Ok(img)
                }
            })
            .collect()
    };
    let train_a = load_split("trainA")?;
    let train_b = load_split("trainB")?;
    let test_a = load_split("testA")?;
    let test_b = load_split("testB")?;
    let mask_dir = dir.join(MASK_DIR);
    let has_masks = mask_dir.is_dir();
    let test_masks = if has_masks {
        let masks = png_files(&mask_dir)?
            .iter()
            .map(|p| load_mask(p))
            .collect::<Result<Vec<_>>>()?;
        if masks.len() != test_b.len() || masks.iter().any(|m| m.len() != size * size) {
            return Err(Error::Format(format!(
                "{}: expected one {size}x{size} mask per testB image",
                mask_dir.display()
            )));
        }
        masks
    } else {
        Vec::new()
    };
    if train_a.is_empty() || train_b.is_empty() {
        return Err(Error::Format(format!("{}: empty training split", dir.display())));
    }
    Ok(Dataset {
        train_a,
        train_b,
        test_a,
        test_b,
        has_masks,
        test_masks,
        resized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_mapping() {
        assert_eq!(from_u8(0), -1.0);
        assert_eq!(from_u8(255), 1.0);
        assert!((from_u8(128) - 0.00392156862745098).abs() < 1e-15);
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8(v)), v);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImagePlane::<f64>::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) as f64 * 0.13 + c as f64).sin());
        let path = dir.path().join("a.png");
        save_image(&img, &path).unwrap();
        let back = load_image::<f64>(&path).unwrap();
        assert_eq!(back.dims(), (5, 7, 3));
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 127.5 + 1e-12, "{worst}");
    }

    #[test]
    fn struck_minus_mask_is_clean() {
        let pair = SyntheticDomainPair::new(Family::Glyphs, 32, Counts::new(0, 0, 0, 4), 3);
        let ds = pair.build::<f64>().unwrap();
        for i in 0..4 {
            let clean = ds.clean_truth(i).unwrap();
            let struck_ink = crate::metrics::ink_mask(&ds.test_b[i], 0.0);
            let clean_ink = crate::metrics::ink_mask(&clean, 0.0);
            let mask = &ds.test_masks[i];
            assert!(mask.iter().any(|&m| m));
            for p in 0..mask.len() {
                assert_eq!(struck_ink[p] ^ mask[p], clean_ink[p]);
            }
        }
    }
}
