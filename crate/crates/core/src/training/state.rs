use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AdvForm, ExperimentConfig};
use crate::divergence::{fd_term_loss, l1_tensor, pixel_distance};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::lne;
use crate::models::{build_discriminator, build_generator, Discriminator, Generator};
use crate::scalar::Scalar;
use crate::tensor::checkpoint::{self, NamedArray};
use crate::tensor::{adam_step, Moments, ParamSet, Tensor};

/// Individually reported parts of the generator objective, already scaled
/// by their weights. `None` marks a term the config does not use.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub adv: Option<f64>,
    pub cyc: Option<f64>,
    pub id: Option<f64>,
    pub fd: [Option<f64>; 5],
}

impl Components {
    /// `(name, value)` of every present term, in log-column order.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (name, v) in [("adv", self.adv), ("cyc", self.cyc), ("id", self.id)] {
            if let Some(v) = v {
                out.push((name.to_string(), v));
            }
        }
        for (i, v) in self.fd.iter().enumerate() {
            if let Some(v) = v {
                out.push((format!("fd_{}", i + 1), *v));
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.named().iter().map(|(_, v)| v).sum()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub components: Components,
    pub wall_ms: f64,
}

pub const LOG_HEADER: [&str; 12] = [
    "step", "loss_G", "loss_D", "adv", "cyc", "id", "fd_1", "fd_2", "fd_3", "fd_4", "fd_5", "wall_ms",
];

impl StepLog {
    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let c = &self.components;
        let mut row = vec![
            self.step.to_string(),
            self.loss_g.to_string(),
            self.loss_d.to_string(),
            opt(c.adv),
            opt(c.cyc),
            opt(c.id),
        ];
        row.extend(c.fd.iter().map(|v| opt(*v)));
        row.push(format!("{:.3}", self.wall_ms));
        row
    }

    /// Same row without the timing column, for determinism checks.
    pub fn loss_fields(&self) -> Vec<String> {
        let mut f = self.csv_fields();
        f.pop();
        f
    }
}

/// A training pair: raw images and the tensors the generators consume.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
    pub x_in: Tensor<T>,
    pub y_in: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(x: &ImagePlane<T>, y: &ImagePlane<T>, cfg: &ExperimentConfig) -> Result<Self> {
        let input = |img: &ImagePlane<T>| -> Result<Tensor<T>> {
            if cfg.wt_image {
                Ok(lne::encode(img, &cfg.lne_config())?.to_tensor())
            } else {
                Ok(img.to_tensor())
            }
        };
        Ok(Batch {
            x: x.to_tensor(),
            y: y.to_tensor(),
            x_in: input(x)?,
            y_in: input(y)?,
        })
    }

    /// Pre-encoded inputs (e.g. cached LNE images).
    pub fn from_parts(x: &ImagePlane<T>, y: &ImagePlane<T>, x_in: &ImagePlane<T>, y_in: &ImagePlane<T>) -> Self {
        Batch {
            x: x.to_tensor(),
            y: y.to_tensor(),
            x_in: x_in.to_tensor(),
            y_in: y_in.to_tensor(),
        }
    }
}

/// Everything needed to continue training: four networks, their optimizer
/// moments, the step counter and the optional replay pools.
#[derive(Debug, Clone)]
pub struct TrainState<T: Scalar> {
    /// Maps domain A to domain B.
    pub g_ab: Generator<T>,
    /// Maps domain B to domain A.
    pub g_ba: Generator<T>,
    /// Judges domain A images.
    pub d_a: Discriminator<T>,
    /// Judges domain B images.
    pub d_b: Discriminator<T>,
    pub moments: [Moments<T>; 4],
    /// Completed updates.
    pub step: u64,
    pub seed: u64,
    pub pool_a: Vec<Tensor<T>>,
    pub pool_b: Vec<Tensor<T>>,
}

const NETS: [&str; 4] = ["g_ab", "g_ba", "d_a", "d_b"];

/// RNG for everything random in step `step`; no state carries over.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn gan_real<T: Scalar>(logits: &Tensor<T>, form: AdvForm) -> Result<Tensor<T>> {
    Ok(match form {
        AdvForm::Log => logits.scale(-1.0).softplus().mean(),
        AdvForm::Lsgan => {
            let d = logits.add_scalar(-1.0);
            d.mul(&d)?.mean()
        }
    })
}

fn gan_fake<T: Scalar>(logits: &Tensor<T>, form: AdvForm) -> Result<Tensor<T>> {
    Ok(match form {
        AdvForm::Log => logits.softplus().mean(),
        AdvForm::Lsgan => logits.mul(logits)?.mean(),
    })
}

fn accumulate<T: Scalar>(acc: Option<Tensor<T>>, t: &Tensor<T>) -> Result<Option<Tensor<T>>> {
    Ok(Some(match acc {
        None => t.clone(),
        Some(a) => a.add(t)?,
    }))
}

/// Generator-side graph of one step.
struct GeneratorPass<T: Scalar> {
    loss: Tensor<T>,
    components: Components,
    fake_b: Tensor<T>,
    fake_a: Tensor<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let preset = cfg.scale_preset()?;
        let s = cfg.seed.wrapping_mul(4);
        let g_ab = build_generator(preset, s)?;
        let g_ba = build_generator(preset, s.wrapping_add(1))?;
        let d_a = build_discriminator(preset, s.wrapping_add(2))?;
        let d_b = build_discriminator(preset, s.wrapping_add(3))?;
        let moments = [
            Moments::for_params(g_ab.params.tensors()),
            Moments::for_params(g_ba.params.tensors()),
            Moments::for_params(d_a.params.tensors()),
            Moments::for_params(d_b.params.tensors()),
        ];
        Ok(TrainState {
            g_ab,
            g_ba,
            d_a,
            d_b,
            moments,
            step: 0,
            seed: cfg.seed,
            pool_a: Vec::new(),
            pool_b: Vec::new(),
        })
    }

    fn params(&self) -> [&ParamSet<T>; 4] {
        [&self.g_ab.params, &self.g_ba.params, &self.d_a.params, &self.d_b.params]
    }

    fn generator_pass(&self, batch: &Batch<T>, cfg: &ExperimentConfig) -> Result<GeneratorPass<T>> {
        let kind = cfg.distance_kind();
        let mut comps = Components::default();
        let mut total: Option<Tensor<T>> = None;

        let fake_b = self.g_ab.forward(&batch.x_in)?;
        let rec_a = self.g_ba.forward(&fake_b)?;
        let fake_a = self.g_ba.forward(&batch.y_in)?;
        let rec_b = self.g_ab.forward(&fake_a)?;

        if cfg.advloss_flag == 1 {
            let (d_a, d_b) = (self.d_a.detached(), self.d_b.detached());
            let adv = gan_real(&d_b.forward(&fake_b)?, cfg.adv_form)?
                .add(&gan_real(&d_a.forward(&fake_a)?, cfg.adv_form)?)?;
            comps.adv = Some(adv.item().f64());
            total = accumulate(total, &adv)?;
        }

        let fd_terms = cfg.fd_terms()?;
        let cyc = if cfg.cycleloss_flag == 1 {
            Some(l1_tensor(&batch.x_in, &rec_a)?.add(&l1_tensor(&batch.y_in, &rec_b)?)?)
        } else if fd_terms.is_empty() {
            Some(pixel_distance(&batch.x_in, &rec_a, &kind)?.add(&pixel_distance(&batch.y_in, &rec_b, &kind)?)?)
        } else {
            None
        };
        if let Some(c) = cyc {
            let c = c.scale(cfg.lambda_cyc);
            comps.cyc = Some(c.item().f64());
            total = accumulate(total, &c)?;
        }

        if cfg.lambda_id > 0.0 {
            let id = l1_tensor(&self.g_ab.forward(&batch.y)?, &batch.y)?
                .add(&l1_tensor(&self.g_ba.forward(&batch.x)?, &batch.x)?)?
                .scale(cfg.lambda_id);
            comps.id = Some(id.item().f64());
            total = accumulate(total, &id)?;
        }

        for term in &fd_terms {
            let t = fd_term_loss(&batch.x_in, &rec_a, &batch.y_in, &rec_b, &term.spec, &kind)?.scale(term.coeff);
            comps.fd[term.spec.kind.id() as usize - 1] = Some(t.item().f64());
            total = accumulate(total, &t)?;
        }

        let loss = total.ok_or_else(|| Error::Config("objective has no terms".into()))?;
        Ok(GeneratorPass {
            loss,
            components: comps,
            fake_b,
            fake_a,
        })
    }

    /// Discriminator objective on detached fakes.
    fn discriminator_loss(
        &self,
        batch: &Batch<T>,
        fake_a: &Tensor<T>,
        fake_b: &Tensor<T>,
        form: AdvForm,
    ) -> Result<Tensor<T>> {
        let side = |d: &Discriminator<T>, real: &Tensor<T>, fake: &Tensor<T>| -> Result<Tensor<T>> {
            Ok(gan_real(&d.forward(real)?, form)?
                .add(&gan_fake(&d.forward(fake)?, form)?)?
                .scale(0.5))
        };
        side(&self.d_a, &batch.x, fake_a)?.add(&side(&self.d_b, &batch.y, fake_b)?)
    }

    /// Replay-pool query: returns the fake the discriminator should see and
    /// updates the pool.
    fn replay(pool: &mut Vec<Tensor<T>>, fake: Tensor<T>, size: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
        if pool.len() < size {
            pool.push(fake.clone());
            return fake;
        }
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..pool.len());
            std::mem::replace(&mut pool[i], fake)
        } else {
            fake
        }
    }

    /// Objective values for `batch` without updating anything.
    pub fn total_loss(&self, batch: &Batch<T>, cfg: &ExperimentConfig) -> Result<(f64, f64, Components)> {
        cfg.validate()?;
        let gp = self.generator_pass(batch, cfg)?;
        let loss_d = if cfg.advloss_flag == 1 {
            self.discriminator_loss(batch, &gp.fake_a.detach(), &gp.fake_b.detach(), cfg.adv_form)?
                .item()
                .f64()
        } else {
            0.0
        };
        Ok((gp.loss.item().f64(), loss_d, gp.components))
    }

    /// One generator update followed by one discriminator update on the
    /// pre-update fakes.
    pub fn train_step(&mut self, batch: &Batch<T>, cfg: &ExperimentConfig) -> Result<StepLog> {
        let start = Instant::now();
        let step = self.step + 1;
        let adam = cfg.adam();
        let gp = self.generator_pass(batch, cfg)?;
        let loss_g = gp.loss.item().f64();
        if !loss_g.is_finite() {
            return Err(non_finite(step, "loss_G", loss_g, &gp.components, batch));
        }
        gp.loss.backward()?;
        adam_step(self.g_ab.params.tensors_mut(), &mut self.moments[0], &adam)?;
        adam_step(self.g_ba.params.tensors_mut(), &mut self.moments[1], &adam)?;

        let mut loss_d = 0.0;
        if cfg.advloss_flag == 1 {
            let (mut fake_a, mut fake_b) = (gp.fake_a.detach(), gp.fake_b.detach());
            if cfg.replay_buffer {
                let mut rng = step_rng(self.seed ^ 0x5eed_0f_f00d, step);
                fake_a = Self::replay(&mut self.pool_a, fake_a, cfg.replay_size, &mut rng);
                fake_b = Self::replay(&mut self.pool_b, fake_b, cfg.replay_size, &mut rng);
            }
            let ld = self.discriminator_loss(batch, &fake_a, &fake_b, cfg.adv_form)?;
            loss_d = ld.item().f64();
            if !loss_d.is_finite() {
                return Err(non_finite(step, "loss_D", loss_d, &gp.components, batch));
            }
            ld.backward()?;
            adam_step(self.d_a.params.tensors_mut(), &mut self.moments[2], &adam)?;
            adam_step(self.d_b.params.tensors_mut(), &mut self.moments[3], &adam)?;
        }
        self.step = step;
        Ok(StepLog {
            step,
            loss_g,
            loss_d,
            components: gp.components,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn to_records(&self) -> Vec<NamedArray> {
        let mut out = vec![NamedArray::new("meta.step", &[1], vec![self.step as f32])];
        for (i, (net, ps)) in NETS.iter().zip(self.params()).enumerate() {
            let mom = &self.moments[i];
            for (j, (name, t)) in ps.iter().enumerate() {
                out.push(NamedArray::from_tensor(format!("{net}.{name}"), t));
                let as_f32 = |v: &[T]| v.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
                out.push(NamedArray::new(format!("adam.{net}.m.{name}"), t.shape(), as_f32(&mom.m[j])));
                out.push(NamedArray::new(format!("adam.{net}.v.{name}"), t.shape(), as_f32(&mom.v[j])));
            }
            out.push(NamedArray::new(format!("adam.{net}.t"), &[1], vec![mom.t as f32]));
        }
        for (pool, tag) in [(&self.pool_a, "a"), (&self.pool_b, "b")] {
            for (i, t) in pool.iter().enumerate() {
                out.push(NamedArray::from_tensor(format!("pool.{tag}.{i}"), t));
            }
        }
        out
    }

    /// Rebuilds a state for `cfg` from checkpoint records.
    pub fn from_records(records: &[NamedArray], cfg: &ExperimentConfig) -> Result<Self> {
        let mut st = TrainState::new(cfg)?;
        let scalar = |name: &str| -> Result<u64> {
            let r = checkpoint::find(records, name)?;
            r.data
                .first()
                .map(|&v| v as u64)
                .ok_or_else(|| Error::Format(format!("{name} is empty")))
        };
        st.step = scalar("meta.step")?;
        for (i, net) in NETS.iter().enumerate() {
            let ps = match i {
                0 => &mut st.g_ab.params,
                1 => &mut st.g_ba.params,
                2 => &mut st.d_a.params,
                _ => &mut st.d_b.params,
            };
            let names = ps.names().to_vec();
            let mom = &mut st.moments[i];
            for (j, name) in names.iter().enumerate() {
                let load = |key: String, shape: &[usize]| -> Result<Vec<T>> {
                    let r = checkpoint::find(records, &key)?;
                    if r.shape != shape {
                        return Err(Error::shape("checkpoint", shape, &r.shape));
                    }
                    Ok(r.to_values())
                };
                let shape = ps.get(name)?.shape().to_vec();
                let w = load(format!("{net}.{name}"), &shape)?;
                ps.set(name, &shape, w)?;
                mom.m[j] = load(format!("adam.{net}.m.{name}"), &shape)?;
                mom.v[j] = load(format!("adam.{net}.v.{name}"), &shape)?;
            }
            mom.t = scalar(&format!("adam.{net}.t"))?;
        }
        for (tag, pool) in [("a", &mut st.pool_a), ("b", &mut st.pool_b)] {
            let mut i = 0;
            while let Ok(r) = checkpoint::find(records, &format!("pool.{tag}.{i}")) {
                pool.push(Tensor::new(&r.shape, r.to_values())?);
                i += 1;
            }
        }
        Ok(st)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_records())
    }

    pub fn load(path: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_records(&checkpoint::load(path)?, cfg)
    }
}

fn non_finite<T: Scalar>(step: u64, what: &str, value: f64, comps: &Components, batch: &Batch<T>) -> Error {
    let stats = |t: &Tensor<T>| {
        let d: Vec<f64> = t.data().iter().map(|v| v.f64()).collect();
        let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        format!("[{lo:.4}, {hi:.4}] mean {:.4}", d.iter().sum::<f64>() / d.len().max(1) as f64)
    };
    Error::NonFinite {
        step,
        detail: format!(
            "{what} = {value}; components {:?}; batch x {} y {}",
            comps.named(),
            stats(&batch.x_in),
            stats(&batch.y_in)
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Counts, Family, SyntheticDomainPair};

    fn setup() -> (ExperimentConfig, TrainState<f64>, Batch<f64>) {
        let cfg = ExperimentConfig::preset("1,4").unwrap();
        let ds = SyntheticDomainPair::new(Family::StripesCheckers, 32, Counts::new(1, 1, 0, 0), 3)
            .build::<f64>()
            .unwrap();
        let batch = Batch::new(&ds.train_a[0], &ds.train_b[0], &cfg).unwrap();
        (cfg.clone(), TrainState::new(&cfg).unwrap(), batch)
    }

    #[test]
    fn discriminator_pass_leaves_generator_grads_zero() {
        let (cfg, st, batch) = setup();
        let gp = st.generator_pass(&batch, &cfg).unwrap();
        let ld = st
            .discriminator_loss(&batch, &gp.fake_a.detach(), &gp.fake_b.detach(), cfg.adv_form)
            .unwrap();
        ld.backward().unwrap();
        for t in st.g_ab.params.tensors().iter().chain(st.g_ba.params.tensors()) {
            assert!(t.grad().is_none_or(|g| g.iter().all(|v| *v == 0.0)));
        }
        let touched = st.d_a.params.tensors().iter().filter(|t| t.grad().is_some()).count();
        assert_eq!(touched, st.d_a.params.len());
    }

    #[test]
    fn generator_pass_leaves_discriminator_grads_zero() {
        let (cfg, st, batch) = setup();
        st.generator_pass(&batch, &cfg).unwrap().loss.backward().unwrap();
        for t in st.d_a.params.tensors().iter().chain(st.d_b.params.tensors()) {
            assert!(t.grad().is_none_or(|g| g.iter().all(|v| *v == 0.0)));
        }
        assert!(st.g_ab.params.tensors().iter().all(|t| t.grad().is_some()));
    }

    #[test]
    fn step_rng_depends_only_on_seed_and_step() {
        let draw = |s, k| step_rng(s, k).random::<u64>();
        assert_eq!(draw(1, 5), draw(1, 5));
        assert_ne!(draw(1, 5), draw(1, 6));
        assert_ne!(draw(1, 5), draw(2, 5));
    }

    #[test]
    fn replay_pool_fills_then_swaps() {
        let mut pool = Vec::new();
        let mut rng = step_rng(0, 0);
        for i in 0..3 {
            let out = TrainState::<f64>::replay(&mut pool, Tensor::scalar(i as f64), 3, &mut rng);
            assert_eq!(out.item(), i as f64);
        }
        assert_eq!(pool.len(), 3);
        let mut seen_old = false;
        for i in 3..40 {
            let out = TrainState::<f64>::replay(&mut pool, Tensor::scalar(i as f64), 3, &mut rng);
            seen_old |= out.item() < i as f64;
            assert_eq!(pool.len(), 3);
        }
        assert!(seen_old);
    }
}
