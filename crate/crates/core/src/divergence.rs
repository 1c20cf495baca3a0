//! Statistical distances between representations, and the cycle losses
//! built from them.
//!
//! Probability-vector divergences are reported in bits. Every tensor-level
//! function reduces to a rank-0 tensor (mean over all leading axes) and is
//! differentiable in both operands.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqrep::{FdSpec, FreqRepr, ReprTensor, SIGMA_FLOOR};
use crate::scalar::Scalar;
use crate::tensor::{OpKind, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Allowed deviation of an input probability vector's sum from one.
pub const NORMALIZATION_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[serde(alias = "L1")]
    L1,
    #[serde(alias = "KLD")]
    Kld,
    #[serde(alias = "JSD")]
    Jsd,
    #[serde(alias = "LOG")]
    Log,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "kl" | "kld" => Ok(Metric::Kld),
            "js" | "jsd" => Ok(Metric::Jsd),
            "log" => Ok(Metric::Log),
            _ => Err(Error::Config(format!("unknown metric {s:?} (l1, kld, jsd, log)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::Kld => "kld",
            Metric::Jsd => "jsd",
            Metric::Log => "log",
        }
    }

    /// Whether values come out in bits.
    pub fn in_bits(self) -> bool {
        matches!(self, Metric::Kld | Metric::Jsd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceKind {
    pub metric: Metric,
    pub epsilon: f64,
}

impl DistanceKind {
    pub fn new(metric: Metric) -> Self {
        DistanceKind {
            metric,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1e-3], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// One frequency-distribution term of the cycle loss with its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdTerm {
    pub spec: FdSpec,
    pub coeff: f64,
}

fn bins_of<T: Scalar>(op: &'static str, p: &Tensor<T>, q: &Tensor<T>) -> Result<usize> {
    if p.shape() != q.shape() {
        return Err(Error::shape(op, p.shape(), q.shape()));
    }
    match p.shape().last() {
        Some(&b) if b >= 2 => Ok(b),
        _ => Err(Error::shape(op, p.shape(), &[2])),
    }
}

fn check_normalized<T: Scalar>(op: &'static str, t: &Tensor<T>, bins: usize) -> Result<()> {
    for v in t.data().chunks(bins) {
        let s: f64 = v.iter().map(|x| x.f64()).sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL || v.iter().any(|x| x.f64() < -NORMALIZATION_TOL) {
            return Err(Error::Contract(format!(
                "{op}: input is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Smoothed copies in f64: `(p + eps) / (1 + B eps)`.
fn smooth<T: Scalar>(t: &Tensor<T>, bins: usize, eps: f64) -> Vec<f64> {
    let z = 1.0 + bins as f64 * eps;
    t.data().iter().map(|v| (v.f64().max(0.0) + eps) / z).collect()
}

/// `KL(P || Q)` in bits over the last axis, averaged over all other axes.
pub fn kl_tensor<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let bins = bins_of("kl", p, q)?;
    check_normalized("kl", p, bins)?;
    check_normalized("kl", q, bins)?;
    let (ps, qs) = (smooth(p, bins, eps), smooth(q, bins, eps));
    let nvec = (p.numel() / bins) as f64;
    let norm = 1.0 / (nvec * LN_2);
    let value: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum::<f64>() * norm;
    let z = 1.0 + bins as f64 * eps;
    Ok(Tensor::from_op(
        OpKind::Custom("kl"),
        vec![],
        vec![T::of(value)],
        vec![p.clone(), q.clone()],
        move |a| {
            let g = a.grad[0].f64() * norm / z;
            let gp = a.needs(0).then(|| {
                ps.iter()
                    .zip(&qs)
                    .map(|(x, y)| T::of(g * ((x / y).ln() + 1.0)))
                    .collect()
            });
            let gq = a.needs(1).then(|| ps.iter().zip(&qs).map(|(x, y)| T::of(-g * x / y)).collect());
            vec![gp, gq]
        },
    ))
}

/// Jensen-Shannon divergence in bits, bounded by one.
pub fn jsd_tensor<T: Scalar>(p: &Tensor<T>, q: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let bins = bins_of("jsd", p, q)?;
    check_normalized("jsd", p, bins)?;
    check_normalized("jsd", q, bins)?;
    let (ps, qs) = (smooth(p, bins, eps), smooth(q, bins, eps));
    let nvec = (p.numel() / bins) as f64;
    let norm = 1.0 / (nvec * LN_2);
    let value: f64 = ps
        .iter()
        .zip(&qs)
        .map(|(a, b)| {
            let m = 0.5 * (a + b);
            0.5 * a * (a / m).ln() + 0.5 * b * (b / m).ln()
        })
        .sum::<f64>()
        * norm;
    let z = 1.0 + bins as f64 * eps;
    Ok(Tensor::from_op(
        OpKind::Custom("jsd"),
        vec![],
        vec![T::of(value)],
        vec![p.clone(), q.clone()],
        move |a| {
            let g = 0.5 * a.grad[0].f64() * norm / z;
            let side = |own: &[f64], other: &[f64]| -> Vec<T> {
                own.iter()
                    .zip(other)
                    .map(|(x, y)| T::of(g * (2.0 * x / (x + y)).ln()))
                    .collect()
            };
            vec![
                a.needs(0).then(|| side(&ps, &qs)),
                a.needs(1).then(|| side(&qs, &ps)),
            ]
        },
    ))
}

fn check_sigma<T: Scalar>(s: &Tensor<T>) -> Result<()> {
    // Tolerate rounding of a floored value in low precision.
    let min = SIGMA_FLOOR * (1.0 - 1e-5);
    match s.data().iter().find(|v| !(v.f64() >= min)) {
        Some(v) => Err(Error::Contract(format!("sigma {v} below floor {SIGMA_FLOOR}"))),
        None => Ok(()),
    }
}

/// Closed-form `KL(N(mu1, s1^2) || N(mu2, s2^2))` in bits, averaged
/// elementwise.
pub fn gaussian_kl_tensor<T: Scalar>(
    mu1: &Tensor<T>,
    s1: &Tensor<T>,
    mu2: &Tensor<T>,
    s2: &Tensor<T>,
) -> Result<Tensor<T>> {
    for t in [s1, mu2, s2] {
        if t.shape() != mu1.shape() {
            return Err(Error::shape("gaussian_kl", mu1.shape(), t.shape()));
        }
    }
    check_sigma(s1)?;
    check_sigma(s2)?;
    let n = mu1.numel().max(1) as f64;
    let norm = 1.0 / (n * LN_2);
    let terms = |i: usize, d: [&[T]; 4]| -> [f64; 4] {
        [d[0][i].f64(), d[1][i].f64(), d[2][i].f64(), d[3][i].f64()]
    };
    let data = [mu1.data(), s1.data(), mu2.data(), s2.data()];
    let value: f64 = (0..mu1.numel())
        .map(|i| {
            let [m1, a, m2, b] = terms(i, data);
            (b / a).ln() + (a * a + (m1 - m2).powi(2)) / (2.0 * b * b) - 0.5
        })
        .sum::<f64>()
        * norm;
    Ok(Tensor::from_op(
        OpKind::Custom("gaussian_kl"),
        vec![],
        vec![T::of(value)],
        vec![mu1.clone(), s1.clone(), mu2.clone(), s2.clone()],
        move |a| {
            let g = a.grad[0].f64() * norm;
            let d = [a.inputs[0].data(), a.inputs[1].data(), a.inputs[2].data(), a.inputs[3].data()];
            let n = d[0].len();
            let mut out: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
            for i in 0..n {
                let [m1, s1, m2, s2] = terms(i, d);
                let diff = m1 - m2;
                let v2 = s2 * s2;
                out[0].push(T::of(g * diff / v2));
                out[1].push(T::of(g * (s1 / v2 - 1.0 / s1)));
                out[2].push(T::of(-g * diff / v2));
                out[3].push(T::of(g * (1.0 / s2 - (s1 * s1 + diff * diff) / (v2 * s2))));
            }
            out.into_iter()
                .enumerate()
                .map(|(i, v)| a.needs(i).then_some(v))
                .collect()
        },
    ))
}

/// Jensen-Shannon between two Gaussians through the moment-matched mixture
/// `N((mu1+mu2)/2, (s1^2+s2^2)/2 + ((mu1-mu2)/2)^2)`. Not bounded by one.
pub fn gaussian_jsd_tensor<T: Scalar>(
    mu1: &Tensor<T>,
    s1: &Tensor<T>,
    mu2: &Tensor<T>,
    s2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mm = mu1.add(mu2)?.scale(0.5);
    let half_diff = mu1.sub(mu2)?.scale(0.5);
    let var = s1
        .mul(s1)?
        .add(&s2.mul(s2)?)?
        .scale(0.5)
        .add(&half_diff.mul(&half_diff)?)?;
    let sm = var.sqrt()?;
    let a = gaussian_kl_tensor(mu1, s1, &mm, &sm)?;
    let b = gaussian_kl_tensor(mu2, s2, &mm, &sm)?;
    Ok(a.add(&b)?.scale(0.5))
}

/// Binary cross-entropy (natural log) of `rec` against `real`, both in
/// `[0, 1]`; `rec` is clamped to `[eps, 1 - eps]`.
pub fn log_loss_tensor<T: Scalar>(real: &Tensor<T>, rec: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if real.shape() != rec.shape() {
        return Err(Error::shape("log_loss", real.shape(), rec.shape()));
    }
    let n = real.numel().max(1) as f64;
    let clampv = move |v: f64| v.clamp(eps, 1.0 - eps);
    let value: f64 = real
        .data()
        .iter()
        .zip(rec.data())
        .map(|(x, r)| {
            let (x, r) = (x.f64(), clampv(r.f64()));
            -x * r.ln() - (1.0 - x) * (1.0 - r).ln()
        })
        .sum::<f64>()
        / n;
    Ok(Tensor::from_op(
        OpKind::Custom("log_loss"),
        vec![],
        vec![T::of(value)],
        vec![real.clone(), rec.clone()],
        move |a| {
            let g = a.grad[0].f64() / n;
            let (xs, rs) = (a.inputs[0].data(), a.inputs[1].data());
            let greal = a.needs(0).then(|| {
                rs.iter()
                    .map(|r| {
                        let r = clampv(r.f64());
                        T::of(g * ((1.0 - r).ln() - r.ln()))
                    })
                    .collect()
            });
            let grec = a.needs(1).then(|| {
                xs.iter()
                    .zip(rs)
                    .map(|(x, r)| {
                        let (x, r) = (x.f64(), r.f64());
                        if r < eps || r > 1.0 - eps {
                            T::zero()
                        } else {
                            T::of(g * (-x / r + (1.0 - x) / (1.0 - r)))
                        }
                    })
                    .collect()
            });
            vec![greal, grec]
        },
    ))
}

/// Mean absolute difference.
pub fn l1_tensor<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(a.sub(b)?.abs().mean())
}

/// Maps `[-1, 1]` to `[0, 1]`.
pub fn to_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.add_scalar(1.0).scale(0.5)
}

/// Each pixel as a Bernoulli distribution `(u, 1 - u)` with `u = (x+1)/2`,
/// laid out with a trailing axis of two.
pub fn pixel_bernoulli<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let u = to_unit(x).clamp(0.0, 1.0);
    let mut shape = x.shape().to_vec();
    shape.push(1);
    let u = u.reshape(&shape)?;
    let v = u.scale(-1.0).add_scalar(1.0);
    let axis = shape.len() - 1;
    Tensor::concat(&[u, v], axis)
}

/// Distance between two images in `[-1, 1]` under `kind`: L1, log loss on
/// the unit rescaling, or KL/JS between per-pixel Bernoulli views.
pub fn pixel_distance<T: Scalar>(real: &Tensor<T>, rec: &Tensor<T>, kind: &DistanceKind) -> Result<Tensor<T>> {
    kind.validate()?;
    match kind.metric {
        Metric::L1 => l1_tensor(real, rec),
        Metric::Log => log_loss_tensor(&to_unit(real), &to_unit(rec), kind.epsilon),
        Metric::Kld => kl_tensor(&pixel_bernoulli(real)?, &pixel_bernoulli(rec)?, kind.epsilon),
        Metric::Jsd => jsd_tensor(&pixel_bernoulli(real)?, &pixel_bernoulli(rec)?, kind.epsilon),
    }
}

/// `StD(real || rec)` between two representations of the same kind.
pub fn repr_distance<T: Scalar>(real: &ReprTensor<T>, rec: &ReprTensor<T>, kind: &DistanceKind) -> Result<Tensor<T>> {
    kind.validate()?;
    match (real, rec) {
        (ReprTensor::Probs(p), ReprTensor::Probs(q)) => match kind.metric {
            Metric::Kld => kl_tensor(p, q, kind.epsilon),
            Metric::Jsd => jsd_tensor(p, q, kind.epsilon),
            Metric::Log => log_loss_tensor(p, q, kind.epsilon),
            Metric::L1 => l1_tensor(p, q),
        },
        (ReprTensor::Gaussian { mu: m1, sigma: s1 }, ReprTensor::Gaussian { mu: m2, sigma: s2 }) => {
            match kind.metric {
                Metric::Kld => gaussian_kl_tensor(m1, s1, m2, s2),
                Metric::Jsd => gaussian_jsd_tensor(m1, s1, m2, s2),
                Metric::Log => {
                    let a = log_loss_tensor(&to_unit(m1), &to_unit(m2), kind.epsilon)?;
                    let b = log_loss_tensor(s1, s2, kind.epsilon)?;
                    Ok(a.add(&b)?.scale(0.5))
                }
                Metric::L1 => Ok(l1_tensor(m1, m2)?.add(&l1_tensor(s1, s2)?)?.scale(0.5)),
            }
        }
        _ => Err(Error::Contract("representations of different kinds".into())),
    }
}

/// Frequency-distribution cycle loss over both cycles:
/// `sum_f coeff_f * (StD(f(realX) || f(recX)) + StD(f(realY) || f(recY)))`.
///
/// With no terms, L1 and LOG fall back to the pixel-space loss; the
/// divergences need a distribution and are rejected.
pub fn cycle_divergence_loss<T: Scalar>(
    real_x: &Tensor<T>,
    rec_x: &Tensor<T>,
    real_y: &Tensor<T>,
    rec_y: &Tensor<T>,
    terms: &[FdTerm],
    kind: &DistanceKind,
) -> Result<Tensor<T>> {
    if terms.is_empty() {
        return match kind.metric {
            Metric::L1 | Metric::Log => {
                Ok(pixel_distance(real_x, rec_x, kind)?.add(&pixel_distance(real_y, rec_y, kind)?)?)
            }
            m => Err(Error::Config(format!(
                "metric {} needs at least one frequency function",
                m.name()
            ))),
        };
    }
    let mut total: Option<Tensor<T>> = None;
    for term in terms {
        let t = fd_term_loss(real_x, rec_x, real_y, rec_y, &term.spec, kind)?.scale(term.coeff);
        total = Some(match total {
            None => t,
            Some(acc) => acc.add(&t)?,
        });
    }
    Ok(total.expect("terms is nonempty"))
}

/// Unweighted two-cycle distance for one representation.
pub fn fd_term_loss<T: Scalar>(
    real_x: &Tensor<T>,
    rec_x: &Tensor<T>,
    real_y: &Tensor<T>,
    rec_y: &Tensor<T>,
    spec: &FdSpec,
    kind: &DistanceKind,
) -> Result<Tensor<T>> {
    let dx = repr_distance(&spec.represent(real_x)?, &spec.represent(rec_x)?, kind)?;
    let dy = repr_distance(&spec.represent(real_y)?, &spec.represent(rec_y)?, kind)?;
    dx.add(&dy)
}

/// Distance between two detached representations (e.g. hard histograms).
pub fn freq_repr_distance(a: &FreqRepr<f64>, b: &FreqRepr<f64>, kind: &DistanceKind) -> Result<f64> {
    if a.kind != b.kind || a.shape != b.shape {
        return Err(Error::shape("freq_repr_distance", &a.shape, &b.shape));
    }
    let to_repr = |r: &FreqRepr<f64>| -> Result<ReprTensor<f64>> {
        if r.kind == crate::freqrep::FdKind::GaussianLocal {
            let shape = &r.shape[..r.shape.len() - 1];
            Ok(ReprTensor::Gaussian {
                mu: Tensor::new(shape, r.mu())?,
                sigma: Tensor::new(shape, r.sigma())?,
            })
        } else {
            Ok(ReprTensor::Probs(Tensor::new(&r.shape, r.values.clone())?))
        }
    };
    Ok(repr_distance(&to_repr(a)?, &to_repr(b)?, kind)?.item())
}

fn vectors(op: &'static str, p: &[f64], q: &[f64], bins: usize) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if p.len() != q.len() || bins < 2 || p.len() % bins != 0 {
        return Err(Error::shape(op, &[p.len()], &[q.len()]));
    }
    let shape = [p.len() / bins, bins];
    Ok((Tensor::new(&shape, p.to_vec())?, Tensor::new(&shape, q.to_vec())?))
}

/// `KL(P || Q)` in bits for flat arrays of `bins`-long probability vectors.
pub fn kl(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    let (p, q) = vectors("kl", p, q, bins)?;
    Ok(kl_tensor(&p, &q, DEFAULT_EPSILON)?.item())
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    let (p, q) = vectors("jsd", p, q, bins)?;
    Ok(jsd_tensor(&p, &q, DEFAULT_EPSILON)?.item())
}

/// Closed-form Gaussian KL in bits for a single parameter pair.
pub fn gaussian_kl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    let t = |v| Tensor::new(&[1], vec![v]);
    Ok(gaussian_kl_tensor(&t(mu1)?, &t(sigma1)?, &t(mu2)?, &t(sigma2)?)?.item())
}

/// Log loss of `rec` against `real`, both already in `[0, 1]`.
pub fn log_loss(real: &[f64], rec: &[f64], eps: f64) -> Result<f64> {
    let real_t = Tensor::new(&[real.len()], real.to_vec())?;
    let rec_t = Tensor::new(&[rec.len()], rec.to_vec())
        .map_err(|_| Error::shape("log_loss", &[real.len()], &[rec.len()]))?;
    Ok(log_loss_tensor(&real_t, &rec_t, eps)?.item())
}
