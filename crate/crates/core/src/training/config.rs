use serde::{Deserialize, Serialize};

use crate::divergence::{DistanceKind, FdTerm, Metric, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::freqrep::{FdKind, FdSpec, DEFAULT_BINS, DEFAULT_PATCH, DEFAULT_TAU};
use crate::lne::{LneConfig, SigmaMode};
use crate::models::{PresetName, ScalePreset};
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvForm {
    /// Cross-entropy on logits; the generator uses the non-saturating form.
    Log,
    Lsgan,
}

/// Row names of the experiment matrix, in table order.
pub const PRESET_NAMES: [&str; 13] = [
    "Or", "Or_wt", "1,log", "1,4", "1,4,log", "1,4,L1", "2,4", "3,4", "log", "log_k3_wt", "log_k5_wt", "kld", "jsd",
];

/// One experiment. Serialized as a flat TOML table whose keys are the field
/// names; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Frequency functions, ids 1..=5.
    pub fd_ids: Vec<u8>,
    pub loss: Metric,
    /// LNE window and local frequency-function window.
    pub kernel: usize,
    /// Feed LNE-encoded images to the generators.
    pub wt_image: bool,
    /// 1 keeps the pixel L1 cycle term; 0 replaces it by the `loss` metric.
    pub cycleloss_flag: u8,
    pub advloss_flag: u8,
    pub patchsize: usize,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    /// Weight of each frequency function, indexed by id - 1.
    pub fd_coeffs: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub preset: PresetName,
    pub image_size: usize,
    pub bins: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub lne_sigma: f64,
    pub lne_sigma_mode: SigmaMode,
    pub adv_form: AdvForm,
    pub replay_buffer: bool,
    pub replay_size: usize,
    /// Checkpoint period in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Evaluation period in steps; 0 evaluates only at start and end.
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "Or".into(),
            fd_ids: Vec::new(),
            loss: Metric::L1,
            kernel: 3,
            wt_image: false,
            cycleloss_flag: 1,
            advloss_flag: 1,
            patchsize: DEFAULT_PATCH,
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            fd_coeffs: vec![1.0; 5],
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 1,
            steps_per_epoch: 2000,
            seed: 0,
            preset: PresetName::Toy,
            image_size: 32,
            bins: DEFAULT_BINS,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            lne_sigma: 0.3,
            lne_sigma_mode: SigmaMode::Fixed,
            adv_form: AdvForm::Log,
            replay_buffer: false,
            replay_size: 50,
            checkpoint_every: 500,
            eval_every: 500,
        }
    }
}

impl ExperimentConfig {
    /// The named row of the experiment matrix with default hyperparameters.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig {
            name: name.to_string(),
            ..Self::default()
        };
        let fd = |ids: &[u8], loss| ExperimentConfig {
            fd_ids: ids.to_vec(),
            loss,
            ..base.clone()
        };
        let replace = |loss, kernel, wt| ExperimentConfig {
            loss,
            kernel,
            wt_image: wt,
            cycleloss_flag: 0,
            ..base.clone()
        };
        Ok(match name {
            "Or" => base.clone(),
            "Or_wt" => ExperimentConfig {
                wt_image: true,
                ..base.clone()
            },
            "1,log" => fd(&[1], Metric::Log),
            "1,4" => fd(&[1, 4], Metric::Kld),
            "1,4,log" => fd(&[1, 4], Metric::Log),
            "1,4,L1" => fd(&[1, 4], Metric::L1),
            "2,4" => fd(&[2, 4], Metric::Kld),
            "3,4" => fd(&[3, 4], Metric::Kld),
            "log" => replace(Metric::Log, 3, false),
            "log_k3_wt" => replace(Metric::Log, 3, true),
            "log_k5_wt" => replace(Metric::Log, 5, true),
            "kld" => replace(Metric::Kld, 3, false),
            "jsd" => replace(Metric::Jsd, 3, false),
            _ => {
                return Err(Error::Config(format!(
                    "unknown experiment {name:?}; known: {}",
                    PRESET_NAMES.join(" ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.advloss_flag > 1 || self.cycleloss_flag > 1 {
            return bad("advloss_flag and cycleloss_flag must be 0 or 1".into());
        }
        if self.advloss_flag == 0 && self.cycleloss_flag == 0 {
            return bad("advloss_flag and cycleloss_flag cannot both be 0".into());
        }
        let mut seen = [false; 5];
        for &id in &self.fd_ids {
            FdKind::from_id(id)?;
            if std::mem::replace(&mut seen[id as usize - 1], true) {
                return bad(format!("frequency function {id} listed twice"));
            }
        }
        if !matches!(self.kernel, 3 | 5) {
            return bad(format!("kernel must be 3 or 5, got {}", self.kernel));
        }
        if self.fd_coeffs.len() != 5 || self.fd_coeffs.iter().any(|c| !c.is_finite()) {
            return bad("fd_coeffs must hold 5 finite values".into());
        }
        for (name, v) in [("lambda_cyc", self.lambda_cyc), ("lambda_id", self.lambda_id), ("lr", self.lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.replay_buffer && self.replay_size == 0 {
            return bad("replay_size must be positive when replay_buffer is on".into());
        }
        self.scale_preset()?;
        self.distance_kind().validate()?;
        self.lne_config().validate()?;
        for t in self.fd_terms()? {
            t.spec.validate()?;
        }
        Ok(())
    }

    pub fn scale_preset(&self) -> Result<ScalePreset> {
        let p = match self.preset {
            PresetName::Paper => ScalePreset {
                image_size: self.image_size,
                ..ScalePreset::paper()
            },
            PresetName::Toy => ScalePreset::toy(self.image_size)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn distance_kind(&self) -> DistanceKind {
        DistanceKind {
            metric: self.loss,
            epsilon: self.epsilon,
        }
    }

    pub fn lne_config(&self) -> LneConfig {
        LneConfig {
            kernel: self.kernel,
            sigma: self.lne_sigma,
            sigma_mode: self.lne_sigma_mode,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn fd_terms(&self) -> Result<Vec<FdTerm>> {
        self.fd_ids
            .iter()
            .map(|&id| {
                let kind = FdKind::from_id(id)?;
                Ok(FdTerm {
                    spec: FdSpec {
                        kind,
                        bins: self.bins,
                        kernel: self.kernel,
                        patch: self.patchsize,
                        tau: self.tau,
                    },
                    coeff: self.fd_coeffs.get(id as usize - 1).copied().unwrap_or(1.0),
                })
            })
            .collect()
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Whether `key` names a config field.
    pub fn has_field(key: &str) -> bool {
        match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t.contains_key(key),
            _ => false,
        }
    }

    /// Sets one field from its textual value. The value is read as TOML
    /// (`fd_ids=[1,4]`, `wt_image=true`) and falls back to a bare string
    /// (`loss=jsd`).
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        if !Self::has_field(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let toml::Value::Table(mut table) = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?
        else {
            unreachable!("config is a table")
        };
        // integers given where a float is expected, and vice versa
        let old = table.get(key).cloned();
        let value = match (old, parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), value);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }
}
