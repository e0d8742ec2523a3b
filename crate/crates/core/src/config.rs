//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Every key has a default (see [`KEYS`]) and unknown keys are
//! rejected. The model and noise settings are also written into checkpoints
//! as `config.*` entries so that sampling commands rebuild the same network.

use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::{Array, Params};
use crate::metrics::Aggregation;
use crate::objectives::{LossWeights, TrainConfig};
use crate::pipeline::SampleConfig;
use crate::scorenets::{ModelConfig, ScoreError};
use crate::sde::{NoiseSchedule, SdeKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("checkpoint entry {0} missing or malformed")]
    Checkpoint(String),
}

/// Every key with its default and a short description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "0",
        "run seed; train and sample commands require it on the command line",
    ),
    ("sde.kind", "ve", "ve or vp"),
    ("sde.sigma_min", "0.01", "VE smallest noise std"),
    ("sde.sigma_max", "10", "VE largest noise std"),
    ("sde.beta_min", "0.1", "VP beta at t = 0"),
    ("sde.beta_max", "10", "VP beta at t = 1"),
    ("sde.steps", "250", "reverse-time discretization steps"),
    ("model.hidden", "64", "hidden width D"),
    ("model.layers", "3", "encoder and graph convolution layers"),
    (
        "model.attn_layers",
        "2",
        "edge attention layers of the coordinate score",
    ),
    ("model.time_freqs", "16", "sinusoidal time frequencies"),
    ("model.rbf_centers", "32", "radial basis centers"),
    ("model.rbf_cutoff", "10", "largest radial basis center in Å"),
    ("model.rbf_gamma", "10", "radial basis width parameter"),
    ("model.cutoff", "10", "neighbor cutoff in Å"),
    ("model.geom_data_std", "2", "coordinate data scale in Å"),
    ("model.topo_data_std", "0.5", "atom/bond one-hot data scale"),
    ("train.epochs", "20", "passes over the corpus"),
    ("train.batch_size", "16", "molecules per step"),
    ("train.lr", "0.003", "Adam learning rate"),
    (
        "train.cosine_decay",
        "true",
        "anneal the learning rate to zero along a half cosine",
    ),
    (
        "train.max_steps",
        "0",
        "stop after this many steps; 0 for no limit",
    ),
    (
        "train.mask_ratio",
        "0",
        "fraction of atoms masked in each view",
    ),
    ("train.t_eps", "0.001", "smallest training time"),
    (
        "train.alpha_contrastive",
        "1",
        "weight of the contrastive loss",
    ),
    (
        "train.alpha_2d3d",
        "1",
        "weight of the coordinate denoising loss",
    ),
    (
        "train.alpha_3d2d",
        "1",
        "weight of the atom/bond denoising loss",
    ),
    (
        "sample.per_molecule",
        "1",
        "conformations drawn per topology",
    ),
    (
        "sample.corrector_steps",
        "1",
        "Langevin steps per predictor step",
    ),
    (
        "sample.step_scale",
        "0.1",
        "Langevin step size relative to s(t)",
    ),
    ("sample.batch_size", "32", "chains scored per network call"),
    ("eval.threshold", "0.5", "coverage RMSD threshold in Å"),
    ("eval.aggregate", "mean", "mean or median over molecules"),
    ("paths.corpus", "", "input corpus"),
    ("paths.checkpoint", "", "checkpoint to write or read"),
    ("paths.loss_csv", "", "loss curve output"),
    ("paths.output", "", "generated corpus or report output"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sched: NoiseSchedule,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub vp: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub per_molecule: usize,
    pub threshold: f64,
    pub aggregate: Aggregation,
    pub corpus: Option<String>,
    pub checkpoint: Option<String>,
    pub loss_csv: Option<String>,
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            sched: NoiseSchedule::default(),
            sigma_min: 0.0,
            sigma_max: 0.0,
            beta_min: 0.0,
            beta_max: 0.0,
            vp: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            per_molecule: 0,
            threshold: 0.0,
            aggregate: Aggregation::Mean,
            corpus: None,
            checkpoint: None,
            loss_csv: None,
            output: None,
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("defaults parse");
        }
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: e.to_string(),
        })
}

fn path(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

impl RunConfig {
    /// Sets one key from its textual value. The schedule is rebuilt but not
    /// validated; call [`RunConfig::validate`] once all keys are set.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "sde.kind" => {
                self.vp = match value {
                    "ve" => false,
                    "vp" => true,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected ve or vp".into(),
                        })
                    }
                }
            }
            "sde.sigma_min" => self.sigma_min = parse(key, value)?,
            "sde.sigma_max" => self.sigma_max = parse(key, value)?,
            "sde.beta_min" => self.beta_min = parse(key, value)?,
            "sde.beta_max" => self.beta_max = parse(key, value)?,
            "sde.steps" => self.sched.steps = parse(key, value)?,
            "model.hidden" => self.model.hidden = parse(key, value)?,
            "model.layers" => self.model.layers = parse(key, value)?,
            "model.attn_layers" => self.model.attn_layers = parse(key, value)?,
            "model.time_freqs" => self.model.time_freqs = parse(key, value)?,
            "model.rbf_centers" => self.model.rbf.centers = parse(key, value)?,
            "model.rbf_gamma" => self.model.rbf.gamma = parse(key, value)?,
            "model.cutoff" => self.model.cutoff = parse(key, value)?,
            "model.rbf_cutoff" => self.model.rbf.cutoff = parse(key, value)?,
            "model.geom_data_std" => self.model.geom_data_std = parse(key, value)?,
            "model.topo_data_std" => self.model.topo_data_std = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.cosine_decay" => self.train.cosine_decay = parse(key, value)?,
            "train.max_steps" => self.train.max_steps = parse(key, value)?,
            "train.mask_ratio" => self.train.mask_ratio = parse(key, value)?,
            "train.t_eps" => self.train.t_eps = parse(key, value)?,
            "train.alpha_contrastive" => self.train.weights.contrastive = parse(key, value)?,
            "train.alpha_2d3d" => self.train.weights.geom = parse(key, value)?,
            "train.alpha_3d2d" => self.train.weights.topo = parse(key, value)?,
            "sample.per_molecule" => self.per_molecule = parse(key, value)?,
            "sample.corrector_steps" => self.sample.pc.corrector_steps = parse(key, value)?,
            "sample.step_scale" => self.sample.pc.step_scale = parse(key, value)?,
            "sample.batch_size" => self.sample.batch_size = parse(key, value)?,
            "eval.threshold" => self.threshold = parse(key, value)?,
            "eval.aggregate" => self.aggregate = parse(key, value)?,
            "paths.corpus" => self.corpus = path(value),
            "paths.checkpoint" => self.checkpoint = path(value),
            "paths.loss_csv" => self.loss_csv = path(value),
            "paths.output" => self.output = path(value),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        self.sched.kind = if self.vp {
            SdeKind::Vp {
                beta_min: self.beta_min,
                beta_max: self.beta_max,
            }
        } else {
            SdeKind::Ve {
                sigma_min: self.sigma_min,
                sigma_max: self.sigma_max,
            }
        };
        Ok(())
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_lines(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Checks every section; the message names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sched
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("sde: {e}")))?;
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        LossWeights::new(
            self.train.weights.contrastive,
            self.train.weights.geom,
            self.train.weights.topo,
        )
        .map_err(|e| ConfigError::Invalid(format!("train.alpha_*: {e}")))?;
        if self.sample.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "sample.batch_size must be positive".into(),
            ));
        }
        if self.per_molecule == 0 {
            return Err(ConfigError::Invalid(
                "sample.per_molecule must be positive".into(),
            ));
        }
        if !(self.sample.pc.step_scale >= 0.0 && self.sample.pc.step_scale.is_finite()) {
            return Err(ConfigError::Invalid(
                "sample.step_scale must be non-negative".into(),
            ));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(ConfigError::Invalid(
                "eval.threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Renders every key with its current value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    /// Current value of `key` in textual form.
    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |p: &Option<String>| p.clone().unwrap_or_default();
        Some(match key {
            "seed" => self.seed.to_string(),
            "sde.kind" => if self.vp { "vp" } else { "ve" }.into(),
            "sde.sigma_min" => self.sigma_min.to_string(),
            "sde.sigma_max" => self.sigma_max.to_string(),
            "sde.beta_min" => self.beta_min.to_string(),
            "sde.beta_max" => self.beta_max.to_string(),
            "sde.steps" => self.sched.steps.to_string(),
            "model.hidden" => self.model.hidden.to_string(),
            "model.layers" => self.model.layers.to_string(),
            "model.attn_layers" => self.model.attn_layers.to_string(),
            "model.time_freqs" => self.model.time_freqs.to_string(),
            "model.rbf_centers" => self.model.rbf.centers.to_string(),
            "model.rbf_gamma" => self.model.rbf.gamma.to_string(),
            "model.cutoff" => self.model.cutoff.to_string(),
            "model.rbf_cutoff" => self.model.rbf.cutoff.to_string(),
            "model.geom_data_std" => self.model.geom_data_std.to_string(),
            "model.topo_data_std" => self.model.topo_data_std.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.cosine_decay" => self.train.cosine_decay.to_string(),
            "train.max_steps" => self.train.max_steps.to_string(),
            "train.mask_ratio" => self.train.mask_ratio.to_string(),
            "train.t_eps" => self.train.t_eps.to_string(),
            "train.alpha_contrastive" => self.train.weights.contrastive.to_string(),
            "train.alpha_2d3d" => self.train.weights.geom.to_string(),
            "train.alpha_3d2d" => self.train.weights.topo.to_string(),
            "sample.per_molecule" => self.per_molecule.to_string(),
            "sample.corrector_steps" => self.sample.pc.corrector_steps.to_string(),
            "sample.step_scale" => self.sample.pc.step_scale.to_string(),
            "sample.batch_size" => self.sample.batch_size.to_string(),
            "eval.threshold" => self.threshold.to_string(),
            "eval.aggregate" => match self.aggregate {
                Aggregation::Mean => "mean".into(),
                Aggregation::Median => "median".into(),
            },
            "paths.corpus" => opt(&self.corpus),
            "paths.checkpoint" => opt(&self.checkpoint),
            "paths.loss_csv" => opt(&self.loss_csv),
            "paths.output" => opt(&self.output),
            _ => return None,
        })
    }
}

/// Splits configuration text into `(key, value)` pairs in file order.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: k + 1 });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: k + 1 });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Checkpoint keys holding the network and noise settings. The number of
/// sampling steps is left to the caller.
const STORED: &[&str] = &[
    "sde.kind",
    "sde.sigma_min",
    "sde.sigma_max",
    "sde.beta_min",
    "sde.beta_max",
    "model.hidden",
    "model.layers",
    "model.attn_layers",
    "model.time_freqs",
    "model.rbf_centers",
    "model.rbf_gamma",
    "model.cutoff",
    "model.rbf_cutoff",
    "model.geom_data_std",
    "model.topo_data_std",
];

/// Adds `config.<key>` scalar entries for the model and schedule settings.
pub fn store_in_params(cfg: &RunConfig, params: &mut Params) {
    for key in STORED {
        let v = if *key == "sde.kind" {
            f64::from(u8::from(cfg.vp))
        } else {
            cfg.get(key)
                .expect("stored key")
                .parse()
                .expect("numeric key")
        };
        params.insert(format!("config.{key}"), Array::scalar(v));
    }
}

/// Reads the stored model and schedule settings into `cfg` and returns the
/// network parameters without the `config.*` entries.
pub fn load_from_params(cfg: &mut RunConfig, mut params: Params) -> Result<Params, ConfigError> {
    for key in STORED {
        let name = format!("config.{key}");
        let v = params
            .remove(&name)
            .and_then(|a| a.item())
            .ok_or_else(|| ConfigError::Checkpoint(name.clone()))?;
        let text = match *key {
            "sde.kind" if v == 0.0 => "ve".to_string(),
            "sde.kind" if v == 1.0 => "vp".to_string(),
            "sde.kind" => return Err(ConfigError::Checkpoint(name)),
            _ if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
            _ => v.to_string(),
        };
        cfg.set(key, &text)?;
    }
    crate::scorenets::check_params(&cfg.model, &params)
        .map_err(|e: ScoreError| ConfigError::Invalid(e.to_string()))?;
    Ok(params)
}
