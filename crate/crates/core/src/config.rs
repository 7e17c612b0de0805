//! Run configuration.
//!
//! A configuration file holds `key = value` lines; `#` starts a comment.
//! Settings are applied in this order, later ones winning: built-in
//! defaults, the file, `PCREAL_*` environment variables (`PCREAL_TRAIN__STEPS`
//! sets `train.steps`), then explicit overrides. Unknown keys are errors that
//! name the key.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::Init;
use crate::pcgen::{DatasetSuite, ScanPattern};
use crate::train::TrainConfig;

pub const ENV_PREFIX: &str = "PCREAL_";

/// On-disk format of generated clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Bin,
    Ply,
}

impl CloudFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xyz" => Some(Self::Xyz),
            "bin" => Some(Self::Bin),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Xyz => "xyz",
            Self::Bin => "bin",
            Self::Ply => "ply",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub scan: ScanPattern,
    pub train: TrainConfig,
    /// Samples per dataset written by `generate`.
    pub generate_per_dataset: usize,
    pub generate_format: CloudFormat,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_sigmas: Vec<f64>,
    /// Clouds scored per noise level.
    pub sweep_clouds: usize,
    /// Generator name used by the noise sweep.
    pub sweep_generator: String,
    pub eval_factor: usize,
    pub eval_scans: usize,
    /// Dataset whose scans serve as up-sampling ground truth.
    pub eval_dataset: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            scan: ScanPattern::hdl64(),
            train: TrainConfig::default(),
            generate_per_dataset: 10,
            generate_format: CloudFormat::Bin,
            sweep_lambdas: vec![0.0, 0.1, 0.3, 1.0, 10.0],
            sweep_sigmas: vec![0.0, 0.1, 1.0, 3.0, 10.0],
            sweep_clouds: 100,
            sweep_generator: "sim_city".into(),
            eval_factor: 4,
            eval_scans: 50,
            eval_dataset: 0,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "seed",
    "scan.rows",
    "scan.cols",
    "scan.elevation_min_deg",
    "scan.elevation_max_deg",
    "scan.max_range",
    "train.steps",
    "train.batch_size",
    "train.eval_every",
    "train.eval_per_dataset",
    "train.init_seed",
    "train.init",
    "lr.base",
    "lr.warmup_steps",
    "lr.decay_rate",
    "lr.decay_steps",
    "model.q1",
    "model.q2",
    "model.k1",
    "model.k2",
    "model.level1_widths",
    "model.level2_widths",
    "model.head_hidden",
    "model.dropout",
    "model.lambda",
    "model.point_budget",
    "generate.per_dataset",
    "generate.format",
    "sweep.lambdas",
    "sweep.sigmas",
    "sweep.clouds",
    "sweep.generator",
    "eval.factor",
    "eval.scans",
    "eval.dataset",
];

fn floats(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |msg: &str| Error::InvalidValue {
            key: key.to_string(),
            msg: msg.to_string(),
        };
        let uint = || {
            value
                .parse::<u64>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        let usize_ = || {
            value
                .parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        match key {
            "seed" => self.seed = uint()?,
            "scan.rows" => self.scan.rows = usize_()?,
            "scan.cols" => self.scan.cols = usize_()?,
            "scan.elevation_min_deg" => self.scan.elevation_min = float()?.to_radians(),
            "scan.elevation_max_deg" => self.scan.elevation_max = float()?.to_radians(),
            "scan.max_range" => self.scan.max_range = float()?,
            "train.steps" => self.train.steps = uint()?,
            "train.batch_size" => self.train.batch_size = usize_()?,
            "train.eval_every" => self.train.eval_every = uint()?,
            "train.eval_per_dataset" => self.train.eval_per_dataset = usize_()?,
            "train.init_seed" => self.train.init_seed = uint()?,
            "train.init" => {
                self.train.init = match value {
                    "symmetric" => Init::Symmetric,
                    "random" => Init::Random,
                    _ => return Err(bad("expected `symmetric` or `random`")),
                }
            }
            "lr.base" => self.train.schedule.base = float()?,
            "lr.warmup_steps" => self.train.schedule.warmup_steps = uint()?,
            "lr.decay_rate" => self.train.schedule.decay_rate = float()?,
            "lr.decay_steps" => self.train.schedule.decay_steps = uint()?,
            "generate.per_dataset" => self.generate_per_dataset = usize_()?,
            "generate.format" => {
                self.generate_format =
                    CloudFormat::parse(value).ok_or_else(|| bad("expected `xyz`, `bin` or `ply`"))?
            }
            "sweep.lambdas" => {
                self.sweep_lambdas = floats(value).ok_or_else(|| bad("expected a list of numbers"))?
            }
            "sweep.sigmas" => {
                self.sweep_sigmas = floats(value).ok_or_else(|| bad("expected a list of numbers"))?
            }
            "sweep.clouds" => self.sweep_clouds = usize_()?,
            "sweep.generator" => self.sweep_generator = value.to_string(),
            "eval.factor" => self.eval_factor = usize_()?,
            "eval.scans" => self.eval_scans = usize_()?,
            "eval.dataset" => self.eval_dataset = usize_()?,
            _ => match key.strip_prefix("model.") {
                Some(k) if KEYS.contains(&key) => self.train.model.set(k, value)?,
                _ => return Err(Error::UnknownKey(key.to_string())),
            },
        }
        Ok(())
    }

    /// Apply `key = value` lines; errors carry the byte offset of the line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut offset = 0u64;
        for raw in text.split_inclusive('\n') {
            let at = offset;
            offset += raw.len() as u64;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::malformed("configuration", at, format!("expected key = value, got {line:?}"))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// Apply `PCREAL_*` variables from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v))
            })
            .collect();
        found.sort();
        for (k, v) in found {
            match self.set(&k, &v) {
                // Other tools share the prefix; only malformed values of
                // known keys are errors.
                Err(Error::UnknownKey(k)) => {
                    log::warn!("ignoring {ENV_PREFIX} variable for unknown key `{k}`")
                }
                r => r?,
            }
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::param(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()
    }

    /// The training configuration with the dataset suite built on the
    /// configured scan pattern and the run seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.suite = DatasetSuite::standard(self.scan.clone());
        t.seed = self.seed;
        t
    }

    /// Canonical text of every setting; [`Settings::apply_text`] on it
    /// reproduces `self`.
    pub fn to_kv(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("scan.rows", self.scan.rows.to_string());
        kv("scan.cols", self.scan.cols.to_string());
        kv(
            "scan.elevation_min_deg",
            self.scan.elevation_min.to_degrees().to_string(),
        );
        kv(
            "scan.elevation_max_deg",
            self.scan.elevation_max.to_degrees().to_string(),
        );
        kv("scan.max_range", self.scan.max_range.to_string());
        kv("train.steps", t.steps.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.eval_every", t.eval_every.to_string());
        kv("train.eval_per_dataset", t.eval_per_dataset.to_string());
        kv("train.init_seed", t.init_seed.to_string());
        kv(
            "train.init",
            match t.init {
                Init::Symmetric => "symmetric",
                Init::Random => "random",
            }
            .into(),
        );
        kv("lr.base", t.schedule.base.to_string());
        kv("lr.warmup_steps", t.schedule.warmup_steps.to_string());
        kv("lr.decay_rate", t.schedule.decay_rate.to_string());
        kv("lr.decay_steps", t.schedule.decay_steps.to_string());
        for line in t.model.to_kv().lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            if KEYS.contains(&format!("model.{k}").as_str()) {
                kv(&format!("model.{k}"), v.to_string());
            }
        }
        kv("generate.per_dataset", self.generate_per_dataset.to_string());
        kv("generate.format", self.generate_format.extension().into());
        kv("sweep.lambdas", list(&self.sweep_lambdas));
        kv("sweep.sigmas", list(&self.sweep_sigmas));
        kv("sweep.clouds", self.sweep_clouds.to_string());
        kv("sweep.generator", self.sweep_generator.clone());
        kv("eval.factor", self.eval_factor.to_string());
        kv("eval.scans", self.eval_scans.to_string());
        kv("eval.dataset", self.eval_dataset.to_string());
        s
    }

    /// Hex SHA-256 of [`Settings::to_kv`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }
}
