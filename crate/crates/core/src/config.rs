//! Flat key-value search configuration.
//!
//! Every key has a default. Keys may also be grouped under TOML section
//! headers; sections are merged into the top level before parsing, so
//! `[schedule]\nkind = "ets"` and `kind = "ets"` mean the same thing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bilevel::TrainerConfig;
use crate::data::{generate, planted_optimum_task_with, Dataset, PlantedConfig};
use crate::error::{Error, Result};
use crate::schedules::ScheduleConfig;
use crate::snsoftmax::{ScalePolicy, SoftmaxMode};
use crate::space::{NetConfig, SuperNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxKind {
    Plain,
    SnFixedS,
    SnStConst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// The planted-optimum task; fixes the cell to three nodes.
    Planted,
    /// Gaussian blobs.
    Blobs,
}

fn d_softmax() -> SoftmaxKind {
    SoftmaxKind::SnStConst
}
fn d_s() -> f64 {
    100.0
}
fn d_st() -> f64 {
    1.0
}
fn d_dataset() -> DatasetKind {
    DatasetKind::Planted
}
fn d_samples() -> usize {
    2000
}
fn d_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_dataset")]
    pub dataset: DatasetKind,
    #[serde(default = "d_samples")]
    pub n_samples: usize,
    /// Blob noise.
    #[serde(default = "d_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "d_softmax")]
    pub softmax: SoftmaxKind,
    /// Backward scale for `sn_fixed_s`.
    #[serde(default = "d_s")]
    pub s: f64,
    /// Constant `s * t` for `sn_st_const`.
    #[serde(default = "d_st")]
    pub st: f64,
    #[serde(flatten)]
    pub net: NetConfig,
    #[serde(flatten)]
    pub trainer: TrainerKeys,
    #[serde(flatten)]
    pub schedule: ScheduleConfig,
}

/// Trainer keys as they appear in the file; see [`TrainerConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerKeys {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub steps_per_epoch: usize,
    #[serde(default = "defaults::batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr_omega")]
    pub lr_omega: f64,
    #[serde(default = "defaults::lr_arch")]
    pub lr_arch: f64,
    #[serde(default)]
    pub grad_clip_arch: Option<f64>,
    #[serde(default)]
    pub exclude_zero: bool,
}

mod defaults {
    use crate::bilevel::TrainerConfig;
    pub fn epochs() -> usize {
        TrainerConfig::default().epochs
    }
    pub fn batch() -> usize {
        TrainerConfig::default().batch_size
    }
    pub fn lr_omega() -> f64 {
        TrainerConfig::default().lr_omega
    }
    pub fn lr_arch() -> f64 {
        TrainerConfig::default().lr_arch
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        // An empty document yields every default.
        toml::from_str("").expect("defaults parse")
    }
}

/// Keys accepted in addition to the canonical field names.
const ALIASES: &[&str] = &["V", "dim", "tN", "tn", "N", "n"];

fn flatten_sections(table: toml::Table) -> Result<toml::Table> {
    let mut flat = toml::Table::new();
    for (k, v) in table {
        match v {
            toml::Value::Table(inner) => {
                for (ik, iv) in inner {
                    if matches!(iv, toml::Value::Table(_)) {
                        return Err(Error::Config(format!(
                            "nested section [{k}.{ik}] is not supported"
                        )));
                    }
                    if flat.insert(ik.clone(), iv).is_some() {
                        return Err(Error::Config(format!("key {ik:?} given twice")));
                    }
                }
            }
            other => {
                if flat.insert(k.clone(), other).is_some() {
                    return Err(Error::Config(format!("key {k:?} given twice")));
                }
            }
        }
    }
    Ok(flat)
}

impl SearchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("bad config syntax: {e}")))?;
        let flat = flatten_sections(table)?;
        let known = toml::Table::try_from(SearchConfig::default())
            .map_err(|e| Error::Internal(format!("config keys: {e}")))?;
        let unknown: Vec<&String> = flat
            .keys()
            .filter(|k| !known.contains_key(*k) && !ALIASES.contains(&k.as_str()))
            .collect();
        // Optional keys serialize to nothing when unset.
        let unknown: Vec<&String> = unknown
            .into_iter()
            .filter(|k| k.as_str() != "grad_clip_arch")
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {unknown:?}")));
        }
        let cfg: SearchConfig = toml::Value::Table(flat)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn softmax_mode(&self) -> SoftmaxMode {
        match self.softmax {
            SoftmaxKind::Plain => SoftmaxMode::Plain,
            SoftmaxKind::SnFixedS => SoftmaxMode::Sn(ScalePolicy::Fixed(self.s)),
            SoftmaxKind::SnStConst => SoftmaxMode::Sn(ScalePolicy::StConst(self.st)),
        }
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            epochs: self.trainer.epochs,
            steps_per_epoch: self.trainer.steps_per_epoch,
            batch_size: self.trainer.batch_size,
            lr_omega: self.trainer.lr_omega,
            lr_arch: self.trainer.lr_arch,
            grad_clip_arch: self.trainer.grad_clip_arch,
            softmax_mode: self.softmax_mode(),
            schedule: self.schedule.clone(),
            exclude_zero: self.trainer.exclude_zero,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.softmax {
            SoftmaxKind::SnFixedS if !(self.s.is_finite() && self.s > 1.0) => {
                return Err(Error::Config(format!("s must be > 1, got {}", self.s)));
            }
            SoftmaxKind::SnStConst if !(self.st.is_finite() && self.st > 0.0) => {
                return Err(Error::Config(format!("st must be > 0, got {}", self.st)));
            }
            _ => {}
        }
        if self.dataset == DatasetKind::Planted && self.net.catalog != crate::space::DEFAULT_CATALOG
        {
            return Err(Error::Config(
                "the planted task uses the default operation catalog".into(),
            ));
        }
        self.net.validate()?;
        self.trainer().validate()
    }

    /// Dataset and initial supernet for this config, all seeded by `seed`.
    /// The planted task dictates the cell shape and the shared weights.
    pub fn build(&self) -> Result<(Dataset, SuperNet)> {
        use rand::SeedableRng;
        match self.dataset {
            DatasetKind::Planted => {
                let mut pc = PlantedConfig::new(self.seed, self.net.feature_dim);
                pc.n_samples = self.n_samples;
                let task = planted_optimum_task_with(pc)?;
                let mut net = task.net;
                net.config.arch_init_scale = self.net.arch_init_scale;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(2);
                net.reinit_arch(&mut rng);
                Ok((task.dataset, net))
            }
            DatasetKind::Blobs => {
                let data = generate(
                    self.seed,
                    self.n_samples,
                    self.net.feature_dim,
                    self.net.num_classes,
                    self.noise_sigma,
                )?;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                let net = SuperNet::new(self.net.clone(), &mut rng)?;
                Ok((data, net))
            }
        }
    }
}
