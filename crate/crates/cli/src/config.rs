//! Run configuration: a strict TOML document with defaults for every key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use srr_core::data::{
    concat, holdout, load_digits, load_tabular, normalize, split, synth_clusters, synth_digits, Dataset, FeatureSchema,
    NormStats,
};
use srr_core::genharness::{AugmentConfig, AugmentOrder, ShiftSpec};
use srr_core::net::{Activation, LayerSpec, LossKind};
use srr_core::spectral::{EpsSchedule, PowerIterationConfig};
use srr_core::train::{LrSchedule, RegularizerConfig, TrainConfig, UpdateRule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Delimited file plus a column schema.
    Tabular,
    /// Whitespace-separated 16×16 digit files.
    Digits,
    #[default]
    SynthClusters,
    SynthDigits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Tabular file, or the digits training file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Digits test file; without it the test set is carved from `path`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// Schema file for tabular data; the cover-type layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Train / validation / test fractions for tabular and cluster data.
    pub split: [f64; 3],
    /// Share of the training images held out for validation (digits).
    pub validation_fraction: f64,
    /// Share of the images held out for testing when no test file exists.
    pub test_fraction: f64,
    pub normalize: bool,
    pub n_per_class: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::SynthClusters,
            path: None,
            test_path: None,
            schema: None,
            split: [0.64, 0.16, 0.20],
            validation_fraction: 1.0 / 7.0,
            test_fraction: 0.2,
            normalize: true,
            n_per_class: 200,
            n_features: 10,
            n_classes: 3,
            separation: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Defaults to sigmoid cross-entropy for class labels and squared error
    /// for real targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20, 20],
            activation: Activation::Tanh,
            loss: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerIterationSection {
    pub eps: f64,
    pub max_iters: usize,
    pub eps_schedule: EpsSchedule,
    pub warm_start: bool,
}

impl Default for PowerIterationSection {
    fn default() -> Self {
        let d = PowerIterationConfig::default();
        Self {
            eps: d.eps,
            max_iters: d.max_iters,
            eps_schedule: d.eps_schedule,
            warm_start: d.warm_start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha0: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub convergence_grad_tol: f64,
    pub update: UpdateRule,
    pub record_exact_rho: bool,
    pub exact_cap: usize,
    pub regularizer: RegularizerConfig,
    pub power_iteration: PowerIterationSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            alpha0: d.alpha0,
            schedule: d.schedule,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            convergence_grad_tol: d.convergence_grad_tol,
            update: d.update,
            record_exact_rho: d.record_exact_rho,
            exact_cap: d.exact_cap,
            regularizer: d.reg,
            power_iteration: PowerIterationSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSection {
    pub sigma_shift: f64,
    pub n_trials: usize,
}

impl Default for ShiftSection {
    fn default() -> Self {
        let d = ShiftSpec::default();
        Self {
            sigma_shift: d.sigma_shift,
            n_trials: d.n_trials,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentTier {
    pub max_crop_px: usize,
    pub max_rot_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub at1: AugmentTier,
    pub at2: AugmentTier,
    pub pad_fill: f64,
    pub order: AugmentOrder,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            at1: AugmentTier {
                max_crop_px: 1,
                max_rot_deg: 15.0,
            },
            at2: AugmentTier {
                max_crop_px: 2,
                max_rot_deg: 30.0,
            },
            pad_fill: -1.0,
            order: AugmentOrder::RotateThenCrop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write real timings into `wall_ms` (breaks byte-identical reruns).
    pub record_wall_time: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub shift: ShiftSection,
    pub augment: AugmentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            record_wall_time: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            shift: ShiftSection::default(),
            augment: AugmentSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.path, &mut cfg.data.test_path, &mut cfg.data.schema]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.shift_spec().validate()?;
        for tier in [self.augment.at1, self.augment.at2] {
            self.augment_config(tier, 0).validate()?;
        }
        if self.model.hidden.contains(&0) {
            bail!("hidden layer widths must be positive");
        }
        let d = &self.data;
        match d.source {
            DataSource::Tabular if d.path.is_none() => bail!("tabular data needs data.path"),
            DataSource::Digits if d.path.is_none() => bail!("digits data needs data.path"),
            _ => {}
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha0: t.alpha0,
            schedule: t.schedule,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            pi: PowerIterationConfig {
                eps: t.power_iteration.eps,
                max_iters: t.power_iteration.max_iters,
                eps_schedule: t.power_iteration.eps_schedule,
                warm_start: t.power_iteration.warm_start,
                seed: self.seed,
            },
            reg: t.regularizer,
            seed: self.seed,
            convergence_grad_tol: t.convergence_grad_tol,
            update: t.update,
            exact_cap: t.exact_cap,
            record_exact_rho: t.record_exact_rho,
        }
    }

    pub fn shift_spec(&self) -> ShiftSpec {
        ShiftSpec {
            sigma_shift: self.shift.sigma_shift,
            n_trials: self.shift.n_trials,
            seed: self.seed,
        }
    }

    pub fn augment_config(&self, tier: AugmentTier, index: u64) -> AugmentConfig {
        AugmentConfig {
            max_crop_px: tier.max_crop_px,
            max_rot_deg: tier.max_rot_deg,
            pad_fill: self.augment.pad_fill,
            seed: srr_core::seeds::derive(self.seed, srr_core::seeds::Stream::Augment, index),
            order: self.augment.order,
        }
    }

    pub fn loss_for(&self, data: &Dataset) -> LossKind {
        self.model.loss.unwrap_or(if data.n_classes().is_some() {
            LossKind::SigmoidBinaryCrossEntropy
        } else {
            LossKind::MeanSquaredError
        })
    }

    pub fn layer_specs(&self, output_dim: usize) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self
            .model
            .hidden
            .iter()
            .map(|&w| LayerSpec::new(w, self.model.activation))
            .collect();
        specs.push(LayerSpec::new(output_dim, Activation::Identity));
        specs
    }
}

/// Train / validation / test partitions, normalized with training
/// statistics where applicable.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub norm: Option<NormStats>,
}

impl Prepared {
    pub fn all(&self) -> Result<Dataset> {
        Ok(concat(&[&self.train, &self.validation, &self.test])?)
    }

    pub fn part(&self, name: &str) -> Result<Dataset> {
        Ok(match name {
            "train" => self.train.clone(),
            "validation" => self.validation.clone(),
            "test" => self.test.clone(),
            "all" => self.all()?,
            other => bail!("unknown split '{other}' (expected train, validation, test or all)"),
        })
    }
}

/// Loads or generates the configured data and partitions it.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let d = &cfg.data;
    let seed = cfg.seed;
    let frac = (d.split[0], d.split[1], d.split[2]);
    match d.source {
        DataSource::Tabular | DataSource::SynthClusters => {
            let full = if d.source == DataSource::Tabular {
                let schema = match &d.schema {
                    Some(p) => FeatureSchema::load(p).with_context(|| format!("schema {}", p.display()))?,
                    None => FeatureSchema::cover_type(),
                };
                let path = d.path.as_ref().expect("validated");
                load_tabular(path, &schema).with_context(|| format!("reading {}", path.display()))?
            } else {
                synth_clusters(d.n_per_class, d.n_features, d.n_classes, d.separation, seed)?
            };
            let (train, validation, test) = split(&full, frac, seed)?;
            if d.normalize {
                let (stats, train) = normalize(&train)?;
                let validation = stats.apply(&validation)?;
                let test = stats.apply(&test)?;
                Ok(Prepared {
                    train,
                    validation,
                    test,
                    norm: Some(stats),
                })
            } else {
                Ok(Prepared {
                    train,
                    validation,
                    test,
                    norm: None,
                })
            }
        }
        DataSource::Digits | DataSource::SynthDigits => {
            let (pool, test) = if d.source == DataSource::Digits {
                let path = d.path.as_ref().expect("validated");
                let pool = load_digits(path).with_context(|| format!("reading {}", path.display()))?;
                match &d.test_path {
                    Some(t) => (pool, load_digits(t).with_context(|| format!("reading {}", t.display()))?),
                    None => holdout(&pool, d.test_fraction, seed)?,
                }
            } else {
                let all = synth_digits(d.n_per_class, seed)?;
                holdout(&all, d.test_fraction, seed)?
            };
            let (train, validation) = holdout(&pool, d.validation_fraction, seed ^ 0x5eed)?;
            Ok(Prepared {
                train,
                validation,
                test,
                norm: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.hidden, vec![20, 20, 20]);
        assert_eq!(cfg.train.alpha0, 0.5);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.train.schedule, LrSchedule::InverseEpoch);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nalpha = 0.1").is_err());
        assert!(RunConfig::from_toml("[train.regularizer]\nmu = 0.1\nkk = 2").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.regularizer = RegularizerConfig::new(0.01, 2.0);
        cfg.data.schema = Some(PathBuf::from("schema.toml"));
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0").is_err());
        assert!(RunConfig::from_toml("[data]\nsource = \"tabular\"").is_err());
        assert!(RunConfig::from_toml("[train.regularizer]\nmu = -1.0").is_err());
    }

    #[test]
    fn synthetic_partitions() {
        let mut cfg = RunConfig::default();
        cfg.data.n_per_class = 50;
        let p = prepare(&cfg).unwrap();
        assert_eq!(p.train.len() + p.validation.len() + p.test.len(), 150);
        assert_eq!(p.all().unwrap().len(), 150);
        cfg.data.source = DataSource::SynthDigits;
        let p = prepare(&cfg).unwrap();
        assert_eq!(p.test.len(), 20);
        assert_eq!(p.validation.len(), 11);
        assert!(p.test.geometry.is_some());
    }
}
