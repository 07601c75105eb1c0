//! Experiment configuration: one strict TOML file. Unknown keys are
//! rejected everywhere so a typo can never silently drop a
//! hyper-parameter, and seeds have no default so reproducibility is always
//! declared.

use crate::data::{
    gen_shifted_gaussians, gen_two_moons_shift, load_idx, DomainPair, SyntheticShiftSpec,
};
use crate::error::SfdaError;
use crate::losses::AdaptationWeights;
use crate::model::{ClassifierBankSpec, GeneratorSpec};
use crate::numerics::OptimizerConfig;
use crate::pipeline::{AdaptConfig, PretrainConfig};
use crate::Result;
use serde::Deserialize;
use std::path::{Path, PathBuf};

fn not_positive(x: f64) -> bool {
    !x.is_finite() || x <= 0.0
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5.0e-4
}

fn default_gamma() -> f64 {
    0.1
}

fn default_inner_cap() -> usize {
    20
}

fn default_batch_size() -> usize {
    32
}

/// Top-level experiment file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataConfig,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub adapt: AdaptSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// One full run per seed. Required: there is no default seed.
    pub seeds: Vec<u64>,
    /// Output directory; overridable by CLI flag or environment variable.
    pub output_dir: Option<PathBuf>,
}

/// Data source: exactly one of the variants, written as
/// `[data.synthetic_gaussians]`, `[data.two_moons]`, or `[data.idx]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    SyntheticGaussians {
        classes: usize,
        n_per_class: usize,
        radius: f64,
        std: f64,
        rotation_deg: f64,
        translation: [f64; 2],
        std_inflation: f64,
    },
    TwoMoons {
        n: usize,
        noise: f64,
        rotation_deg: f64,
    },
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
        classes: usize,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub tau: f64,
    pub alpha_s: f64,
    #[serde(default = "default_inner_cap")]
    pub inner_cap: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub eta0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub alpha_t: f64,
    #[serde(default = "default_gamma")]
    pub gamma1: f64,
    #[serde(default = "default_gamma")]
    pub gamma2: f64,
    pub beta: f64,
    pub pseudo_start_epoch: usize,
    pub pseudo_interval: usize,
    pub eta0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl ExperimentConfig {
    /// Parse and validate a config file. Parsing is strict; validation
    /// additionally checks invariants and that referenced data paths exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SfdaError::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| SfdaError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(SfdaError::InvalidConfig(
                "experiment.seeds must list at least one seed".into(),
            ));
        }
        if self.model.k < 2 {
            return Err(SfdaError::InvalidConfig(format!(
                "model.k must be >= 2, got {}",
                self.model.k
            )));
        }
        let classes = self.classes();
        if classes < 2 {
            return Err(SfdaError::InvalidConfig("need at least 2 classes".into()));
        }
        match &self.data {
            DataConfig::SyntheticGaussians {
                n_per_class,
                radius,
                std,
                std_inflation,
                ..
            } => {
                if *n_per_class == 0
                    || not_positive(*radius)
                    || not_positive(*std)
                    || not_positive(*std_inflation)
                {
                    return Err(SfdaError::InvalidConfig(
                        "synthetic_gaussians needs positive n_per_class, radius, std, std_inflation"
                            .into(),
                    ));
                }
            }
            DataConfig::TwoMoons { n, noise, .. } => {
                if *n < 2 || *noise < 0.0 {
                    return Err(SfdaError::InvalidConfig(
                        "two_moons needs n >= 2 and noise >= 0".into(),
                    ));
                }
            }
            DataConfig::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                ..
            } => {
                for p in [source_images, source_labels, target_images, target_labels] {
                    if !p.exists() {
                        return Err(SfdaError::InvalidConfig(format!(
                            "referenced path does not exist: {}",
                            p.display()
                        )));
                    }
                }
            }
        }
        // surface phase-config problems at load time rather than mid-run
        self.pretrain_config(1)?.validate()?;
        self.adapt_config(1)?.validate()?;
        Ok(())
    }

    /// The shared class count of the label space.
    pub fn classes(&self) -> usize {
        match &self.data {
            DataConfig::SyntheticGaussians { classes, .. } => *classes,
            DataConfig::TwoMoons { .. } => 2,
            DataConfig::Idx { classes, .. } => *classes,
        }
    }

    /// Materialize the domain pair for one run seed.
    pub fn build_data(&self, seed: u64) -> Result<DomainPair> {
        match &self.data {
            DataConfig::SyntheticGaussians {
                classes,
                n_per_class,
                radius,
                std,
                rotation_deg,
                translation,
                std_inflation,
            } => gen_shifted_gaussians(&SyntheticShiftSpec {
                c: *classes,
                n_per_class: *n_per_class,
                radius: *radius,
                std: *std,
                rotation: rotation_deg.to_radians(),
                translation: *translation,
                std_inflation: *std_inflation,
                seed,
            }),
            DataConfig::TwoMoons {
                n,
                noise,
                rotation_deg,
            } => gen_two_moons_shift(*n, *noise, rotation_deg.to_radians(), seed),
            DataConfig::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                classes,
            } => {
                let mut source = load_idx(source_images, source_labels)?;
                let mut target = load_idx(target_images, target_labels)?;
                for ds in [&mut source, &mut target] {
                    if let Some(y) = &ds.y {
                        if let Some(&bad) = y.iter().find(|&&l| l >= *classes) {
                            return Err(SfdaError::LabelOutOfRange {
                                label: bad,
                                classes: *classes,
                            });
                        }
                    }
                    ds.c = *classes;
                }
                Ok(DomainPair { source, target })
            }
        }
    }

    pub fn generator_spec(&self, input_dim: usize) -> GeneratorSpec {
        GeneratorSpec {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            feature_dim: self.model.feature_dim,
        }
    }

    pub fn bank_spec(&self) -> ClassifierBankSpec {
        ClassifierBankSpec {
            k: self.model.k,
            c: self.classes(),
            head_hidden: self.model.head_hidden,
        }
    }

    /// Pre-training phase config; `n_source` fixes the schedule length.
    pub fn pretrain_config(&self, n_source: usize) -> Result<PretrainConfig> {
        let p = &self.pretrain;
        let steps_per_epoch = n_source.div_ceil(p.batch_size).max(1);
        Ok(PretrainConfig {
            epochs: p.epochs,
            tau: p.tau,
            alpha_s: p.alpha_s,
            inner_cap: p.inner_cap,
            batch_size: p.batch_size,
            optimizer: OptimizerConfig::new(
                p.eta0,
                p.momentum,
                p.weight_decay,
                (p.epochs * steps_per_epoch).max(1),
            )?,
        })
    }

    /// Adaptation phase config; `n_target` fixes the schedule length.
    pub fn adapt_config(&self, n_target: usize) -> Result<AdaptConfig> {
        let a = &self.adapt;
        let steps_per_epoch = n_target.div_ceil(a.batch_size).max(1);
        Ok(AdaptConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            weights: AdaptationWeights {
                alpha_t: a.alpha_t,
                gamma1: a.gamma1,
                gamma2: a.gamma2,
                beta: a.beta,
            },
            pseudo_start_epoch: a.pseudo_start_epoch,
            pseudo_interval: a.pseudo_interval,
            optimizer: OptimizerConfig::new(
                a.eta0,
                a.momentum,
                a.weight_decay,
                (a.epochs * steps_per_epoch).max(1),
            )?,
        })
    }
}
