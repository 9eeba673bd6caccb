//! Run configuration: one JSON document drives the whole pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolver::{EngineConfig, Mode, DEFAULT_TRANSFER_PROBABILITY};
use crate::genome::{Granularity, DEFAULT_MIN_ACTIVE_FRACTION};
use crate::net::{Activation, Architecture, OutputKind, TrainHyper};
use crate::taskbed::{GeneratorKind, SuiteSpec};

/// Engine section of the config file. `transfer_matrix` overrides the
/// uniform `transfer_probability` when present; K comes from the suite's
/// task splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub population_size: usize,
    pub generations: usize,
    pub transfer_probability: f64,
    pub transfer_matrix: Option<Vec<Vec<f64>>>,
    pub mutation_rate: Option<f64>,
    pub min_active_fraction: f64,
    pub granularity: Granularity,
    pub seed: u64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            population_size: 60,
            generations: 120,
            transfer_probability: DEFAULT_TRANSFER_PROBABILITY,
            transfer_matrix: None,
            mutation_rate: None,
            min_active_fraction: DEFAULT_MIN_ACTIVE_FRACTION,
            granularity: Granularity::PerNeuron,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneHyper {
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        // Plain SGD needs a larger step budget than the adaptive-optimizer
        // recipes used at full scale; with decay d the total displacement
        // is about lr/(1-d), here ~0.5.
        FinetuneHyper {
            lr: 0.01,
            lr_decay: 0.98,
            epochs: 150,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub suite: SuiteSpec,
    pub arch: Architecture,
    pub jat_hyper: TrainHyper,
    pub engine: EngineSettings,
    pub finetune_hyper: FinetuneHyper,
    pub output_dir: String,
    pub arms: Vec<Mode>,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            // Ten Gaussian classes split into even and odd label tasks; the
            // spread keeps the tasks hard enough that the search is still
            // moving at the budget's end.
            suite: SuiteSpec {
                generator: GeneratorKind::GaussianClusters,
                n_classes: 10,
                samples_per_class: 100,
                input_dim: 16,
                cluster_spread: 0.75,
                task_splits: vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7, 9]],
                seed: 7,
                csv_path: None,
            },
            // Wide trunk relative to the head so cross-task transfer acts
            // mostly on shared structure.
            arch: Architecture::new(
                vec![16, 48, 32, 10],
                Activation::Relu,
                OutputKind::SoftmaxLogits,
            ),
            jat_hyper: TrainHyper {
                lr: 0.05,
                lr_decay: 0.99,
                epochs: 200,
                batch_size: 32,
                seed: 1,
            },
            engine: EngineSettings::default(),
            finetune_hyper: FinetuneHyper::default(),
            output_dir: "runs/default".to_string(),
            arms: vec![Mode::Multitask, Mode::Singletask],
            repeats: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.arch.validate()?;
        self.jat_hyper.validate()?;
        let k = self.suite.task_splits.len();
        self.engine_config(Mode::Multitask, self.engine.seed, k)?
            .validate()?;
        if !(self.finetune_hyper.lr >= 0.0) {
            return Err(Error::validation(
                "finetune_hyper.lr",
                "learning rate must be >= 0",
            ));
        }
        if !(self.finetune_hyper.lr_decay > 0.0 && self.finetune_hyper.lr_decay <= 1.0) {
            return Err(Error::validation(
                "finetune_hyper.lr_decay",
                "decay must be in (0, 1]",
            ));
        }
        if self.finetune_hyper.batch_size == 0 {
            return Err(Error::validation(
                "finetune_hyper.batch_size",
                "batch size must be >= 1",
            ));
        }
        if self.output_dir.is_empty() {
            return Err(Error::validation("output_dir", "output dir must be set"));
        }
        if self.arms.is_empty() {
            return Err(Error::validation("arms", "need at least one arm"));
        }
        if self.repeats == 0 {
            return Err(Error::validation("repeats", "need at least one repeat"));
        }
        if self.arch.output_dim() < self.suite.n_classes {
            return Err(Error::validation(
                "arch.layer_sizes",
                format!(
                    "output dim {} smaller than {} classes",
                    self.arch.output_dim(),
                    self.suite.n_classes
                ),
            ));
        }
        Ok(())
    }

    /// Concrete engine configuration for one arm and seed.
    pub fn engine_config(&self, mode: Mode, seed: u64, k: usize) -> Result<EngineConfig> {
        let transfer = match &self.engine.transfer_matrix {
            Some(matrix) => matrix.clone(),
            None => EngineConfig::uniform_transfer(k, self.engine.transfer_probability),
        };
        if !(0.0..=1.0).contains(&self.engine.transfer_probability) {
            return Err(Error::validation(
                "engine.transfer_probability",
                "probability must be in [0, 1]",
            ));
        }
        Ok(EngineConfig {
            k,
            population_size: self.engine.population_size,
            generations: self.engine.generations,
            transfer,
            mutation_rate: self.engine.mutation_rate,
            min_active_fraction: self.engine.min_active_fraction,
            seed,
            mode,
        })
    }

    pub fn finetune_train_hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            lr: self.finetune_hyper.lr,
            lr_decay: self.finetune_hyper.lr_decay,
            epochs: self.finetune_hyper.epochs,
            batch_size: self.finetune_hyper.batch_size,
            seed,
        }
    }

    /// SHA-256 of the canonical JSON form, embedded in every artifact. The
    /// output directory is excluded so the hash identifies the experiment
    /// rather than where it ran.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        let text = serde_json::to_string(&canonical).expect("config serialization cannot fail");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: RunConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn one_layer_arch_names_the_field() {
        let mut config = RunConfig::default();
        config.arch.layer_sizes = vec![16];
        match config.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "arch.layer_sizes"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.config_hash(), b.config_hash());
        b.engine.seed = 99;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let config: RunConfig =
            serde_json::from_str(r#"{"repeats": 3, "engine": {"population_size": 20}}"#).unwrap();
        assert_eq!(config.repeats, 3);
        assert_eq!(config.engine.population_size, 20);
        assert_eq!(config.engine.generations, 120);
        config.validate().unwrap();
    }

    #[test]
    fn transfer_matrix_must_match_task_count() {
        let mut config = RunConfig::default();
        config.engine.transfer_matrix = Some(vec![vec![0.5; 3]; 3]);
        assert!(matches!(
            config.validate(),
            Err(Error::Validation { field, .. }) if field == "engine.transfer_matrix"
        ));
    }
}
