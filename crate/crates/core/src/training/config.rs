use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::HandNetConfig;
use crate::error::{Error, Result};
use crate::manip::ManipConfig;
use crate::regressor::RegressorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    HandNet,
    Regressor,
    Manip,
    BaselineHandsOnly,
    BaselineFutureDetector,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::HandNet,
        Stage::Regressor,
        Stage::Manip,
        Stage::BaselineHandsOnly,
        Stage::BaselineFutureDetector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::HandNet => "handnet",
            Stage::Regressor => "regressor",
            Stage::Manip => "manip",
            Stage::BaselineHandsOnly => "baseline_hands_only",
            Stage::BaselineFutureDetector => "baseline_future_detector",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Share of the training split held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    /// Window length (regressor, future detector naming).
    pub k: usize,
    /// Prediction horizon in frames.
    pub delta: usize,
    /// Future detector: start from the trained hand net instead of scratch.
    pub fine_tune: bool,
    /// Loss the stage is expected to reach; a warning is recorded otherwise.
    pub loss_target: Option<f64>,
    /// Corpus directory, relative to the workspace.
    pub data: String,
}

impl TrainConfig {
    pub fn defaults(stage: Stage) -> TrainConfig {
        let base = TrainConfig {
            stage,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            max_steps: None,
            validation_fraction: 0.1,
            patience: Some(5),
            k: 10,
            delta: 10,
            fine_tune: true,
            loss_target: None,
            data: "corpus".into(),
        };
        match stage {
            Stage::HandNet => TrainConfig {
                max_steps: Some(2000),
                loss_target: Some(0.5),
                ..base
            },
            Stage::Regressor => TrainConfig {
                epochs: 12,
                batch_size: 8,
                ..base
            },
            Stage::Manip => TrainConfig {
                epochs: 400,
                batch_size: 64,
                learning_rate: 3e-3,
                patience: Some(40),
                ..base
            },
            Stage::BaselineHandsOnly => TrainConfig {
                epochs: 150,
                batch_size: 64,
                patience: Some(20),
                ..base
            },
            Stage::BaselineFutureDetector => TrainConfig { epochs: 8, ..base },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// File stem shared by the checkpoint and report of this run.
    pub fn run_name(&self) -> String {
        match self.stage {
            Stage::Regressor => format!("regressor_k{}", self.k),
            Stage::BaselineFutureDetector if !self.fine_tune => "baseline_future_detector_scratch".into(),
            s => s.name().into(),
        }
    }

    pub fn checkpoint_name(&self) -> String {
        format!("{}.ckpt", self.run_name())
    }

    pub fn report_name(&self) -> String {
        format!("{}.report.json", self.run_name())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{}: epochs and batch_size must be positive", self.stage)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("{}: learning_rate must be positive", self.stage)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("{}: validation_fraction must lie in [0, 1)", self.stage)));
        }
        if self.k == 0 || self.delta == 0 {
            return Err(Error::Config(format!("{}: k and delta must be at least 1", self.stage)));
        }
        Ok(())
    }
}

/// Every model and stage setting, as stored in the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub handnet_model: HandNetConfig,
    pub regressor_model: RegressorConfig,
    pub manip_model: ManipConfig,
    pub handnet: TrainConfig,
    pub regressor: TrainConfig,
    pub manip: TrainConfig,
    pub baseline_hands_only: TrainConfig,
    pub baseline_future_detector: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            handnet_model: HandNetConfig::desk(),
            regressor_model: RegressorConfig::desk(10),
            manip_model: ManipConfig::default(),
            handnet: TrainConfig::defaults(Stage::HandNet),
            regressor: TrainConfig::defaults(Stage::Regressor),
            manip: TrainConfig::defaults(Stage::Manip),
            baseline_hands_only: TrainConfig::defaults(Stage::BaselineHandsOnly),
            baseline_future_detector: TrainConfig::defaults(Stage::BaselineFutureDetector),
        }
    }
}

impl PipelineConfig {
    pub fn stage(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::HandNet => &self.handnet,
            Stage::Regressor => &self.regressor,
            Stage::Manip => &self.manip,
            Stage::BaselineHandsOnly => &self.baseline_hands_only,
            Stage::BaselineFutureDetector => &self.baseline_future_detector,
        }
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut TrainConfig {
        match stage {
            Stage::HandNet => &mut self.handnet,
            Stage::Regressor => &mut self.regressor,
            Stage::Manip => &mut self.manip,
            Stage::BaselineHandsOnly => &mut self.baseline_hands_only,
            Stage::BaselineFutureDetector => &mut self.baseline_future_detector,
        }
    }

    /// Sets one seed on every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for s in Stage::ALL {
            self.stage_mut(s).seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.handnet_model.validate()?;
        self.regressor_model.validate()?;
        self.manip_model.validate()?;
        for s in Stage::ALL {
            let c = self.stage(s);
            if c.stage != s {
                return Err(Error::Config(format!("section {} declares stage {}", s, c.stage)));
            }
            c.validate()?;
        }
        if self.regressor.k != self.regressor_model.k || self.regressor.delta != self.regressor_model.delta {
            return Err(Error::Config("regressor k/delta disagree between [regressor] and [regressor_model]".into()));
        }
        Ok(())
    }

    /// Parses a config file; keys it leaves out keep their defaults.
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let err = |e: &dyn fmt::Display| Error::Config(e.to_string());
        let overrides: toml::Value = toml::from_str(text).map_err(|e| err(&e))?;
        let mut merged = toml::Value::try_from(PipelineConfig::default()).map_err(|e| err(&e))?;
        merge(&mut merged, overrides);
        let c: PipelineConfig = merged.try_into().map_err(|e| err(&e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        PipelineConfig::from_toml(&std::fs::read_to_string(path)?)
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
