use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use handcast::synthworld::{read_corpus, Corpus, CorpusPaths, Scenario, SimArm};
use handcast::tensor::io::load_checkpoint;
use handcast::tensor::ParamStore;
use handcast::training::{PipelineConfig, Stage};
use handcast::{Error, HandNet, ManipNet, Regressor};

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

/// Invalid flag values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Workspace { root: root.to_path_buf() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn overlays(&self) -> PathBuf {
        self.root.join("overlays")
    }
    pub fn demos(&self) -> PathBuf {
        self.root.join("demos")
    }

    pub fn or(&self, given: &Option<PathBuf>, default: PathBuf) -> PathBuf {
        given.clone().unwrap_or(default)
    }

    /// Path as recorded in artifacts: relative to the workspace when inside it.
    pub fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    pub fn config(&self, path: &Option<PathBuf>) -> Result<PipelineConfig> {
        match path {
            Some(p) => Ok(PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?),
            None => Ok(PipelineConfig::default()),
        }
    }

    /// Corpus directory: the flag, else the config's data entry.
    pub fn data_dir(&self, given: &Option<PathBuf>, config: &PipelineConfig) -> PathBuf {
        given.clone().unwrap_or_else(|| self.root.join(&config.handnet.data))
    }
}

pub fn parse_scenario(s: &str) -> Result<Scenario> {
    Scenario::parse(s).ok_or_else(|| usage(format!("unknown scenario `{s}`")))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !CorpusPaths::new(dir).manifest().exists() {
        return Err(Error::MissingDependency(format!(
            "no corpus at {}; run `handcast generate` first",
            dir.display()
        ))
        .into());
    }
    Ok(read_corpus(dir).with_context(|| format!("reading corpus {}", dir.display()))?)
}

/// Checkpoint `name` in `dir`, or a dependency error naming the stage that
/// produces it.
pub fn require_checkpoint(dir: &Path, name: &str, stage: Stage) -> Result<ParamStore> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingDependency(format!(
            "{} not found; train stage `{stage}` first",
            path.display()
        ))
        .into());
    }
    Ok(load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?)
}

pub fn load_hand_net(dir: &Path, config: &PipelineConfig) -> Result<HandNet> {
    let params = require_checkpoint(dir, &config.handnet.checkpoint_name(), Stage::HandNet)?;
    Ok(HandNet::from_params(&config.handnet_model, &params)?)
}

pub fn load_regressor(dir: &Path, config: &PipelineConfig, net: &HandNet, k: usize) -> Result<Regressor> {
    let (model, train) = handcast::training::regressor_config_for(config, k);
    let params = require_checkpoint(dir, &train.checkpoint_name(), Stage::Regressor)?;
    Ok(Regressor::from_params(&model, net.feature_shape(), &params)?)
}

pub fn load_manip(dir: &Path, config: &PipelineConfig, arm: &SimArm) -> Result<ManipNet> {
    let params = require_checkpoint(dir, &config.manip.checkpoint_name(), Stage::Manip)?;
    Ok(ManipNet::from_params(&config.manip_model, arm, &params)?)
}

/// Writes `resolved_config.toml` into `dir`: the configuration sections
/// plus the command's resolved flags under `[cli]`.
pub fn write_snapshot<A: Serialize, C: Serialize>(dir: &Path, cli: &A, config: Option<&C>) -> Result<()> {
    let mut table = match config {
        Some(c) => match toml::Value::try_from(c)? {
            toml::Value::Table(t) => t,
            _ => anyhow::bail!("configuration snapshot is not a table"),
        },
        None => toml::Table::new(),
    };
    table.insert("cli".into(), toml::Value::try_from(cli)?);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(SNAPSHOT_FILE), toml::to_string(&table)?)
        .with_context(|| format!("writing snapshot in {}", dir.display()))?;
    Ok(())
}
