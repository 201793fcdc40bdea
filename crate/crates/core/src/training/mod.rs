//! Staged training: hand net, feature cache, regressor, manipulation net,
//! and the two learnable baselines.

mod baselines;
mod config;
mod detector;
mod features;
mod manip;
mod pipeline;
mod regressor;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::io::save_checkpoint;
use crate::tensor::{Bound, Optimizer, OptimizerConfig, ParamStore, Tape, Var};

pub use baselines::{
    future_labels, hands_only_features, hands_only_targets, train_baseline_future_detector, train_baseline_hands_only,
    HandsOnlyNet, HandsOnlySample, HANDS_ONLY_INPUTS, HANDS_ONLY_OUTPUTS,
};
pub use config::{PipelineConfig, Stage, TrainConfig};
pub use detector::{detector_batch_loss, train_hand_net, DetectorSample};
pub use features::{build_feature_dataset, write_feature_cache, read_feature_cache, CacheManifest, FeatureCache, FeatureEpisode};
pub use manip::{manip_tuples, train_manipulation};
pub use pipeline::{
    cached_detections, corpus_feature_cache, regressor_config_for, train_comparison_models, train_regressor_k,
};
pub use regressor::{copy_last_frame_loss, regression_batch, train_regressor, RegressionIndex};

/// Per-run training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    /// Mean training loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation loss after every epoch (empty without a validation slice).
    pub validation_losses: Vec<f64>,
    pub steps: usize,
    /// Epoch whose parameters were kept (best validation loss).
    pub best_epoch: usize,
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config: TrainConfig,
    /// Model architecture echo.
    pub model: serde_json::Value,
    pub warning: Option<String>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// The report with timing zeroed, for byte-level comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TrainReport> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Seeded train / validation split of `n` sample indices.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive_str(seed, "validation_split")));
    let n_val = if n >= 2 {
        ((n as f64 * validation_fraction).round() as usize).min(n - 1)
    } else {
        0
    };
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

pub(crate) struct LoopOutcome {
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub steps: usize,
    pub best_epoch: usize,
    pub started: Instant,
}

/// Minibatch loop shared by every stage: seeded per-epoch permutation,
/// Adam updates, validation after each epoch, early stopping on the
/// validation loss with the best parameters restored at the end. A
/// non-finite loss aborts the run, leaving the last good parameters in
/// `out_dir`.
pub(crate) fn run_loop<F, V>(
    params: &mut ParamStore,
    config: &TrainConfig,
    train: &[usize],
    out_dir: Option<&Path>,
    mut batch_loss: F,
    mut validation_loss: V,
) -> Result<LoopOutcome>
where
    F: FnMut(&mut Tape<f32>, &Bound, &[usize]) -> Result<Var>,
    V: FnMut(&ParamStore) -> Result<Option<f64>>,
{
    if train.is_empty() {
        return Err(Error::EmptyDataset(format!("{} stage has no training samples", config.stage)));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let started = Instant::now();
    let mut opt = Optimizer::new(OptimizerConfig::adam(config.learning_rate));
    let mut out = LoopOutcome {
        epoch_losses: Vec::new(),
        validation_losses: Vec::new(),
        steps: 0,
        best_epoch: 0,
        started,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order = train.to_vec();
    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..config.epochs {
        order.copy_from_slice(train);
        order.shuffle(&mut seed::rng(seed::derive(seed::derive_str(config.seed, "shuffle"), epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if out.steps >= max_steps {
                break;
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let loss = batch_loss(&mut tape, &bound, batch)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                if let Some(dir) = out_dir {
                    std::fs::create_dir_all(dir)?;
                    save_checkpoint(&dir.join(config.checkpoint_name()), params)?;
                }
                return Err(Error::TrainingAborted(format!(
                    "non-finite {} loss at step {}",
                    config.stage, out.steps
                )));
            }
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &bound);
            opt.step(params)?;
            total += value;
            batches += 1;
            out.steps += 1;
        }
        if batches == 0 {
            break;
        }
        out.epoch_losses.push(total / batches as f64);
        if let Some(v) = validation_loss(params)? {
            out.validation_losses.push(v);
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, params.clone()));
                out.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    break 'epochs;
                }
            }
        } else {
            out.best_epoch = epoch;
        }
        if out.steps >= max_steps {
            break;
        }
    }
    if let Some((_, p)) = best {
        params.load_values(&p)?;
    }
    Ok(out)
}

/// Report for a finished loop; writes the checkpoint and report when an
/// output directory is given.
pub(crate) fn finish(
    outcome: LoopOutcome,
    config: &TrainConfig,
    model: serde_json::Value,
    params: &ParamStore,
    out_dir: Option<&Path>,
    warning: Option<String>,
) -> Result<TrainReport> {
    let mut report = TrainReport {
        stage: config.stage,
        epoch_losses: outcome.epoch_losses,
        validation_losses: outcome.validation_losses,
        steps: outcome.steps,
        best_epoch: outcome.best_epoch,
        checkpoint: None,
        wall_clock_secs: outcome.started.elapsed().as_secs_f64(),
        seed: config.seed,
        config: config.clone(),
        model,
        warning,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let name = config.checkpoint_name();
        save_checkpoint(&dir.join(&name), params)?;
        report.checkpoint = Some(name);
        report.write(&dir.join(config.report_name()))?;
    }
    Ok(report)
}

/// Mean of `loss` over `indices` in chunks, without gradients.
pub(crate) fn mean_loss<F>(params: &ParamStore, indices: &[usize], chunk: usize, mut loss: F) -> Result<Option<f64>>
where
    F: FnMut(&mut Tape<f32>, &Bound, &[usize]) -> Result<Var>,
{
    if indices.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for c in indices.chunks(chunk.max(1)) {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let l = loss(&mut tape, &bound, c)?;
        total += tape.value(l).data()[0] as f64 * c.len() as f64;
    }
    Ok(Some(total / indices.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (t, v) = split_indices(50, 0.1, 3);
        assert_eq!((t.len(), v.len()), (45, 5));
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_indices(50, 0.1, 3), (t, v));
        assert_eq!(split_indices(1, 0.5, 0).1.len(), 0);
    }
}
