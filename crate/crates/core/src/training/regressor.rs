use std::path::Path;

use super::{finish, mean_loss, run_loop, split_indices, FeatureCache, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::regressor::{concat_maps, regressor_loss, RegressionBatch, Regressor, RegressorConfig};
use crate::tensor::{Bound, Tape, Tensor};

/// One (window, target) pair: newest window frame `t` of cache episode `episode`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressionIndex {
    pub episode: usize,
    pub t: usize,
}

impl FeatureCache {
    /// Every valid pair: t from K−1 up to the last frame with t + Δ in range.
    pub fn pairs(&self) -> Vec<RegressionIndex> {
        let mut out = Vec::new();
        for (e, ep) in self.episodes.iter().enumerate() {
            for i in 0..ep.num_pairs(self.k, self.delta) {
                out.push(RegressionIndex { episode: e, t: i + self.k - 1 });
            }
        }
        out
    }

    /// Stacked window ending at `t` (frame t first).
    pub fn window(&self, idx: RegressionIndex) -> Result<Tensor> {
        let maps = &self.episodes[idx.episode].maps;
        let refs: Vec<&Tensor> = (0..self.k).map(|j| &maps[idx.t - j]).collect();
        concat_maps(&refs)
    }

    pub fn target(&self, idx: RegressionIndex) -> &Tensor {
        &self.episodes[idx.episode].maps[idx.t + self.delta]
    }
}

pub fn regression_batch(cache: &FeatureCache, pairs: &[RegressionIndex]) -> Result<RegressionBatch> {
    let windows = pairs.iter().map(|&p| cache.window(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = windows.iter().collect();
    let targets: Vec<&Tensor> = pairs.iter().map(|&p| cache.target(p)).collect();
    Ok(RegressionBatch {
        inputs: Tensor::stack(&refs)?,
        targets: Tensor::stack(&targets)?,
    })
}

/// Mean squared error of predicting F̂_{t+Δ} by F̂_t.
pub fn copy_last_frame_loss(cache: &FeatureCache, pairs: &[RegressionIndex]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for &p in pairs {
        let now = &cache.episodes[p.episode].maps[p.t];
        for (a, b) in now.data().iter().zip(cache.target(p).data()) {
            let d = (*a - *b) as f64;
            total += d * d;
        }
        n += now.len();
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Fits the regressor to cached features; the encoder is not involved.
pub fn train_regressor(
    reg_config: &RegressorConfig,
    config: &TrainConfig,
    cache: &FeatureCache,
    out_dir: Option<&Path>,
) -> Result<(Regressor, TrainReport)> {
    config.validate()?;
    if config.k != cache.k || reg_config.k != cache.k || config.delta != cache.delta || reg_config.delta != cache.delta {
        return Err(Error::Config(format!(
            "regressor K={}/{} delta={}/{} do not match the feature cache (K={}, delta={})",
            config.k, reg_config.k, config.delta, reg_config.delta, cache.k, cache.delta
        )));
    }
    let pairs = cache.pairs();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("feature cache holds no (window, target) pairs".into()));
    }
    let mut reg = Regressor::build(reg_config, cache.feature_shape, config.seed)?;
    let (train, val) = split_indices(pairs.len(), config.validation_fraction, config.seed);
    let mut params = std::mem::take(&mut reg.params);
    let batch_loss = |tape: &mut Tape<f32>, bound: &Bound, idx: &[usize]| {
        let sel: Vec<RegressionIndex> = idx.iter().map(|&i| pairs[i]).collect();
        regressor_loss(&reg, tape, bound, &regression_batch(cache, &sel)?)
    };
    let outcome = run_loop(&mut params, config, &train, out_dir, batch_loss, |p| {
        mean_loss(p, &val, config.batch_size, batch_loss)
    })?;
    let model = serde_json::to_value(reg_config)?;
    let report = finish(outcome, config, model, &params, out_dir, None)?;
    reg.params = params;
    Ok((reg, report))
}
