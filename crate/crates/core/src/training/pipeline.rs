use std::collections::BTreeMap;
use std::path::Path;

use super::{
    build_feature_dataset, train_baseline_future_detector, train_baseline_hands_only, train_regressor, FeatureCache,
    HandsOnlyNet, PipelineConfig, TrainReport,
};
use crate::detector::{DetectionSet, FrameImage, HandNet, Thresholds};
use crate::error::Result;
use crate::evaluation::MethodModels;
use crate::regressor::{Regressor, RegressorConfig};
use crate::synthworld::{Corpus, Episode};

/// Encoded training episodes with the largest window any regressor uses.
pub fn corpus_feature_cache(net: &HandNet, episodes: &[Episode], k_max: usize, delta: usize) -> Result<FeatureCache> {
    let videos: Vec<(&str, &[FrameImage])> = episodes.iter().map(|e| (e.id.as_str(), e.frames.as_slice())).collect();
    build_feature_dataset(net, &videos, k_max, delta)
}

/// Hand-net detections on every cached frame, per episode.
pub fn cached_detections(net: &HandNet, cache: &FeatureCache, thresholds: Thresholds) -> Result<Vec<Vec<DetectionSet>>> {
    cache
        .episodes
        .iter()
        .map(|ep| {
            ep.maps
                .iter()
                .enumerate()
                .map(|(t, m)| {
                    let f = crate::detector::FeatureMap {
                        values: m.clone(),
                        source_frame: t,
                    };
                    net.detect_from_features(&f, thresholds)
                })
                .collect()
        })
        .collect()
}

/// Regressor configuration for window length `k`, sharing everything else
/// with the configured one.
pub fn regressor_config_for(config: &PipelineConfig, k: usize) -> (RegressorConfig, super::TrainConfig) {
    let mut model = config.regressor_model.clone();
    model.k = k;
    let mut train = config.regressor.clone();
    train.k = k;
    (model, train)
}

pub fn train_regressor_k(
    config: &PipelineConfig,
    cache: &FeatureCache,
    k: usize,
    out_dir: Option<&Path>,
) -> Result<(Regressor, TrainReport)> {
    let (model, train) = regressor_config_for(config, k);
    train_regressor(&model, &train, &cache.rekey(k, train.delta), out_dir)
}

/// Everything the method comparison needs on top of a trained hand net:
/// one regressor per window length and both learnable baselines.
pub fn train_comparison_models(
    config: &PipelineConfig,
    net: &HandNet,
    corpus: &Corpus,
    cache: &FeatureCache,
    ks: &[usize],
    out_dir: Option<&Path>,
) -> Result<(MethodModels, Vec<TrainReport>)> {
    let mut reports = Vec::new();
    let mut regressors = BTreeMap::new();
    for &k in ks {
        let (reg, rep) = train_regressor_k(config, cache, k, out_dir)?;
        regressors.insert(k, reg);
        reports.push(rep);
    }
    let dets = cached_detections(net, cache, Thresholds::default())?;
    let (hands_only, rep): (HandsOnlyNet, _) = train_baseline_hands_only(&config.baseline_hands_only, &dets, out_dir)?;
    reports.push(rep);
    let episodes: Vec<&Episode> = corpus.train_episodes().iter().collect();
    let (future_detector, rep) = train_baseline_future_detector(
        &config.handnet_model,
        Some(net),
        &config.baseline_future_detector,
        &episodes,
        out_dir,
    )?;
    reports.push(rep);
    Ok((
        MethodModels {
            regressors,
            hands_only: Some(hands_only),
            future_detector: Some(future_detector),
        },
        reports,
    ))
}
