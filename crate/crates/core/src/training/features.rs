use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{FrameImage, HandNet};
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::Tensor;

/// Frames encoded per forward pass while filling the cache.
const ENCODE_CHUNK: usize = 16;

/// Bottleneck features of every frame of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEpisode {
    pub id: String,
    pub maps: Vec<Tensor>,
}

impl FeatureEpisode {
    /// Number of (window, target) pairs for window length `k` and horizon `delta`.
    pub fn num_pairs(&self, k: usize, delta: usize) -> usize {
        self.maps.len().saturating_sub(delta + k - 1)
    }
}

/// Frozen-encoder features of unlabeled videos. Holds no boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub k: usize,
    pub delta: usize,
    pub feature_shape: [usize; 3],
    pub episodes: Vec<FeatureEpisode>,
}

impl FeatureCache {
    /// The same features keyed for another window length / horizon.
    pub fn rekey(&self, k: usize, delta: usize) -> FeatureCache {
        FeatureCache {
            k,
            delta,
            feature_shape: self.feature_shape,
            episodes: self.episodes.iter().filter(|e| e.num_pairs(k, delta) > 0).cloned().collect(),
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.episodes.iter().map(|e| e.num_pairs(self.k, self.delta)).sum()
    }
}

/// Encodes every frame of each (id, frames) video with the frozen encoder.
/// Videos too short for one (window, target) pair are skipped.
pub fn build_feature_dataset(net: &HandNet, videos: &[(&str, &[FrameImage])], k: usize, delta: usize) -> Result<FeatureCache> {
    if k == 0 || delta == 0 {
        return Err(Error::Config("K and delta must be at least 1".into()));
    }
    let mut episodes = Vec::new();
    for &(id, frames) in videos {
        if frames.len() < k + delta {
            log::warn!("skipping {id}: {} frames is shorter than K + delta = {}", frames.len(), k + delta);
            continue;
        }
        let mut maps = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(ENCODE_CHUNK) {
            let refs: Vec<&FrameImage> = chunk.iter().collect();
            maps.extend(net.encode_batch(&refs)?.into_iter().map(|m| m.values));
        }
        episodes.push(FeatureEpisode { id: id.to_owned(), maps });
    }
    Ok(FeatureCache {
        k,
        delta,
        feature_shape: net.feature_shape(),
        episodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEpisodeEntry {
    pub id: String,
    pub first_frame: usize,
    pub n_frames: usize,
}

/// Cache directory manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub k: usize,
    pub delta: usize,
    pub feature_shape: [usize; 3],
    pub episodes: Vec<CacheEpisodeEntry>,
}

fn feature_file(t: usize) -> String {
    format!("feat_{t:05}.ftr")
}

/// One FTR1 file per (episode, frame) plus `manifest.json`.
pub fn write_feature_cache(dir: &Path, cache: &FeatureCache) -> Result<CacheManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for e in &cache.episodes {
        let sub = dir.join(&e.id);
        fs::create_dir_all(&sub)?;
        for (t, m) in e.maps.iter().enumerate() {
            write_tensor(&sub.join(feature_file(t)), m)?;
        }
        entries.push(CacheEpisodeEntry {
            id: e.id.clone(),
            first_frame: 0,
            n_frames: e.maps.len(),
        });
    }
    let manifest = CacheManifest {
        k: cache.k,
        delta: cache.delta,
        feature_shape: cache.feature_shape,
        episodes: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

pub fn read_feature_cache(dir: &Path) -> Result<FeatureCache> {
    let manifest: CacheManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let mut episodes = Vec::new();
    for e in &manifest.episodes {
        let maps = (e.first_frame..e.first_frame + e.n_frames)
            .map(|t| {
                let m = read_tensor(&dir.join(&e.id).join(feature_file(t)))?;
                if m.shape() != manifest.feature_shape {
                    return Err(Error::Format(format!("{}: feature {t} has shape {:?}", e.id, m.shape())));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        episodes.push(FeatureEpisode { id: e.id.clone(), maps });
    }
    Ok(FeatureCache {
        k: manifest.k,
        delta: manifest.delta,
        feature_shape: manifest.feature_shape,
        episodes,
    })
}
