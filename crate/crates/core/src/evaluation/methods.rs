use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_detections, mean_pixel_distance, DetectionScores, MeanStd, TRUE_POSITIVE_IOU};
use crate::detector::{DetectionSet, FeatureMap, HandClass, HandNet, Thresholds};
use crate::error::{Error, Result};
use crate::manip::REFERENCE_RESOLUTION;
use crate::regressor::{stack_window, FeatureWindow, Regressor};
use crate::synthworld::Episode;
use crate::training::HandsOnlyNet;

/// A future-hand predictor compared in the report tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full { k: usize },
    HandsOnly,
    FutureDetector,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Full { k } => format!("full_k{k}"),
            Method::HandsOnly => "hands_only".into(),
            Method::FutureDetector => "future_detector".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "hands_only" => Some(Method::HandsOnly),
            "future_detector" => Some(Method::FutureDetector),
            _ => {
                let k = s.strip_prefix("full_k")?.parse().ok()?;
                (k > 0).then_some(Method::Full { k })
            }
        }
    }

    /// Display label for tables.
    pub fn label(&self) -> String {
        match self {
            Method::Full { k } => format!("Full regressor (K={k})"),
            Method::HandsOnly => "Hands only".into(),
            Method::FutureDetector => "Future-annotated detector".into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Trained models available to the evaluator, with the checkpoint name each
/// method needs reported when it is missing.
#[derive(Default)]
pub struct MethodModels {
    pub regressors: BTreeMap<usize, Regressor>,
    pub hands_only: Option<HandsOnlyNet>,
    pub future_detector: Option<HandNet>,
}

impl MethodModels {
    fn regressor(&self, k: usize) -> Result<&Regressor> {
        self.regressors
            .get(&k)
            .ok_or_else(|| Error::MissingDependency(format!("regressor_k{k}.ckpt is required for full_k{k}")))
    }
}

/// Test episodes with their encoded frames. Every method predicts frame
/// t+Δ from frame t over the same frames t ∈ [K_max−1, L−Δ).
pub struct EvalSet<'a> {
    pub episodes: Vec<&'a Episode>,
    pub features: Vec<Vec<FeatureMap>>,
    pub delta: usize,
    pub k_max: usize,
    pub thresholds: Thresholds,
}

impl<'a> EvalSet<'a> {
    pub fn new(net: &HandNet, episodes: Vec<&'a Episode>, delta: usize, k_max: usize, thresholds: Thresholds) -> Result<Self> {
        if delta == 0 || k_max == 0 {
            return Err(Error::Config("evaluation needs positive K and Δ".into()));
        }
        let mut features = Vec::with_capacity(episodes.len());
        for ep in &episodes {
            let mut maps = Vec::with_capacity(ep.len());
            for chunk in ep.frames.chunks(16) {
                maps.extend(net.encode_batch(&chunk.iter().collect::<Vec<_>>())?);
            }
            features.push(maps);
        }
        Ok(EvalSet {
            episodes,
            features,
            delta,
            k_max,
            thresholds,
        })
    }

    /// Current frames scored in episode `i`.
    pub fn frames(&self, i: usize) -> std::ops::Range<usize> {
        let len = self.episodes[i].len();
        let start = self.k_max - 1;
        let end = len.saturating_sub(self.delta).max(start);
        start..end
    }

    /// Truth at t+Δ for every scored frame, per episode.
    pub fn future_truth(&self) -> Vec<Vec<DetectionSet>> {
        (0..self.episodes.len())
            .map(|i| self.frames(i).map(|t| self.episodes[i].truth[t + self.delta].clone()).collect())
            .collect()
    }

    pub fn num_frames(&self) -> usize {
        (0..self.episodes.len()).map(|i| self.frames(i).len()).sum()
    }
}

/// Predicted boxes at t+Δ for every scored frame, per episode.
pub fn predict_method(method: Method, net: &HandNet, models: &MethodModels, set: &EvalSet) -> Result<Vec<Vec<DetectionSet>>> {
    let mut out = Vec::with_capacity(set.episodes.len());
    for (i, ep) in set.episodes.iter().enumerate() {
        let maps = &set.features[i];
        let mut preds = Vec::new();
        for t in set.frames(i) {
            let future = t + set.delta;
            let p = match method {
                Method::Full { k } => {
                    if k > set.k_max {
                        return Err(Error::Config(format!("K = {k} exceeds the evaluation window {}", set.k_max)));
                    }
                    let reg = models.regressor(k)?;
                    let window = FeatureWindow {
                        maps: maps[t + 1 - k..=t].to_vec(),
                    };
                    let f = reg.regress_future(&stack_window(&window, k)?, future)?;
                    net.detect_from_features(&f, set.thresholds)?
                }
                Method::HandsOnly => {
                    let hands = models.hands_only.as_ref().ok_or_else(|| {
                        Error::MissingDependency("baseline_hands_only.ckpt is required for hands_only".into())
                    })?;
                    let now = net.detect_from_features(&maps[t], set.thresholds)?;
                    hands.predict(&now, future)?
                }
                Method::FutureDetector => {
                    let fd = models.future_detector.as_ref().ok_or_else(|| {
                        Error::MissingDependency("baseline_future_detector.ckpt is required for future_detector".into())
                    })?;
                    let mut d = fd.detect(&ep.frames[t], set.thresholds)?;
                    d.frame_index = future;
                    d
                }
            };
            preds.push(p);
        }
        out.push(preds);
    }
    Ok(out)
}

/// One table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub label: String,
    pub scores: DetectionScores,
    pub distance_all: MeanStd,
    pub distance_right: MeanStd,
}

pub fn score_predictions(method: Method, preds: &[Vec<DetectionSet>], truth: &[Vec<DetectionSet>]) -> Result<MethodRow> {
    let p: Vec<DetectionSet> = preds.iter().flatten().cloned().collect();
    let t: Vec<DetectionSet> = truth.iter().flatten().cloned().collect();
    Ok(MethodRow {
        method,
        label: method.label(),
        scores: evaluate_detections(&p, &t, TRUE_POSITIVE_IOU)?,
        distance_all: mean_pixel_distance(&p, &t, &HandClass::ALL, REFERENCE_RESOLUTION)?,
        distance_right: mean_pixel_distance(&p, &t, &[HandClass::MyRight], REFERENCE_RESOLUTION)?,
    })
}

pub fn evaluate_method(method: Method, net: &HandNet, models: &MethodModels, set: &EvalSet) -> Result<MethodRow> {
    let preds = predict_method(method, net, models, set)?;
    score_predictions(method, &preds, &set.future_truth())
}

/// All method rows over one test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub split: String,
    pub episodes: Vec<String>,
    pub frames: usize,
    pub delta: usize,
    pub k_max: usize,
    pub iou_threshold: f64,
    pub resolution: (usize, usize),
    pub rows: Vec<MethodRow>,
}

impl PredictionReport {
    pub fn build(split: &str, net: &HandNet, models: &MethodModels, set: &EvalSet, methods: &[Method]) -> Result<Self> {
        let rows = methods
            .iter()
            .map(|&m| evaluate_method(m, net, models, set))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionReport {
            split: split.into(),
            episodes: set.episodes.iter().map(|e| e.id.clone()).collect(),
            frames: set.num_frames(),
            delta: set.delta,
            k_max: set.k_max,
            iou_threshold: TRUE_POSITIVE_IOU,
            resolution: REFERENCE_RESOLUTION,
            rows,
        })
    }

    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned text tables: detection scores with pixel distance over all
    /// hands, per-class F-measure, and right-hand pixel distance.
    pub fn to_text(&self) -> String {
        let pm = |m: &MeanStd, scale: f64| format!("{:.2} ± {:.2}", m.mean * scale, m.std * scale);
        let mut out = String::new();
        out.push_str(&format!(
            "Future hand prediction, split {} ({} episodes, {} frames, Δ = {}, IoU > {})\n\n",
            self.split,
            self.episodes.len(),
            self.frames,
            self.delta,
            self.iou_threshold
        ));
        let header = ["Method", "Precision", "Recall", "F-measure", "Mean Pixel Distance"];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    pm(&r.scores.precision, 100.0),
                    pm(&r.scores.recall, 100.0),
                    pm(&r.scores.f_measure, 100.0),
                    pm(&r.distance_all, 1.0),
                ]
            })
            .collect();
        out.push_str(&table(&header, &rows));
        out.push('\n');
        let mut header = vec!["Method".to_string()];
        header.extend(HandClass::ALL.iter().map(|c| format!("F {}", c.name())));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.label.clone()];
                for c in HandClass::ALL {
                    row.push(match r.scores.per_class.get(&c) {
                        Some(s) => pm(&s.f_measure, 100.0),
                        None => "-".into(),
                    });
                }
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.push_str(&table(&header, &rows));
        out.push_str("\nRight hand only\n\n");
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.label.clone(), pm(&r.distance_right, 1.0), r.distance_right.n.to_string()])
            .collect();
        out.push_str(&table(&["Method", "Mean Pixel Distance", "Matched frames"], &rows));
        out
    }
}

/// Left-aligned first column, right-aligned others.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    let total: usize = width.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Current-frame detection scores of a hand net on labeled frames.
pub fn detector_scores(net: &HandNet, frames: &[crate::synthworld::LabeledFrame], thresholds: Thresholds) -> Result<DetectionScores> {
    let mut preds = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(16) {
        let refs: Vec<_> = chunk.iter().map(|f| &f.frame).collect();
        for m in net.encode_batch(&refs)? {
            preds.push(net.detect_from_features(&m, thresholds)?);
        }
    }
    let truth: Vec<DetectionSet> = frames.iter().map(|f| f.truth.clone()).collect();
    evaluate_detections(&preds, &truth, TRUE_POSITIVE_IOU)
}
