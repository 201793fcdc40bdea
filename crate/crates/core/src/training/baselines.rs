use std::path::Path;

use super::detector::fit_detector;
use super::{finish, mean_loss, run_loop, split_indices, TrainConfig, TrainReport};
use crate::detector::{DetectionSet, FrameImage, HandBox, HandClass, HandNet, HandNetConfig};
use crate::error::{Error, Result};
use crate::layers::{build_mlp, mlp_forward, DenseLayer};
use crate::manip::HIDDEN_UNITS;
use crate::seed;
use crate::synthworld::Episode;
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

/// (cx, cy, presence) per hand class.
pub const HANDS_ONLY_INPUTS: usize = 12;
/// Future (cx, cy) per hand class.
pub const HANDS_ONLY_OUTPUTS: usize = 8;

pub fn hands_only_features(dets: &DetectionSet) -> [f32; HANDS_ONLY_INPUTS] {
    let mut x = [0.0; HANDS_ONLY_INPUTS];
    for (i, class) in HandClass::ALL.into_iter().enumerate() {
        if let Some(b) = dets.best_of_class(class) {
            x[3 * i] = b.cx as f32;
            x[3 * i + 1] = b.cy as f32;
            x[3 * i + 2] = 1.0;
        }
    }
    x
}

/// Future centers and the mask of classes present in the future frame.
pub fn hands_only_targets(dets: &DetectionSet) -> ([f32; HANDS_ONLY_OUTPUTS], [f32; HANDS_ONLY_OUTPUTS]) {
    let mut y = [0.0; HANDS_ONLY_OUTPUTS];
    let mut mask = [0.0; HANDS_ONLY_OUTPUTS];
    for (i, class) in HandClass::ALL.into_iter().enumerate() {
        if let Some(b) = dets.best_of_class(class) {
            y[2 * i] = b.cx as f32;
            y[2 * i + 1] = b.cy as f32;
            mask[2 * i] = 1.0;
            mask[2 * i + 1] = 1.0;
        }
    }
    (y, mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandsOnlySample {
    pub input: [f32; HANDS_ONLY_INPUTS],
    pub target: [f32; HANDS_ONLY_OUTPUTS],
    pub mask: [f32; HANDS_ONLY_OUTPUTS],
}

/// Dense regressor from current hand centers to future hand centers.
#[derive(Clone, Debug)]
pub struct HandsOnlyNet {
    pub params: ParamStore,
    layers: Vec<DenseLayer>,
}

impl HandsOnlyNet {
    /// Seven dense layers with the manipulation network's widths and an
    /// 8-wide output.
    pub fn build(seed: u64) -> Result<HandsOnlyNet> {
        let mut widths = HIDDEN_UNITS.to_vec();
        *widths.last_mut().expect("non-empty") = HANDS_ONLY_OUTPUTS;
        let mut params = ParamStore::new();
        let layers = build_mlp(&mut params, "hands_only", HANDS_ONLY_INPUTS, &widths, &mut seed::rng(seed))?;
        Ok(HandsOnlyNet { params, layers })
    }

    pub fn from_params(params: &ParamStore) -> Result<HandsOnlyNet> {
        let mut net = HandsOnlyNet::build(0)?;
        net.params.load_values(params)?;
        Ok(net)
    }

    pub fn forward(&self, tape: &mut Tape<f32>, params: &Bound, x: Var) -> Result<Var> {
        mlp_forward(&self.layers, tape, params, x)
    }

    fn loss(&self, tape: &mut Tape<f32>, params: &Bound, batch: &[&HandsOnlySample]) -> Result<Var> {
        let n = batch.len();
        let x = Tensor::new(vec![n, HANDS_ONLY_INPUTS], batch.iter().flat_map(|s| s.input).collect())?;
        let y = Tensor::new(vec![n, HANDS_ONLY_OUTPUTS], batch.iter().flat_map(|s| s.target).collect())?;
        let m = Tensor::new(vec![n, HANDS_ONLY_OUTPUTS], batch.iter().flat_map(|s| s.mask).collect())?;
        let x = tape.constant(x);
        let pred = self.forward(tape, params, x)?;
        tape.masked_mse_loss(pred, &y, &m)
    }

    /// Future boxes: every class present now, moved to its predicted center
    /// with its current size and score.
    pub fn predict(&self, current: &DetectionSet, future_frame: usize) -> Result<DetectionSet> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(vec![HANDS_ONLY_INPUTS], hands_only_features(current).to_vec())?);
        let y = self.forward(&mut tape, &bound, x)?;
        let out = tape.value(y).data();
        let boxes = HandClass::ALL
            .into_iter()
            .enumerate()
            .filter_map(|(i, class)| {
                let b = current.best_of_class(class)?;
                HandBox {
                    cx: out[2 * i] as f64,
                    cy: out[2 * i + 1] as f64,
                    ..*b
                }
                .clipped()
            })
            .collect();
        Ok(DetectionSet::new(future_frame, boxes))
    }
}

/// Trains the hands-only baseline on detector outputs: current detections
/// in, detections Δ frames later as targets (absent classes masked).
pub fn train_baseline_hands_only(
    config: &TrainConfig,
    detections: &[Vec<DetectionSet>],
    out_dir: Option<&Path>,
) -> Result<(HandsOnlyNet, TrainReport)> {
    config.validate()?;
    let d = config.delta;
    let samples: Vec<HandsOnlySample> = detections
        .iter()
        .flat_map(|ep| {
            (0..ep.len().saturating_sub(d)).map(move |t| {
                let (target, mask) = hands_only_targets(&ep[t + d]);
                HandsOnlySample {
                    input: hands_only_features(&ep[t]),
                    target,
                    mask,
                }
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no frames with a future counterpart".into()));
    }
    let mut net = HandsOnlyNet::build(config.seed)?;
    let (train, val) = split_indices(samples.len(), config.validation_fraction, config.seed);
    let mut params = std::mem::take(&mut net.params);
    let batch_loss = |tape: &mut Tape<f32>, bound: &Bound, idx: &[usize]| {
        let batch: Vec<&HandsOnlySample> = idx.iter().map(|&i| &samples[i]).collect();
        net.loss(tape, bound, &batch)
    };
    let outcome = run_loop(&mut params, config, &train, out_dir, batch_loss, |p| {
        mean_loss(p, &val, 1024, batch_loss)
    })?;
    let model = serde_json::json!({ "inputs": HANDS_ONLY_INPUTS, "outputs": HANDS_ONLY_OUTPUTS });
    let report = finish(outcome, config, model, &params, out_dir, None)?;
    net.params = params;
    Ok((net, report))
}

/// Frames t paired with the ground truth of frame t + Δ.
pub fn future_labels<'a>(episodes: &[&'a Episode], delta: usize) -> (Vec<&'a FrameImage>, Vec<DetectionSet>) {
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for ep in episodes {
        for t in 0..ep.len().saturating_sub(delta) {
            frames.push(&ep.frames[t]);
            let mut truth = ep.truth[t + delta].clone();
            truth.frame_index = t;
            labels.push(truth);
        }
    }
    (frames, labels)
}

/// Hand net trained to emit the boxes of frame t + Δ from frame t, either
/// fine-tuned from `init` or from scratch.
pub fn train_baseline_future_detector(
    net_config: &HandNetConfig,
    init: Option<&HandNet>,
    config: &TrainConfig,
    episodes: &[&Episode],
    out_dir: Option<&Path>,
) -> Result<(HandNet, TrainReport)> {
    let net = match (config.fine_tune, init) {
        (true, Some(n)) => n.clone(),
        (true, None) => {
            return Err(Error::MissingDependency(
                "fine-tuning the future detector needs a trained hand net".into(),
            ))
        }
        (false, _) => HandNet::build(net_config, config.seed)?,
    };
    let (frames, labels) = future_labels(episodes, config.delta);
    fit_detector(net, config, &frames, &labels, out_dir)
}
