use std::path::Path;

use super::{finish, mean_loss, run_loop, split_indices, TrainConfig, TrainReport};
use crate::detector::{
    background_losses, detector_loss, match_anchors, mine_hard_negatives, DetectionSet, FrameImage, HandNet, HandNetConfig,
    MatchAssignment,
};
use crate::error::{Error, Result};
use crate::synthworld::LabeledFrame;
use crate::tensor::{Bound, Tape, Tensor, Var};

/// Negatives kept per positive anchor.
const NEGATIVE_RATIO: usize = 3;

/// A training frame with its precomputed anchor assignment.
#[derive(Clone, Debug)]
pub struct DetectorSample<'a> {
    pub frame: &'a FrameImage,
    pub assignment: MatchAssignment,
}

/// Detection loss of a batch, with hard negatives mined from the current
/// predictions across the whole batch.
pub fn detector_batch_loss(
    net: &HandNet,
    tape: &mut Tape<f32>,
    params: &Bound,
    samples: &[&DetectorSample],
) -> Result<Var> {
    let pixels: Vec<&Tensor> = samples.iter().map(|s| &s.frame.pixels).collect();
    let x = tape.constant(Tensor::stack(&pixels)?);
    let f = net.encode_var(tape, params, x)?;
    let head = net.head_var(tape, params, f)?;
    let bg = background_losses(tape.value(head.logits), samples.len());
    let mut assignments: Vec<MatchAssignment> = samples.iter().map(|s| s.assignment.clone()).collect();
    mine_hard_negatives(&mut assignments, &bg, NEGATIVE_RATIO);
    detector_loss(tape, &head, &assignments)
}

/// Trains `net` on frames paired with the boxes it should emit for them.
pub(crate) fn fit_detector(
    mut net: HandNet,
    config: &TrainConfig,
    frames: &[&FrameImage],
    targets: &[DetectionSet],
    out_dir: Option<&Path>,
) -> Result<(HandNet, TrainReport)> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset("detector training set is empty".into()));
    }
    if frames.len() != targets.len() {
        return Err(Error::shape("train_hand_net", "frames and targets differ in length"));
    }
    let samples: Vec<DetectorSample> = frames
        .iter()
        .zip(targets)
        .map(|(f, t)| DetectorSample {
            frame: f,
            assignment: match_anchors(net.anchors(), t),
        })
        .collect();
    let (train, val) = split_indices(samples.len(), config.validation_fraction, config.seed);
    let mut params = std::mem::take(&mut net.params);
    let batch_loss = |tape: &mut Tape<f32>, bound: &Bound, idx: &[usize]| {
        let batch: Vec<&DetectorSample> = idx.iter().map(|&i| &samples[i]).collect();
        detector_batch_loss(&net, tape, bound, &batch)
    };
    let outcome = run_loop(&mut params, config, &train, out_dir, batch_loss, |p| {
        mean_loss(p, &val, config.batch_size, batch_loss)
    })?;
    let warning = match (config.loss_target, outcome.epoch_losses.last()) {
        (Some(target), Some(&l)) if l > target => {
            let w = format!("final detector loss {l:.4} above target {target}");
            log::warn!("{w}");
            Some(w)
        }
        _ => None,
    };
    let model = serde_json::to_value(&net.config)?;
    let report = finish(outcome, config, model, &params, out_dir, warning)?;
    net.params = params;
    Ok((net, report))
}

/// Trains the hand net on labeled frames from a fresh seeded init.
pub fn train_hand_net(
    net_config: &HandNetConfig,
    config: &TrainConfig,
    data: &[LabeledFrame],
    out_dir: Option<&Path>,
) -> Result<(HandNet, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("labeled detector set is empty".into()));
    }
    let net = HandNet::build(net_config, config.seed)?;
    let frames: Vec<&FrameImage> = data.iter().map(|l| &l.frame).collect();
    let targets: Vec<DetectionSet> = data.iter().map(|l| l.truth.clone()).collect();
    fit_detector(net, config, &frames, &targets, out_dir)
}
