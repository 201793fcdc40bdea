use super::anchors::{AnchorGrid, MatchAssignment};
use super::boxes::{decode_offsets, nms, Anchor, DetectionSet, HandClass};
use super::{FeatureMap, FrameImage, HandNetConfig, Thresholds};
use crate::error::{Error, Result};
use crate::layers::{forward_all, ConvKind, ConvLayer};
use crate::seed;
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

/// Scale applied to box offsets between the head outputs and the encoded
/// targets (x, y, w, h).
pub const OFFSET_VARIANCE: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Prefix shared by every encoder (`g`) parameter.
pub const ENCODER_PREFIX: &str = "handnet.g.";

/// Detector head outputs on a tape, one row per (frame, anchor).
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Rows × classes logits.
    pub logits: Var,
    /// Rows × 4 scaled offsets.
    pub offsets: Var,
    pub frames: usize,
}

#[derive(Clone, Debug)]
pub struct HandNet {
    pub config: HandNetConfig,
    pub params: ParamStore,
    backbone: Vec<ConvLayer>,
    encoder: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
    cls_head: ConvLayer,
    box_head: ConvLayer,
    anchors: AnchorGrid,
    feature_shape: [usize; 3],
}

impl HandNet {
    pub fn build(config: &HandNetConfig, seed: u64) -> Result<HandNet> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let mut params = ParamStore::new();
        let k = config.kernel;
        let mut c = 3;
        let mut backbone = Vec::new();
        for (i, &f) in config.backbone_filters.iter().enumerate() {
            let name = format!("handnet.g.backbone{}", i + 1);
            backbone.push(ConvLayer::add(&mut params, &name, ConvKind::Conv, c, f, k, 2, true, &mut rng)?);
            c = f;
        }
        let enc = config.effective_encoder_filters();
        let mut encoder = Vec::new();
        for (i, &f) in enc.iter().enumerate() {
            let stride = if i + 1 == enc.len() { config.bottleneck_stride } else { 1 };
            let name = format!("handnet.g.enc{}", i + 1);
            encoder.push(ConvLayer::add(&mut params, &name, ConvKind::Conv, c, f, k, stride, true, &mut rng)?);
            c = f;
        }
        let mut decoder = Vec::new();
        for (i, &f) in config.effective_decoder_filters().iter().enumerate() {
            let name = format!("handnet.h.dec{}", i + 1);
            decoder.push(ConvLayer::add(&mut params, &name, ConvKind::Transposed, c, f, k, 1, true, &mut rng)?);
            c = f;
        }
        let a = config.num_anchors_per_cell();
        let hk = config.head_kernel;
        let cls_head = ConvLayer::add(&mut params, "handnet.h.cls", ConvKind::Conv, c, a * config.num_classes, hk, 1, false, &mut rng)?;
        let box_head = ConvLayer::add(&mut params, "handnet.h.box", ConvKind::Conv, c, a * 4, hk, 1, false, &mut rng)?;
        Ok(HandNet {
            config: config.clone(),
            params,
            backbone,
            encoder,
            decoder,
            cls_head,
            box_head,
            anchors: config.anchor_grid()?,
            feature_shape: config.feature_shape()?,
        })
    }

    /// Rebuilds a network around stored parameter values.
    pub fn from_params(config: &HandNetConfig, params: &ParamStore) -> Result<HandNet> {
        let mut net = HandNet::build(config, 0)?;
        net.params.load_values(params)?;
        Ok(net)
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature_shape
    }

    /// Indices of the encoder (`g`) parameters within `params`.
    pub fn encoder_param_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(ENCODER_PREFIX))
            .map(|(i, _)| i)
            .collect()
    }

    /// `g` on a tape; `x` is 3×H×W or N×3×H×W.
    pub fn encode_var(&self, tape: &mut Tape<f32>, params: &Bound, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if (h, w) != self.config.input_size || s[s.len() - 3] != 3 {
            return Err(Error::shape(
                "encode",
                format!("frame {:?} does not match configured input 3×{}×{}", s, self.config.input_size.0, self.config.input_size.1),
            ));
        }
        let x = forward_all(&self.backbone, tape, params, x)?;
        forward_all(&self.encoder, tape, params, x)
    }

    /// `h` up to the raw head outputs; `f` is C×H'×W' or N×C×H'×W'.
    pub fn head_var(&self, tape: &mut Tape<f32>, params: &Bound, f: Var) -> Result<HeadOutput> {
        let s = tape.value(f).shape().to_vec();
        let batched = s.len() == 4;
        if s[s.len() - 3..] != self.feature_shape {
            return Err(Error::shape(
                "detect_from_features",
                format!("features {:?} do not match bottleneck {:?}", s, self.feature_shape),
            ));
        }
        let n = if batched { s[0] } else { 1 };
        let f = if batched { f } else { tape.reshape(f, &[1, s[0], s[1], s[2]])? };
        let d = forward_all(&self.decoder, tape, params, f)?;
        let a = self.config.num_anchors_per_cell();
        let [_, fh, fw] = self.feature_shape;
        let rows = |tape: &mut Tape<f32>, layer: &ConvLayer, width: usize| -> Result<Var> {
            let y = layer.forward(tape, params, d)?;
            let y = tape.reshape(y, &[n, a, width, fh, fw])?;
            let y = tape.permute(y, &[0, 3, 4, 1, 2])?;
            tape.reshape(y, &[n * fh * fw * a, width])
        };
        let logits = rows(tape, &self.cls_head, self.config.num_classes)?;
        let offsets = rows(tape, &self.box_head, 4)?;
        Ok(HeadOutput {
            logits,
            offsets,
            frames: n,
        })
    }

    pub fn encode(&self, frame: &FrameImage) -> Result<FeatureMap> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(frame.pixels.clone());
        let f = self.encode_var(&mut tape, &bound, x)?;
        Ok(FeatureMap {
            values: tape.take_value(f),
            source_frame: frame.frame_index,
        })
    }

    /// Encodes several frames in one pass; results equal per-frame [`encode`](Self::encode).
    pub fn encode_batch(&self, frames: &[&FrameImage]) -> Result<Vec<FeatureMap>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let pixels: Vec<&Tensor> = frames.iter().map(|f| &f.pixels).collect();
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::stack(&pixels)?);
        let f = self.encode_var(&mut tape, &bound, x)?;
        let all = tape.take_value(f);
        frames
            .iter()
            .enumerate()
            .map(|(i, fr)| {
                Ok(FeatureMap {
                    values: all.index_outer(i)?,
                    source_frame: fr.frame_index,
                })
            })
            .collect()
    }

    /// Raw (logits, scaled offsets) for one feature map.
    pub fn head_values(&self, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let f = tape.constant(features.clone());
        let head = self.head_var(&mut tape, &bound, f)?;
        let logits = tape.value(head.logits).clone();
        let offsets = tape.value(head.offsets).clone();
        Ok((logits, offsets))
    }

    /// `h`: boxes from a (current or predicted) feature map.
    pub fn detect_from_features(&self, features: &FeatureMap, thresholds: Thresholds) -> Result<DetectionSet> {
        if features.values.shape() != self.feature_shape {
            return Err(Error::shape(
                "detect_from_features",
                format!("features {:?} do not match bottleneck {:?}", features.values.shape(), self.feature_shape),
            ));
        }
        let (logits, offsets) = self.head_values(&features.values)?;
        decode_detections(&self.anchors, &logits, &offsets, thresholds, features.source_frame)
    }

    /// `h(g(x))`.
    pub fn detect(&self, frame: &FrameImage, thresholds: Thresholds) -> Result<DetectionSet> {
        let f = self.encode(frame)?;
        self.detect_from_features(&f, thresholds)
    }
}

fn softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Turns head outputs into class-scored boxes: every (anchor, class) whose
/// probability exceeds the confidence threshold, then per-class NMS.
pub fn decode_detections(
    anchors: &AnchorGrid,
    logits: &Tensor,
    offsets: &Tensor,
    thresholds: Thresholds,
    frame_index: usize,
) -> Result<DetectionSet> {
    let n = anchors.len();
    let classes = logits.len() / n.max(1);
    if logits.len() != n * classes || offsets.len() != n * 4 || classes < 2 {
        return Err(Error::shape(
            "decode_detections",
            format!("{n} anchors vs logits {:?}, offsets {:?}", logits.shape(), offsets.shape()),
        ));
    }
    let mut found = Vec::new();
    for (i, a) in anchors.anchors.iter().enumerate() {
        let p = softmax(&logits.data()[i * classes..(i + 1) * classes]);
        for (label, &prob) in p.iter().enumerate().skip(1) {
            if prob > thresholds.confidence {
                found.push(decode_row(&offsets.data()[i * 4..i * 4 + 4], a, label, prob));
            }
        }
    }
    let kept = nms(&found, thresholds.nms)
        .into_iter()
        .filter_map(|b| b.clipped())
        .collect();
    Ok(DetectionSet::new(frame_index, kept))
}

fn decode_row(o: &[f32], a: &Anchor, label: usize, prob: f64) -> super::HandBox {
    let o = [
        o[0] as f64 * OFFSET_VARIANCE[0],
        o[1] as f64 * OFFSET_VARIANCE[1],
        o[2] as f64 * OFFSET_VARIANCE[2],
        o[3] as f64 * OFFSET_VARIANCE[3],
    ];
    let class = HandClass::from_label(label).expect("label within hand classes");
    decode_offsets(&o, a, class, Some(prob))
}

/// Per-row background loss `-log p(background)`, used for negative mining.
pub fn background_losses(logits: &Tensor, frames: usize) -> Vec<Vec<f64>> {
    let rows = logits.shape()[0];
    let classes = logits.shape()[1];
    let per = rows / frames.max(1);
    (0..frames)
        .map(|f| {
            (0..per)
                .map(|r| {
                    let i = f * per + r;
                    let p = softmax(&logits.data()[i * classes..(i + 1) * classes]);
                    -p[0].max(1e-300).ln()
                })
                .collect()
        })
        .collect()
}

/// Cross-entropy over positives and mined negatives plus smooth-L1 on
/// positive offsets (weight 1).
pub fn detector_loss(tape: &mut Tape<f32>, head: &HeadOutput, assignments: &[MatchAssignment]) -> Result<Var> {
    let rows = tape.value(head.logits).shape()[0];
    let per: usize = assignments.first().map(|a| a.labels.len()).unwrap_or(0);
    if assignments.len() != head.frames || per * head.frames != rows {
        return Err(Error::shape(
            "detector_loss",
            format!("{} assignments of {per} anchors vs {rows} head rows", assignments.len()),
        ));
    }
    let mut labels = Vec::with_capacity(rows);
    let mut weights = Vec::with_capacity(rows);
    let mut target = Vec::with_capacity(rows * 4);
    let mut mask = Vec::with_capacity(rows * 4);
    for a in assignments {
        if a.labels.len() != per {
            return Err(Error::shape("detector_loss", "assignments differ in anchor count"));
        }
        for i in 0..per {
            let pos = a.labels[i] != 0;
            labels.push(a.labels[i]);
            weights.push(if pos || a.negatives[i] { 1.0f32 } else { 0.0 });
            for (k, v) in OFFSET_VARIANCE.iter().enumerate() {
                target.push((a.offsets[i][k] / v) as f32);
                mask.push(if pos { 1.0f32 } else { 0.0 });
            }
        }
    }
    let cls = tape.softmax_cross_entropy(head.logits, &labels, &weights)?;
    let loc = tape.smooth_l1_loss(
        head.offsets,
        &Tensor::new(vec![rows, 4], target)?,
        &Tensor::new(vec![rows, 4], mask)?,
    )?;
    let total = tape.add(cls, loc)?;
    if !tape.value(total).is_finite() {
        return Err(Error::NonFinite {
            context: "detector loss".into(),
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{match_anchors, HandBox};

    fn tiny() -> HandNetConfig {
        HandNetConfig::desk().with_scale_divisor(64).with_input_size(32, 32)
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = HandNet::build(&tiny(), 7).unwrap();
        let b = HandNet::build(&tiny(), 7).unwrap();
        assert_eq!(a.params, b.params);
        let c = HandNet::build(&tiny(), 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn encoder_and_head_are_separate() {
        let net = HandNet::build(&tiny(), 0).unwrap();
        let enc = net.encoder_param_indices();
        assert!(!enc.is_empty() && enc.len() < net.params.len());
        assert!(net.params.iter().all(|p| p.name.starts_with("handnet.g.") || p.name.starts_with("handnet.h.")));
    }

    #[test]
    fn split_detection_matches_composed() {
        let net = HandNet::build(&tiny(), 3).unwrap();
        let px = Tensor::from_fn(&[3, 32, 32], |i| ((i * 37) % 101) as f32 / 100.0);
        let frame = FrameImage::new(px, 4, "e").unwrap();
        let th = Thresholds { confidence: 0.2, nms: 0.45 };
        let direct = net.detect(&frame, th).unwrap();
        let staged = net.detect_from_features(&net.encode(&frame).unwrap(), th).unwrap();
        assert_eq!(direct, staged);
        let batch = net.encode_batch(&[&frame, &frame]).unwrap();
        assert_eq!(batch[1], net.encode(&frame).unwrap());
        let none = net.detect(&frame, Thresholds { confidence: 1.0, nms: 0.45 }).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn zero_frame_features_depend_only_on_biases_downstream() {
        // A zero frame makes the first kernel irrelevant: its output is the bias.
        let net = HandNet::build(&tiny(), 1).unwrap();
        let mut other = net.clone();
        for v in other.params.iter_mut().next().unwrap().value.data_mut() {
            *v = -*v * 3.0 + 0.5;
        }
        let zero = FrameImage::new(Tensor::zeros(&[3, 32, 32]), 0, "e").unwrap();
        assert_eq!(net.encode(&zero).unwrap(), other.encode(&zero).unwrap());
        let lit = FrameImage::new(Tensor::full(&[3, 32, 32], 0.5), 0, "e").unwrap();
        assert_ne!(net.encode(&lit).unwrap(), other.encode(&lit).unwrap());
    }

    #[test]
    fn perfect_predictions_give_tiny_loss() {
        let net = HandNet::build(&tiny(), 0).unwrap();
        let grid = net.anchors().clone();
        let a = grid.anchors[2];
        let truth = DetectionSet::new(0, vec![HandBox::truth(HandClass::MyRight, a.cx + 0.01, a.cy, a.w * 1.1, a.h)]);
        let mut m = match_anchors(&grid, &truth);
        m.negatives.iter_mut().enumerate().for_each(|(i, n)| *n = m.labels[i] == 0 && i % 2 == 0);
        let n = grid.len();
        let logits = Tensor::from_fn(&[n, 5], |j| if j % 5 == m.labels[j / 5] { 30.0 } else { 0.0 });
        let offs = Tensor::from_fn(&[n, 4], |j| (m.offsets[j / 4][j % 4] / OFFSET_VARIANCE[j % 4]) as f32);
        let mut tape = Tape::new();
        let head = HeadOutput {
            logits: tape.leaf(logits, true),
            offsets: tape.leaf(offs, true),
            frames: 1,
        };
        let loss = detector_loss(&mut tape, &head, &[m]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-3);
    }

    #[test]
    fn background_frame_has_no_localization_term() {
        let grid = AnchorGrid::new(2, 2, 0.25, &[1.0]);
        let mut m = match_anchors(&grid, &DetectionSet::default());
        m.negatives = vec![true; 4];
        let mut tape = Tape::new();
        let head = HeadOutput {
            logits: tape.leaf(Tensor::zeros(&[4, 5]), true),
            offsets: tape.leaf(Tensor::full(&[4, 4], 3.0), true),
            frames: 1,
        };
        let loss = detector_loss(&mut tape, &head, &[m]).unwrap();
        assert!((tape.value(loss).data()[0] as f64 - 5f64.ln()).abs() < 1e-6);
    }
}
