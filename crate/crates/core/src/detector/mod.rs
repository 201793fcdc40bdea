//! Hand representation network: a convolutional encoder `g` producing the
//! bottleneck feature map and a decoder + anchor head `h` producing boxes.

mod anchors;
mod boxes;
mod net;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use anchors::{match_anchors, mine_hard_negatives, AnchorGrid, MatchAssignment, MATCH_IOU};
pub use boxes::{decode_offsets, encode_offsets, iou, nms, Anchor, DetectionSet, HandBox, HandClass};
pub use net::{background_losses, decode_detections, detector_loss, HandNet, HeadOutput, OFFSET_VARIANCE};

pub const ENCODER_FILTERS: [usize; 5] = [512, 256, 128, 64, 256];
pub const DECODER_FILTERS: [usize; 5] = [256, 64, 128, 256, 512];
pub const NUM_CLASSES: usize = 5;
pub const MIN_FILTERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandNetConfig {
    /// (height, width) in pixels.
    pub input_size: (usize, usize),
    pub scale_divisor: usize,
    /// Undivided encoder filter counts.
    pub encoder_filters: Vec<usize>,
    /// Undivided decoder filter counts; must mirror `encoder_filters`.
    pub decoder_filters: Vec<usize>,
    pub kernel: usize,
    pub bottleneck_stride: usize,
    /// Stride-2 convolutions ahead of the encoder (counts used as given).
    pub backbone_filters: Vec<usize>,
    pub head_kernel: usize,
    pub anchor_scale: f64,
    pub anchor_aspects: Vec<f64>,
    pub num_classes: usize,
}

impl HandNetConfig {
    /// Full-size filter counts.
    pub fn paper() -> Self {
        HandNetConfig {
            input_size: (300, 300),
            scale_divisor: 1,
            encoder_filters: ENCODER_FILTERS.to_vec(),
            decoder_filters: DECODER_FILTERS.to_vec(),
            kernel: 5,
            bottleneck_stride: 2,
            backbone_filters: vec![64, 128],
            head_kernel: 3,
            anchor_scale: 0.2,
            anchor_aspects: vec![0.75, 1.0, 1.33],
            num_classes: NUM_CLASSES,
        }
    }

    /// 96×96 input, filters divided by 8.
    pub fn desk() -> Self {
        HandNetConfig {
            input_size: (96, 96),
            scale_divisor: 8,
            backbone_filters: vec![8, 16],
            ..Self::paper()
        }
    }

    pub fn with_scale_divisor(mut self, d: usize) -> Self {
        self.scale_divisor = d;
        self
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    fn scaled(&self, filters: &[usize]) -> Vec<usize> {
        filters
            .iter()
            .map(|&f| (f / self.scale_divisor.max(1)).max(MIN_FILTERS))
            .collect()
    }

    pub fn effective_encoder_filters(&self) -> Vec<usize> {
        self.scaled(&self.encoder_filters)
    }

    pub fn effective_decoder_filters(&self) -> Vec<usize> {
        self.scaled(&self.decoder_filters)
    }

    pub fn num_anchors_per_cell(&self) -> usize {
        self.anchor_aspects.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.scale_divisor == 0 {
            return fail("scale_divisor must be positive".into());
        }
        if self.encoder_filters.is_empty() {
            return fail("encoder needs at least one layer".into());
        }
        let mirrored: Vec<usize> = self.encoder_filters.iter().rev().copied().collect();
        if self.decoder_filters != mirrored {
            return fail(format!(
                "decoder filters {:?} must mirror encoder filters {:?}",
                self.decoder_filters, self.encoder_filters
            ));
        }
        if self.encoder_filters.iter().chain(&self.backbone_filters).any(|&f| f == 0) {
            return fail("filter counts must be positive".into());
        }
        if self.kernel % 2 == 0 || self.head_kernel % 2 == 0 {
            return fail("kernel sizes must be odd".into());
        }
        if self.bottleneck_stride == 0 {
            return fail("bottleneck_stride must be positive".into());
        }
        if self.num_classes != NUM_CLASSES {
            return fail(format!("num_classes must be {NUM_CLASSES}"));
        }
        if self.anchor_aspects.is_empty() || self.anchor_aspects.iter().any(|&a| !(a > 0.0)) {
            return fail("anchor aspects must be positive and non-empty".into());
        }
        if !(self.anchor_scale > 0.0) {
            return fail("anchor_scale must be positive".into());
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 {
            return fail("input size must be positive".into());
        }
        self.feature_shape().map(|_| ())
    }

    /// Bottleneck feature shape (C, H', W').
    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        let (mut h, mut w) = self.input_size;
        let pad = self.kernel / 2;
        let down = |x: usize, stride: usize| {
            crate::tensor::conv_output_size(x, self.kernel, stride, pad)
                .ok_or_else(|| Error::Config(format!("input {:?} too small for the network", self.input_size)))
        };
        for _ in &self.backbone_filters {
            h = down(h, 2)?;
            w = down(w, 2)?;
        }
        h = down(h, self.bottleneck_stride)?;
        w = down(w, self.bottleneck_stride)?;
        let c = *self.effective_encoder_filters().last().expect("validated non-empty");
        Ok([c, h, w])
    }

    pub fn anchor_grid(&self) -> Result<AnchorGrid> {
        let [_, h, w] = self.feature_shape()?;
        Ok(AnchorGrid::new(h, w, self.anchor_scale, &self.anchor_aspects))
    }
}

/// Anchor grid for a configuration.
pub fn generate_anchors(config: &HandNetConfig) -> Result<AnchorGrid> {
    config.validate()?;
    config.anchor_grid()
}

/// A rendered RGB frame with channels in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    pub pixels: Tensor<f32>,
    pub frame_index: usize,
    pub episode_id: String,
}

impl FrameImage {
    /// Validates a 3×H×W tensor and clamps it to [0, 1].
    pub fn new(mut pixels: Tensor<f32>, frame_index: usize, episode_id: impl Into<String>) -> Result<Self> {
        if pixels.rank() != 3 || pixels.shape()[0] != 3 {
            return Err(Error::shape(
                "frame",
                format!("frames must be 3×H×W, got {:?}", pixels.shape()),
            ));
        }
        if let Some(i) = pixels.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("frame pixel {i}"),
            });
        }
        for v in pixels.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(FrameImage {
            pixels,
            frame_index,
            episode_id: episode_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Bottleneck activation for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor<f32>,
    pub source_frame: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub confidence: f64,
    pub nms: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            confidence: 0.5,
            nms: 0.45,
        }
    }
}

/// One line of a detection dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub episode: String,
    pub t: usize,
    pub boxes: Vec<HandBox>,
}

pub fn write_detections(out: &mut impl Write, episode: &str, sets: &[DetectionSet]) -> Result<()> {
    for s in sets {
        let rec = DetectionRecord {
            episode: episode.to_owned(),
            t: s.frame_index,
            boxes: s.boxes.clone(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_detections(input: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
