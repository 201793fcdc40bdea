//! Fully convolutional future regression: a window of K bottleneck feature
//! maps in, the feature map Δ frames ahead out.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionSet, FeatureMap, FrameImage, HandNet, Thresholds, MIN_FILTERS};
use crate::error::{Error, Result};
use crate::layers::{forward_all, ConvKind, ConvLayer};
use crate::seed;
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

pub const TRUNK_FILTERS: [usize; 7] = [256; 7];
pub const CONTEXT_FILTERS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    /// Window length.
    pub k: usize,
    /// Prediction horizon in frames.
    pub delta: usize,
    /// Undivided trunk filter counts.
    pub trunk_filters: Vec<usize>,
    pub trunk_kernel: usize,
    /// Undivided context filter count.
    pub context_filters: usize,
    pub context_kernel: usize,
    /// The head always emits one bottleneck's worth of channels.
    pub head_kernel: usize,
    pub scale_divisor: usize,
}

impl RegressorConfig {
    pub fn paper(k: usize) -> Self {
        RegressorConfig {
            k,
            delta: 30,
            trunk_filters: TRUNK_FILTERS.to_vec(),
            trunk_kernel: 5,
            context_filters: CONTEXT_FILTERS,
            context_kernel: 13,
            head_kernel: 1,
            scale_divisor: 1,
        }
    }

    /// Trunk 7 × 32, context 128 × 7×7, Δ = 10 at 10 fps.
    pub fn desk(k: usize) -> Self {
        RegressorConfig {
            delta: 10,
            context_kernel: 7,
            scale_divisor: 8,
            ..Self::paper(k)
        }
    }

    fn scaled(&self, f: usize) -> usize {
        (f / self.scale_divisor.max(1)).max(MIN_FILTERS)
    }

    pub fn effective_trunk_filters(&self) -> Vec<usize> {
        self.trunk_filters.iter().map(|&f| self.scaled(f)).collect()
    }

    pub fn effective_context_filters(&self) -> usize {
        self.scaled(self.context_filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.delta == 0 {
            return Err(Error::Config("K and delta must be at least 1".into()));
        }
        if self.scale_divisor == 0 {
            return Err(Error::Config("scale_divisor must be positive".into()));
        }
        if [self.trunk_kernel, self.context_kernel, self.head_kernel].iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("regressor kernels must be odd".into()));
        }
        if self.trunk_filters.iter().any(|&f| f == 0) || self.context_filters == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        Ok(())
    }
}

/// K consecutive feature maps of one episode, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWindow {
    pub maps: Vec<FeatureMap>,
}

impl FeatureWindow {
    /// Frame index of the newest map.
    pub fn current_frame(&self) -> Option<usize> {
        self.maps.last().map(|m| m.source_frame)
    }
}

/// Channel-stacks a window with frame t in the first block and frame
/// t−(K−1) in the last.
pub fn stack_window(window: &FeatureWindow, k: usize) -> Result<Tensor> {
    if window.maps.len() != k {
        return Err(Error::shape(
            "stack_window",
            format!("window holds {} maps, expected K = {k}", window.maps.len()),
        ));
    }
    for pair in window.maps.windows(2) {
        if pair[1].source_frame != pair[0].source_frame + 1 {
            return Err(Error::shape(
                "stack_window",
                format!("frames {} and {} are not consecutive", pair[0].source_frame, pair[1].source_frame),
            ));
        }
        if pair[1].values.shape() != pair[0].values.shape() {
            return Err(Error::shape("stack_window", "feature maps differ in shape"));
        }
    }
    let newest_first: Vec<&Tensor> = window.maps.iter().rev().map(|m| &m.values).collect();
    concat_maps(&newest_first)
}

/// Channel concatenation of C×H×W maps in argument order.
pub fn concat_maps(maps: &[&Tensor]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::shape("stack_window", "empty window"))?;
    let s = first.shape();
    if s.len() != 3 || maps.iter().any(|m| m.shape() != s) {
        return Err(Error::shape("stack_window", "maps must share one C×H×W shape"));
    }
    let mut data = Vec::with_capacity(first.len() * maps.len());
    for m in maps {
        data.extend_from_slice(m.data());
    }
    Tensor::new(vec![s[0] * maps.len(), s[1], s[2]], data)
}

/// Inputs and targets only: the regressor never sees boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBatch {
    /// N × (K·C) × H × W stacked windows.
    pub inputs: Tensor,
    /// N × C × H × W features Δ frames after each window's newest frame.
    pub targets: Tensor,
}

#[derive(Clone, Debug)]
pub struct Regressor {
    pub config: RegressorConfig,
    pub params: ParamStore,
    layers: Vec<ConvLayer>,
    bottleneck: [usize; 3],
}

impl Regressor {
    pub fn build(config: &RegressorConfig, bottleneck: [usize; 3], seed: u64) -> Result<Regressor> {
        config.validate()?;
        let [c, h, w] = bottleneck;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("invalid bottleneck shape {bottleneck:?}")));
        }
        if config.context_kernel > h.min(w) {
            return Err(Error::Config(format!(
                "context kernel {} exceeds the {h}×{w} feature map",
                config.context_kernel
            )));
        }
        let mut rng = seed::rng(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut ch = config.k * c;
        for (i, &f) in config.effective_trunk_filters().iter().enumerate() {
            let name = format!("regressor.trunk{}", i + 1);
            layers.push(ConvLayer::add(&mut params, &name, ConvKind::Conv, ch, f, config.trunk_kernel, 1, true, &mut rng)?);
            ch = f;
        }
        let ctx = config.effective_context_filters();
        layers.push(ConvLayer::add(&mut params, "regressor.context", ConvKind::Conv, ch, ctx, config.context_kernel, 1, true, &mut rng)?);
        layers.push(ConvLayer::add(&mut params, "regressor.head", ConvKind::Conv, ctx, c, config.head_kernel, 1, false, &mut rng)?);
        Ok(Regressor {
            config: config.clone(),
            params,
            layers,
            bottleneck,
        })
    }

    pub fn from_params(config: &RegressorConfig, bottleneck: [usize; 3], params: &ParamStore) -> Result<Regressor> {
        let mut reg = Regressor::build(config, bottleneck, 0)?;
        reg.params.load_values(params)?;
        Ok(reg)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn bottleneck(&self) -> [usize; 3] {
        self.bottleneck
    }

    pub fn input_channels(&self) -> usize {
        self.config.k * self.bottleneck[0]
    }

    /// `r` on a tape; `x` is (K·C)×H×W or N×(K·C)×H×W.
    pub fn forward(&self, tape: &mut Tape<f32>, params: &Bound, x: Var) -> Result<Var> {
        let s = tape.value(x).shape();
        if s.len() < 3 || s[s.len() - 3] != self.input_channels() {
            return Err(Error::shape(
                "regress_future",
                format!("input {:?} needs {} channels (K × bottleneck)", s, self.input_channels()),
            ));
        }
        forward_all(&self.layers, tape, params, x)
    }

    /// Predicted feature map for frame `future_frame`.
    pub fn regress_future(&self, stacked: &Tensor, future_frame: usize) -> Result<FeatureMap> {
        if stacked.rank() != 3 {
            return Err(Error::shape("regress_future", format!("expected (K·C)×H×W, got {:?}", stacked.shape())));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(stacked.clone());
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(FeatureMap {
            values: tape.take_value(y),
            source_frame: future_frame,
        })
    }
}

/// Mean squared error between regressed and target features.
pub fn regressor_loss(reg: &Regressor, tape: &mut Tape<f32>, params: &Bound, batch: &RegressionBatch) -> Result<Var> {
    let x = tape.constant(batch.inputs.clone());
    let y = reg.forward(tape, params, x)?;
    if tape.value(y).shape() != batch.targets.shape() {
        return Err(Error::shape(
            "regressor_loss",
            format!("prediction {:?} vs target {:?}", tape.value(y).shape(), batch.targets.shape()),
        ));
    }
    tape.mse_loss(y, &batch.targets)
}

/// `h(r(stack(g(x))))` for K consecutive frames, oldest first.
pub fn predict_future_boxes(net: &HandNet, reg: &Regressor, frames: &[&FrameImage], thresholds: Thresholds) -> Result<DetectionSet> {
    let maps = frames.iter().map(|f| net.encode(f)).collect::<Result<Vec<_>>>()?;
    let window = FeatureWindow { maps };
    let stacked = stack_window(&window, reg.config.k)?;
    let t = window.current_frame().expect("non-empty window");
    let future = reg.regress_future(&stacked, t + reg.config.delta)?;
    net.detect_from_features(&future, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::HandNetConfig;

    fn map(t: usize, fill: f32) -> FeatureMap {
        FeatureMap {
            values: Tensor::full(&[2, 3, 3], fill),
            source_frame: t,
        }
    }

    #[test]
    fn paper_layer_count() {
        let reg = Regressor::build(&RegressorConfig::paper(1), [256, 19, 19], 0);
        assert_eq!(reg.unwrap().num_layers(), 9);
    }

    #[test]
    fn input_channels_scale_with_k() {
        let shape = HandNetConfig::desk().feature_shape().unwrap();
        let r1 = Regressor::build(&RegressorConfig::desk(1), shape, 0).unwrap();
        let r10 = Regressor::build(&RegressorConfig::desk(10), shape, 0).unwrap();
        assert_eq!(r1.input_channels(), shape[0]);
        assert_eq!(r10.input_channels(), 10 * shape[0]);
        assert_eq!(RegressorConfig::desk(1).effective_trunk_filters(), vec![32; 7]);
        assert_eq!(RegressorConfig::desk(1).effective_context_filters(), 128);
    }

    #[test]
    fn output_keeps_spatial_dims() {
        let cfg = RegressorConfig {
            context_kernel: 3,
            ..RegressorConfig::desk(2)
        };
        let reg = Regressor::build(&cfg, [4, 5, 7], 3).unwrap();
        let x = Tensor::from_fn(&[8, 5, 7], |i| (i as f32 * 0.37).sin());
        let a = reg.regress_future(&x, 12).unwrap();
        assert_eq!(a.values.shape(), &[4, 5, 7]);
        assert_eq!(a.source_frame, 12);
        assert_eq!(a, reg.regress_future(&x, 12).unwrap());
    }

    #[test]
    fn oversized_context_rejected() {
        let cfg = RegressorConfig::paper(1);
        assert!(matches!(Regressor::build(&cfg, [256, 12, 12], 0), Err(Error::Config(_))));
    }

    #[test]
    fn stacking_puts_newest_first() {
        let w = FeatureWindow {
            maps: vec![map(4, 1.0), map(5, 2.0), map(6, 3.0)],
        };
        let s = stack_window(&w, 3).unwrap();
        assert_eq!(s.shape(), &[6, 3, 3]);
        assert_eq!(s.data()[0], 3.0);
        assert_eq!(s.data()[18], 2.0);
        assert_eq!(s.data()[36], 1.0);
        let single = FeatureWindow { maps: vec![map(0, 5.0)] };
        assert_eq!(stack_window(&single, 1).unwrap(), single.maps[0].values);
    }

    #[test]
    fn bad_windows_rejected() {
        let gap = FeatureWindow {
            maps: vec![map(1, 0.0), map(3, 0.0)],
        };
        assert!(stack_window(&gap, 2).is_err());
        let short = FeatureWindow { maps: vec![map(1, 0.0)] };
        assert!(stack_window(&short, 2).is_err());
    }
}
