//! Manipulation network: dense map from (current joints, current hand point,
//! future hand point) to future joints for one simulated arm.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionSet, HandClass};
use crate::error::{Error, Result};
use crate::layers::{build_mlp, mlp_forward, DenseLayer};
use crate::seed;
use crate::synthworld::SimArm;
use crate::tensor::{Bound, Element, ParamStore, Tape, Tensor, Var};

pub const NUM_JOINTS: usize = 7;
pub const HIDDEN_UNITS: [usize; 7] = [32, 32, 32, 16, 16, 16, 7];
pub const REFERENCE_RESOLUTION: (usize, usize) = (1280, 720);

/// Joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub angles: [f64; NUM_JOINTS],
}

impl JointState {
    pub fn zeros() -> Self {
        JointState { angles: [0.0; NUM_JOINTS] }
    }

    pub fn distance(&self, other: &JointState) -> f64 {
        self.angles
            .iter()
            .zip(&other.angles)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn lerp(&self, other: &JointState, s: f64) -> JointState {
        let mut out = *self;
        for (o, (&a, &b)) in out.angles.iter_mut().zip(self.angles.iter().zip(&other.angles)) {
            *o = a + (b - a) * s;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().all(|a| a.is_finite())
    }
}

/// Image-plane point in pixels at the reference resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandPoint {
    pub u: f64,
    pub v: f64,
}

impl HandPoint {
    pub fn center(resolution: (usize, usize)) -> Self {
        HandPoint {
            u: resolution.0 as f64 / 2.0,
            v: resolution.1 as f64 / 2.0,
        }
    }

    pub fn distance(&self, other: &HandPoint) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Normalized [0, 1] image coordinates.
    pub fn normalized(&self, resolution: (usize, usize)) -> (f64, f64) {
        (self.u / resolution.0 as f64, self.v / resolution.1 as f64)
    }

    pub fn from_normalized(x: f64, y: f64, resolution: (usize, usize)) -> Self {
        HandPoint {
            u: x * resolution.0 as f64,
            v: y * resolution.1 as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmId {
    Left,
    Right,
}

impl ArmId {
    pub fn hand_class(self) -> HandClass {
        match self {
            ArmId::Left => HandClass::MyLeft,
            ArmId::Right => HandClass::MyRight,
        }
    }
}

/// One log line: projected hand point plus the seven joint angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotLogRecord {
    pub t: usize,
    pub arm: ArmId,
    pub u: f64,
    pub v: f64,
    pub joints: [f64; NUM_JOINTS],
}

impl RobotLogRecord {
    pub fn hand(&self) -> HandPoint {
        HandPoint { u: self.u, v: self.v }
    }

    pub fn joint_state(&self) -> JointState {
        JointState { angles: self.joints }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipConfig {
    pub hidden_units: Vec<usize>,
    /// When false the current joints are not an input (base-control variant).
    pub use_joints: bool,
    pub reference_resolution: (usize, usize),
}

impl Default for ManipConfig {
    fn default() -> Self {
        ManipConfig {
            hidden_units: HIDDEN_UNITS.to_vec(),
            use_joints: true,
            reference_resolution: REFERENCE_RESOLUTION,
        }
    }
}

impl ManipConfig {
    pub fn base_control() -> Self {
        ManipConfig {
            use_joints: false,
            ..Self::default()
        }
    }

    pub fn input_width(&self) -> usize {
        if self.use_joints {
            NUM_JOINTS + 4
        } else {
            4
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_units.last() != Some(&NUM_JOINTS) {
            return Err(Error::Config(format!("last layer must have {NUM_JOINTS} units")));
        }
        if self.hidden_units.iter().any(|&u| u == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let (w, h) = self.reference_resolution;
        if w == 0 || h == 0 {
            return Err(Error::Config("reference resolution must be positive".into()));
        }
        Ok(())
    }
}

/// (Ẑ_t, Ŷ_t, Ŷ_{t+Δ}, Ẑ_{t+Δ}) from one log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManipTuple {
    pub joints_now: JointState,
    pub hand_now: HandPoint,
    pub hand_future: HandPoint,
    pub joints_future: JointState,
}

/// Every (t, t+Δ) pair of a log sequence.
pub fn tuples_from_log(records: &[RobotLogRecord], delta: usize) -> Vec<ManipTuple> {
    if delta == 0 || records.len() <= delta {
        return Vec::new();
    }
    records
        .windows(delta + 1)
        .map(|w| ManipTuple {
            joints_now: w[0].joint_state(),
            hand_now: w[0].hand(),
            hand_future: w[delta].hand(),
            joints_future: w[delta].joint_state(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ManipNet<T: Element = f32> {
    pub config: ManipConfig,
    pub arm: SimArm,
    pub params: ParamStore<T>,
    layers: Vec<DenseLayer>,
}

impl<T: Element> ManipNet<T> {
    pub fn build(config: &ManipConfig, arm: &SimArm, seed: u64) -> Result<Self> {
        config.validate()?;
        arm.validate()?;
        let mut rng = seed::rng(seed);
        let mut params = ParamStore::new();
        let layers = build_mlp(&mut params, "manip", config.input_width(), &config.hidden_units, &mut rng)?;
        Ok(ManipNet {
            config: config.clone(),
            arm: arm.clone(),
            params,
            layers,
        })
    }

    pub fn from_params(config: &ManipConfig, arm: &SimArm, params: &ParamStore<T>) -> Result<Self> {
        let mut net = Self::build(config, arm, 0)?;
        net.params.load_values(params)?;
        Ok(net)
    }

    /// Same network in another precision.
    pub fn cast<U: Element>(&self) -> ManipNet<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast()).expect("unique names");
        }
        ManipNet {
            config: self.config.clone(),
            arm: self.arm.clone(),
            params,
            layers: self.layers.clone(),
        }
    }

    pub fn input_row(&self, joints: &JointState, now: &HandPoint, future: &HandPoint) -> Vec<T> {
        let res = self.config.reference_resolution;
        let mut row = Vec::with_capacity(self.config.input_width());
        if self.config.use_joints {
            row.extend(self.arm.normalize(joints).iter().map(|&v| T::from_f64(v)));
        }
        let (a, b) = now.normalized(res);
        let (c, d) = future.normalized(res);
        row.extend([a, b, c, d].iter().map(|&v| T::from_f64(v)));
        row
    }

    /// Joint predictions in radians (unclamped) for a batch of input rows.
    pub fn forward(&self, tape: &mut Tape<T>, params: &Bound, inputs: Var) -> Result<Var> {
        let normalized = mlp_forward(&self.layers, tape, params, inputs)?;
        let mut scale = Tensor::zeros(&[NUM_JOINTS, NUM_JOINTS]);
        let mut center = Tensor::zeros(&[NUM_JOINTS]);
        for (j, &(lo, hi)) in self.arm.joint_limits.iter().enumerate() {
            scale.data_mut()[j * NUM_JOINTS + j] = T::from_f64((hi - lo) / 2.0);
            center.data_mut()[j] = T::from_f64((hi + lo) / 2.0);
        }
        let s = tape.constant(scale);
        let c = tape.constant(center);
        tape.dense(normalized, s, c)
    }

    pub fn batch_inputs(&self, batch: &[ManipTuple]) -> Result<Tensor<T>> {
        let w = self.config.input_width();
        let mut data = Vec::with_capacity(batch.len() * w);
        for t in batch {
            data.extend(self.input_row(&t.joints_now, &t.hand_now, &t.hand_future));
        }
        Tensor::new(vec![batch.len(), w], data)
    }

    pub fn batch_targets(batch: &[ManipTuple]) -> Result<Tensor<T>> {
        let data = batch
            .iter()
            .flat_map(|t| t.joints_future.angles.iter().map(|&v| T::from_f64(v)))
            .collect();
        Tensor::new(vec![batch.len(), NUM_JOINTS], data)
    }
}

/// Mean squared joint error (rad²) over a batch.
pub fn manip_loss<T: Element>(net: &ManipNet<T>, tape: &mut Tape<T>, params: &Bound, batch: &[ManipTuple]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("manipulation batch".into()));
    }
    let x = tape.constant(net.batch_inputs(batch)?);
    let y = net.forward(tape, params, x)?;
    tape.mse_loss(y, &ManipNet::<T>::batch_targets(batch)?)
}

/// Ẑ_{t+Δ} = m(Ẑ_t, Ŷ_t, Ŷ_{t+Δ}), clamped to the joint limits.
pub fn predict_joints<T: Element>(
    net: &ManipNet<T>,
    current: &JointState,
    hand_now: &HandPoint,
    hand_future: &HandPoint,
) -> Result<JointState> {
    if !current.is_finite() || !hand_now.is_finite() || !hand_future.is_finite() {
        return Err(Error::NonFinite {
            context: "manipulation input".into(),
        });
    }
    let mut tape = Tape::new();
    let bound = net.params.bind_frozen(&mut tape);
    let row = net.input_row(current, hand_now, hand_future);
    let x = tape.constant(Tensor::new(vec![row.len()], row)?);
    let y = net.forward(&mut tape, &bound, x)?;
    let mut q = JointState::zeros();
    for (a, v) in q.angles.iter_mut().zip(tape.value(y).data()) {
        *a = v.as_f64();
    }
    Ok(net.arm.clamp(&q))
}

/// Center of the best box of `class` in pixels, or `fallback` if absent.
pub fn detections_to_hand_point(
    detections: &DetectionSet,
    class: HandClass,
    fallback: HandPoint,
    resolution: (usize, usize),
) -> HandPoint {
    match detections.best_of_class(class) {
        Some(b) => HandPoint::from_normalized(b.cx, b.cy, resolution),
        None => fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::HandBox;

    #[test]
    fn paper_parameter_count() {
        let net = ManipNet::<f32>::build(&ManipConfig::default(), &SimArm::default(), 0).unwrap();
        let expect = 11 * 32 + 32 + 32 * 32 + 32 + 32 * 32 + 32 + 32 * 16 + 16 + 16 * 16 + 16 + 16 * 16 + 16 + 16 * 7 + 7;
        assert_eq!(net.params.num_scalars(), expect);
        let base = ManipNet::<f32>::build(&ManipConfig::base_control(), &SimArm::default(), 0).unwrap();
        assert_eq!(base.config.input_width(), 4);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ManipNet::<f32>::build(&ManipConfig::default(), &SimArm::default(), 5).unwrap();
        let b = ManipNet::<f32>::build(&ManipConfig::default(), &SimArm::default(), 5).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn hand_point_from_detections() {
        let fallback = HandPoint { u: 1.0, v: 2.0 };
        let res = REFERENCE_RESOLUTION;
        assert_eq!(detections_to_hand_point(&DetectionSet::default(), HandClass::MyRight, fallback, res), fallback);
        let b = |cx, s| HandBox {
            score: Some(s),
            ..HandBox::truth(HandClass::MyRight, cx, 0.5, 0.1, 0.1)
        };
        let one = DetectionSet::new(0, vec![b(0.5, 0.9)]);
        assert_eq!(
            detections_to_hand_point(&one, HandClass::MyRight, fallback, res),
            HandPoint { u: 640.0, v: 360.0 }
        );
        let two = DetectionSet::new(0, vec![b(0.25, 0.6), b(0.75, 0.9)]);
        assert_eq!(detections_to_hand_point(&two, HandClass::MyRight, fallback, res).u, 960.0);
    }

    #[test]
    fn predictions_are_clamped() {
        let arm = SimArm::default();
        let mut net = ManipNet::<f32>::build(&ManipConfig::default(), &arm, 1).unwrap();
        for p in net.params.iter_mut() {
            for v in p.value.data_mut() {
                *v *= 50.0;
            }
        }
        let far = HandPoint { u: 1e5, v: -1e5 };
        let q = predict_joints(&net, &JointState::zeros(), &far, &far).unwrap();
        assert!(arm.check_limits(&q).is_ok());
        let nan = HandPoint { u: f64::NAN, v: 0.0 };
        assert!(predict_joints(&net, &JointState::zeros(), &nan, &far).is_err());
    }

    #[test]
    fn tuples_pair_t_with_t_plus_delta() {
        let recs: Vec<RobotLogRecord> = (0..5)
            .map(|t| RobotLogRecord {
                t,
                arm: ArmId::Right,
                u: t as f64,
                v: 0.0,
                joints: [t as f64 * 0.1; NUM_JOINTS],
            })
            .collect();
        let tuples = tuples_from_log(&recs, 2);
        assert_eq!(tuples.len(), 3);
        assert_eq!(tuples[1].hand_now.u, 1.0);
        assert_eq!(tuples[1].hand_future.u, 3.0);
        assert!(tuples_from_log(&recs, 5).is_empty());
    }

    #[test]
    fn log_record_json_shape() {
        let r = RobotLogRecord {
            t: 3,
            arm: ArmId::Right,
            u: 10.5,
            v: 20.0,
            joints: [0.0; NUM_JOINTS],
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"t":3,"arm":"right","u":10.5,"v":20.0,"joints":[0.0,0.0,0.0,0.0,0.0,0.0,0.0]}"#);
    }
}
