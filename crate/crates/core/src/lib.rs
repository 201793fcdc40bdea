pub mod detector;
pub mod evaluation;
pub mod error;
pub mod layers;
pub mod manip;
pub mod regressor;
pub mod seed;
pub mod synthworld;
pub mod tensor;
pub mod training;

pub use detector::{DetectionSet, FeatureMap, FrameImage, HandBox, HandClass, HandNet, HandNetConfig, Thresholds};
pub use error::{Error, Result};
pub use manip::{HandPoint, JointState, ManipConfig, ManipNet};
pub use regressor::{FeatureWindow, RegressionBatch, Regressor, RegressorConfig};
pub use synthworld::{ActivityScript, CameraModel, Episode, ScriptKind, SimArm};
pub use tensor::{Tensor, Tape, Var};
