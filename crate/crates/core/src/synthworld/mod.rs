//! Deterministic synthetic world: scripted first-person interaction
//! episodes with exact hand boxes, a labeled detector set, and a simulated
//! projected 7-joint arm with its logs and an IK oracle.

mod arm;
mod corpus;
mod logs;
mod scene;
mod script;

pub use arm::{arm_fk, hand_point, project_to_image, Axis, CameraModel, SimArm, Vec3, JOINT_AXES};
pub use corpus::{
    frame_file, generate_detector_set, labeled_scene, log_file, read_corpus, read_corpus_manifest, read_episode, read_logs,
    write_corpus, write_episode, write_logs, Corpus, CorpusConfig, CorpusManifest, CorpusPaths, EpisodeManifest,
    EpisodeSummary, LabeledFrame, Scenario,
};
pub use logs::{generate_robot_logs, ik_oracle, pixel_error, ArmSynergy, LogConfig, IK_TOLERANCE};
pub use scene::{
    hand_color, hand_region, pixel_span, render_frame, texture, Entity, EntityKind, ObjectShape, Region, SceneState,
    BACKGROUND, TEXTURE_STD,
};
pub use script::{
    episode_texture, generate_episode, ActivityScript, Episode, Path, ScriptKind, Track, DEFAULT_FPS, HAND_SIZE,
    HAND_SPEED,
};
