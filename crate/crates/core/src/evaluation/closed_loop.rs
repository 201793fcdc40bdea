use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{FeatureMap, FrameImage, HandClass, HandNet, Thresholds};
use crate::error::{Error, Result};
use crate::manip::{detections_to_hand_point, predict_joints, HandPoint, JointState, ManipNet};
use crate::regressor::{stack_window, FeatureWindow, Regressor};
use crate::seed;
use crate::synthworld::{
    episode_texture, hand_point, ik_oracle, render_frame, ActivityScript, ArmSynergy, CameraModel, EntityKind, Path,
    Scenario, SceneState, SimArm,
};

/// Tracking tolerance as a fraction of the frame diagonal.
pub const LOOP_TOLERANCE_FRACTION: f64 = 0.05;

/// What drives the robot hand.
pub enum Controller<'a> {
    /// Scripted future hand position and the IK oracle.
    Oracle,
    /// Future boxes from the regressor, joints from the manipulation net.
    Learned {
        net: &'a HandNet,
        regressor: &'a Regressor,
        manip: &'a ManipNet,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub frame_size: (usize, usize),
    /// Prediction horizon in frames.
    pub delta: usize,
    /// Frames between control updates. The arm moves toward each target at
    /// the rate that reaches it after `delta` frames.
    pub control_interval: usize,
    /// Frames of history before control starts; the robot follows the goal
    /// exactly during them.
    pub warmup: usize,
    /// Control updates per episode.
    pub max_steps: usize,
    pub tolerance_fraction: f64,
    pub thresholds: Thresholds,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            frame_size: (96, 96),
            delta: 10,
            control_interval: 10,
            warmup: 10,
            max_steps: 100,
            tolerance_fraction: LOOP_TOLERANCE_FRACTION,
            thresholds: Thresholds::default(),
        }
    }
}

/// One controlled frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopStep {
    pub frame: usize,
    /// Hand point the controller is steering toward.
    pub predicted: HandPoint,
    pub goal: HandPoint,
    pub hand: HandPoint,
    pub joints: JointState,
    pub pixel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub success: bool,
    pub diverged: bool,
    pub mean_error: f64,
    /// Control updates issued.
    pub steps: usize,
    pub trace: Vec<LoopStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub mode: String,
    pub tolerance_px: f64,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeOutcome>,
}

impl ClosedLoopReport {
    pub fn new(mode: &str, tolerance_px: f64, episodes: Vec<EpisodeOutcome>) -> Self {
        let ok = episodes.iter().filter(|e| e.success).count();
        let success_rate = if episodes.is_empty() { 0.0 } else { ok as f64 / episodes.len() as f64 };
        ClosedLoopReport {
            mode: mode.into(),
            tolerance_px,
            success_rate,
            episodes,
        }
    }

    /// One line per episode plus the aggregate.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for e in &self.episodes {
            s.push_str(&format!(
                "{:<10} {:<7} mean error {:>8.2} px  steps {}{}\n",
                e.episode_id,
                if e.success { "success" } else { "failure" },
                e.mean_error,
                e.steps,
                if e.diverged { "  (diverged)" } else { "" }
            ));
        }
        s.push_str(&format!(
            "{} success rate: {:.2} ({} episodes, tolerance {:.1} px)\n",
            self.mode,
            self.success_rate,
            self.episodes.len(),
            self.tolerance_px
        ));
        s
    }
}

/// Held-out interaction scripts for closed-loop runs.
pub fn closed_loop_scripts(n: usize, seed: u64, duration: (usize, usize), scenario: Scenario) -> Vec<ActivityScript> {
    let base = seed::derive_str(seed, "closed_loop");
    (0..n)
        .map(|i| {
            let s = seed::derive(base, i as u64);
            let len = seed::rng(s).gen_range(duration.0..=duration.1.max(duration.0));
            ActivityScript::sample(scenario.kind(i), len, s)
        })
        .collect()
}

/// Scene with the wearer's right hand (and anything attached to it) moved so
/// the hand sits at `robot` (normalized).
fn with_robot_hand(script: &ActivityScript, state: &SceneState, robot: (f64, f64)) -> SceneState {
    let Some(goal) = state.hand(HandClass::MyRight) else {
        return state.clone();
    };
    let (dx, dy) = (robot.0 - goal.cx, robot.1 - goal.cy);
    let mut out = state.clone();
    for (track, e) in script.tracks.iter().zip(out.entities.iter_mut()) {
        let moves = matches!(track.kind, EntityKind::Hand { class: HandClass::MyRight })
            || matches!(track.path, Path::Attached { to: HandClass::MyRight, .. });
        if moves {
            e.cx += dx;
            e.cy += dy;
        }
    }
    out
}

/// Runs one scripted episode in closed loop: every `control_interval` frames
/// the controller picks a target hand point Δ frames ahead and joints to
/// reach it, and the arm moves toward them linearly in joint space. The robot hand is
/// rendered as the wearer's right hand; the goal is the scripted one.
pub fn closed_loop_episode(
    controller: &Controller,
    script: &ActivityScript,
    episode_id: &str,
    arm: &SimArm,
    cam: &CameraModel,
    config: &ClosedLoopConfig,
) -> Result<EpisodeOutcome> {
    if config.delta == 0 || config.warmup == 0 || config.control_interval == 0 {
        return Err(Error::Config("closed loop needs positive Δ, control interval and warm-up".into()));
    }
    if let Controller::Learned { regressor, .. } = controller {
        if regressor.config.k > config.warmup {
            return Err(Error::Config("warm-up must cover the regressor window".into()));
        }
    }
    let states = script.states()?;
    let len = states.len();
    let res = cam.resolution;
    let diagonal = cam.diagonal();
    let tolerance = config.tolerance_fraction * diagonal;
    let goals: Vec<Option<HandPoint>> = states
        .iter()
        .map(|s| s.hand(HandClass::MyRight).map(|h| HandPoint::from_normalized(h.cx, h.cy, res)))
        .collect();
    let goal = |f: usize| goals[f].ok_or_else(|| Error::Config(format!("script has no goal hand at frame {f}")));
    let tex = episode_texture(script, config.frame_size);
    let mut frames: Vec<FrameImage> = Vec::with_capacity(len);
    let mut maps: Vec<Option<FeatureMap>> = Vec::with_capacity(len);
    let render = |f: usize, hand: &HandPoint, frames: &mut Vec<FrameImage>, maps: &mut Vec<Option<FeatureMap>>| -> Result<()> {
        let state = with_robot_hand(script, &states[f], hand.normalized(res));
        frames.push(render_frame(&state, config.frame_size, Some(&tex), f, episode_id)?);
        maps.push(None);
        Ok(())
    };

    let warmup = config.warmup.min(len);
    let synergy = ArmSynergy::default();
    let mut q = synergy.joints(0.0, 0.0);
    for f in 0..warmup {
        q = ik_oracle(arm, cam, &goal(f)?, &q).unwrap_or(q);
        let h = hand_point(arm, cam, &q)?;
        render(f, &h, &mut frames, &mut maps)?;
    }

    let mut trace = Vec::new();
    let mut steps = 0;
    let mut diverged = false;
    let mut t = warmup - 1;
    'control: while t + 1 < len && steps < config.max_steps {
        let hand_now = match hand_point(arm, cam, &q) {
            Ok(h) => h,
            Err(_) => {
                diverged = true;
                break;
            }
        };
        let future = (t + config.delta).min(len - 1);
        let (target, q_target) = match controller {
            Controller::Oracle => {
                let target = goal(future)?;
                (target, ik_oracle(arm, cam, &target, &q).unwrap_or(q))
            }
            Controller::Learned { net, regressor, manip } => {
                let k = regressor.config.k;
                for f in t + 1 - k..=t {
                    if maps[f].is_none() {
                        maps[f] = Some(net.encode(&frames[f])?);
                    }
                }
                let window = FeatureWindow {
                    maps: (t + 1 - k..=t).map(|f| maps[f].clone().expect("encoded")).collect(),
                };
                let fmap = regressor.regress_future(&stack_window(&window, k)?, t + regressor.config.delta)?;
                let dets = net.detect_from_features(&fmap, config.thresholds)?;
                let target = detections_to_hand_point(&dets, HandClass::MyRight, hand_now, res);
                (target, predict_joints(manip, &q, &hand_now, &target)?)
            }
        };
        steps += 1;
        let start = q;
        for s in 1..=config.control_interval.min(config.delta) {
            let f = t + s;
            if f >= len {
                break;
            }
            q = start.lerp(&q_target, s as f64 / config.delta as f64);
            let hand = match hand_point(arm, cam, &q) {
                Ok(h) if h.is_finite() => h,
                _ => {
                    diverged = true;
                    break 'control;
                }
            };
            let g = goal(f)?;
            let err = hand.distance(&g);
            trace.push(LoopStep {
                frame: f,
                predicted: target,
                goal: g,
                hand,
                joints: q,
                pixel_error: err,
            });
            if !(err <= diagonal) {
                diverged = true;
                break 'control;
            }
            render(f, &hand, &mut frames, &mut maps)?;
        }
        t = (t + config.control_interval.min(config.delta)).min(len - 1);
    }
    let mean_error = if trace.is_empty() {
        0.0
    } else {
        trace.iter().map(|s| s.pixel_error).sum::<f64>() / trace.len() as f64
    };
    Ok(EpisodeOutcome {
        episode_id: episode_id.into(),
        success: !diverged && !trace.is_empty() && mean_error <= tolerance,
        diverged,
        mean_error,
        steps,
        trace,
    })
}

/// Closed-loop runs over several scripts.
pub fn run_closed_loop(
    mode: &str,
    controller: &Controller,
    scripts: &[ActivityScript],
    arm: &SimArm,
    cam: &CameraModel,
    config: &ClosedLoopConfig,
) -> Result<ClosedLoopReport> {
    let episodes = scripts
        .iter()
        .enumerate()
        .map(|(i, s)| closed_loop_episode(controller, s, &format!("loop_{i:03}"), arm, cam, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClosedLoopReport::new(mode, config.tolerance_fraction * cam.diagonal(), episodes))
}
