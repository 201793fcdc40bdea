use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{hand_region, render_frame, texture, Entity, EntityKind, ObjectShape, SceneState};
use crate::detector::{DetectionSet, FrameImage, HandClass};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    ClearTable,
    PushTrivet,
    Static,
    ConstantVelocity,
}

impl ScriptKind {
    pub fn is_moving(self) -> bool {
        !matches!(self, ScriptKind::Static)
    }

    pub fn parse(s: &str) -> Option<ScriptKind> {
        match s {
            "clear_table" => Some(ScriptKind::ClearTable),
            "push_trivet" => Some(ScriptKind::PushTrivet),
            "static" => Some(ScriptKind::Static),
            "constant_velocity" => Some(ScriptKind::ConstantVelocity),
            _ => None,
        }
    }
}

/// Parametric center trajectory, in normalized units per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum Path {
    Fixed { x: f64, y: f64 },
    Linear { x: f64, y: f64, vx: f64, vy: f64 },
    /// Constant-speed travel through the points; holds the last one.
    Waypoints { points: Vec<(f64, f64)>, speed: f64 },
    /// Same x as another hand, vertically mirrored about the image middle.
    Mirror { of: HandClass },
    /// Rigidly offset from a hand.
    Attached { to: HandClass, dx: f64, dy: f64 },
}

impl Path {
    fn is_dependent(&self) -> bool {
        matches!(self, Path::Mirror { .. } | Path::Attached { .. })
    }

    fn independent_positions(&self, duration: usize) -> Vec<(f64, f64)> {
        match self {
            Path::Fixed { x, y } => vec![(*x, *y); duration],
            Path::Linear { x, y, vx, vy } => (0..duration)
                .map(|t| (x + vx * t as f64, y + vy * t as f64))
                .collect(),
            Path::Waypoints { points, speed } => {
                let mut out = Vec::with_capacity(duration);
                let mut pos = points[0];
                let mut next = 1;
                for _ in 0..duration {
                    out.push(pos);
                    let mut budget = *speed;
                    while budget > 0.0 && next < points.len() {
                        let (tx, ty) = points[next];
                        let d = ((tx - pos.0).powi(2) + (ty - pos.1).powi(2)).sqrt();
                        if d <= budget {
                            pos = (tx, ty);
                            budget -= d;
                            next += 1;
                        } else {
                            pos = (pos.0 + (tx - pos.0) * budget / d, pos.1 + (ty - pos.1) * budget / d);
                            budget = 0.0;
                        }
                    }
                }
                out
            }
            Path::Mirror { .. } | Path::Attached { .. } => unreachable!("dependent path"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub kind: EntityKind,
    pub w: f64,
    pub h: f64,
    pub path: Path,
}

/// A scripted episode: tracks are drawn in order (objects before hands).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityScript {
    pub kind: ScriptKind,
    pub duration: usize,
    pub fps: usize,
    pub tracks: Vec<Track>,
    /// Std of per-frame positional jitter on hands (normalized units).
    pub jitter: f64,
    pub seed: u64,
}

pub const DEFAULT_FPS: usize = 10;
/// Hand speed range (normalized units per frame at the default rate).
pub const HAND_SPEED: (f64, f64) = (0.008, 0.014);
pub const HAND_SIZE: (f64, f64) = (0.17, 0.24);

fn hand_size(rng: &mut impl Rng) -> (f64, f64) {
    let s = rng.gen_range(HAND_SIZE.0..HAND_SIZE.1);
    let aspect: f64 = rng.gen_range(0.85..1.18);
    (s * aspect.sqrt(), s / aspect.sqrt())
}

fn waypoints(class: HandClass, duration: usize, speed: f64, rng: &mut impl Rng) -> Path {
    let region = hand_region(class);
    let mut points = vec![region.sample(rng)];
    let mut length = 0.0;
    while length < speed * duration as f64 + 0.1 {
        let last = *points.last().unwrap();
        let p = loop {
            let p = region.sample(rng);
            if ((p.0 - last.0).powi(2) + (p.1 - last.1).powi(2)).sqrt() > 0.12 {
                break p;
            }
        };
        length += ((p.0 - last.0).powi(2) + (p.1 - last.1).powi(2)).sqrt();
        points.push(p);
    }
    Path::Waypoints { points, speed }
}

fn hand_track(class: HandClass, path: Path, rng: &mut impl Rng) -> Track {
    let (w, h) = hand_size(rng);
    Track {
        kind: EntityKind::Hand { class },
        w,
        h,
        path,
    }
}

impl ActivityScript {
    /// Random script of the given kind. In the interaction kinds the
    /// wearer's right hand mirrors the partner's left hand (a hand-over),
    /// the other two hands wander independently, and objects ride along.
    pub fn sample(kind: ScriptKind, duration: usize, seed: u64) -> ActivityScript {
        let mut rng = seed::rng(seed::derive_str(seed, "script"));
        let mut tracks = Vec::new();
        match kind {
            ScriptKind::ClearTable | ScriptKind::PushTrivet => {
                let mut speed = || rng.gen_range(HAND_SPEED.0..HAND_SPEED.1);
                let speeds = [speed(), speed(), speed()];
                if kind == ScriptKind::ClearTable {
                    for _ in 0..2 {
                        let x = rng.gen_range(0.2..0.8);
                        let y = rng.gen_range(0.44..0.56);
                        tracks.push(Track {
                            kind: EntityKind::Object { shape: ObjectShape::Cup },
                            w: 0.08,
                            h: 0.08,
                            path: Path::Fixed { x, y },
                        });
                    }
                    tracks.push(Track {
                        kind: EntityKind::Object { shape: ObjectShape::Cup },
                        w: 0.09,
                        h: 0.09,
                        path: Path::Attached { to: HandClass::YourLeft, dx: 0.0, dy: 0.09 },
                    });
                } else {
                    let x = rng.gen_range(0.3..0.7);
                    tracks.push(Track {
                        kind: EntityKind::Object { shape: ObjectShape::Crate },
                        w: 0.16,
                        h: 0.1,
                        path: Path::Fixed { x, y: 0.5 },
                    });
                    tracks.push(Track {
                        kind: EntityKind::Object { shape: ObjectShape::Trivet },
                        w: 0.14,
                        h: 0.12,
                        path: Path::Attached { to: HandClass::MyRight, dx: 0.0, dy: -0.12 },
                    });
                }
                let your_left = waypoints(HandClass::YourLeft, duration, speeds[0], &mut rng);
                let your_right = waypoints(HandClass::YourRight, duration, speeds[1], &mut rng);
                let my_left = waypoints(HandClass::MyLeft, duration, speeds[2], &mut rng);
                tracks.push(hand_track(HandClass::YourRight, your_right, &mut rng));
                tracks.push(hand_track(HandClass::YourLeft, your_left, &mut rng));
                tracks.push(hand_track(HandClass::MyLeft, my_left, &mut rng));
                let mirror = Path::Mirror { of: HandClass::YourLeft };
                tracks.push(hand_track(HandClass::MyRight, mirror, &mut rng));
            }
            ScriptKind::Static => {
                let (x, y) = (rng.gen_range(0.3..0.7), 0.5);
                tracks.push(Track {
                    kind: EntityKind::Object { shape: ObjectShape::Cup },
                    w: 0.08,
                    h: 0.08,
                    path: Path::Fixed { x, y },
                });
                for class in HandClass::ALL {
                    let (x, y) = hand_region(class).sample(&mut rng);
                    tracks.push(hand_track(class, Path::Fixed { x, y }, &mut rng));
                }
            }
            ScriptKind::ConstantVelocity => {
                let v = rng.gen_range(HAND_SPEED.0..HAND_SPEED.1);
                let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                return ActivityScript::constant_velocity(
                    HandClass::MyLeft,
                    (0.5 - dir * 0.25, 0.74),
                    (dir * v, 0.0),
                    duration,
                    seed,
                );
            }
        }
        ActivityScript {
            kind,
            duration,
            fps: DEFAULT_FPS,
            tracks,
            jitter: 0.0,
            seed,
        }
    }

    /// One hand moving at a constant velocity; the other hands hold still
    /// at their region centers.
    pub fn constant_velocity(
        class: HandClass,
        start: (f64, f64),
        velocity: (f64, f64),
        duration: usize,
        seed: u64,
    ) -> ActivityScript {
        let mut rng = seed::rng(seed::derive_str(seed, "script"));
        let mut tracks = Vec::new();
        for c in HandClass::ALL {
            let path = if c == class {
                Path::Linear {
                    x: start.0,
                    y: start.1,
                    vx: velocity.0,
                    vy: velocity.1,
                }
            } else {
                let r = hand_region(c);
                Path::Fixed {
                    x: (r.x0 + r.x1) / 2.0,
                    y: (r.y0 + r.y1) / 2.0,
                }
            };
            tracks.push(hand_track(c, path, &mut rng));
        }
        ActivityScript {
            kind: ScriptKind::ConstantVelocity,
            duration,
            fps: DEFAULT_FPS,
            tracks,
            jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 || self.fps == 0 {
            return Err(Error::Config("script duration and fps must be positive".into()));
        }
        let hands = self.tracks.iter().filter(|t| matches!(t.kind, EntityKind::Hand { .. })).count();
        let objects = self.tracks.len() - hands;
        if hands > 4 || objects > 3 {
            return Err(Error::Config(format!("{hands} hands / {objects} objects exceed 4 / 3")));
        }
        for t in &self.tracks {
            if !(t.w > 0.0 && t.h > 0.0) {
                return Err(Error::Config("entity sizes must be positive".into()));
            }
            if let Path::Waypoints { points, speed } = &t.path {
                if points.is_empty() || !(*speed >= 0.0) {
                    return Err(Error::Config("waypoint paths need points and a non-negative speed".into()));
                }
            }
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// Scene state of every frame.
    pub fn states(&self) -> Result<Vec<SceneState>> {
        self.validate()?;
        let n = self.duration;
        let mut pos: Vec<Option<Vec<(f64, f64)>>> = self
            .tracks
            .iter()
            .map(|t| (!t.path.is_dependent()).then(|| t.path.independent_positions(n)))
            .collect();
        let hand_index = |class: HandClass| {
            self.tracks
                .iter()
                .position(|t| t.kind == EntityKind::Hand { class })
                .ok_or_else(|| Error::Config(format!("path refers to absent hand {class}")))
        };
        // Mirrors first (they only reference independent hands), then attachments.
        for pass in 0..2 {
            for (i, t) in self.tracks.iter().enumerate() {
                let resolved = match (&t.path, pass) {
                    (Path::Mirror { of }, 0) => {
                        let src = pos[hand_index(*of)?]
                            .as_ref()
                            .ok_or_else(|| Error::Config("mirror of a dependent hand".into()))?;
                        src.iter().map(|&(x, y)| (x, 1.0 - y)).collect()
                    }
                    (Path::Attached { to, dx, dy }, 1) => {
                        let src = pos[hand_index(*to)?]
                            .as_ref()
                            .ok_or_else(|| Error::Config("attachment to an unresolved hand".into()))?;
                        src.iter().map(|&(x, y)| (x + dx, y + dy)).collect()
                    }
                    _ => continue,
                };
                pos[i] = Some(resolved);
            }
        }
        let mut rng = seed::rng(seed::derive_str(self.seed, "jitter"));
        let normal = Normal::new(0.0, self.jitter.max(f64::MIN_POSITIVE)).expect("valid std");
        let mut states = Vec::with_capacity(n);
        for f in 0..n {
            let mut entities = Vec::with_capacity(self.tracks.len());
            for (t, p) in self.tracks.iter().zip(&pos) {
                let (mut x, mut y) = p.as_ref().expect("all paths resolved")[f];
                if self.jitter > 0.0 && matches!(t.kind, EntityKind::Hand { .. }) {
                    x += normal.sample(&mut rng);
                    y += normal.sample(&mut rng);
                }
                entities.push(Entity {
                    kind: t.kind,
                    cx: x,
                    cy: y,
                    w: t.w,
                    h: t.h,
                });
            }
            states.push(SceneState { entities });
        }
        Ok(states)
    }
}

/// Rendered frames with exact ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: String,
    pub script: ActivityScript,
    pub states: Vec<SceneState>,
    pub frames: Vec<FrameImage>,
    pub truth: Vec<DetectionSet>,
    pub fps: usize,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn episode_texture(script: &ActivityScript, size: (usize, usize)) -> Vec<f32> {
    texture(size.0, size.1, seed::derive_str(script.seed, "texture"))
}

pub fn generate_episode(script: &ActivityScript, id: &str, size: (usize, usize)) -> Result<Episode> {
    let states = script.states()?;
    let tex = episode_texture(script, size);
    let frames = states
        .iter()
        .enumerate()
        .map(|(t, s)| render_frame(s, size, Some(&tex), t, id))
        .collect::<Result<Vec<_>>>()?;
    let truth = states.iter().enumerate().map(|(t, s)| s.truth(t)).collect();
    Ok(Episode {
        id: id.to_owned(),
        script: script.clone(),
        states,
        frames,
        truth,
        fps: script.fps,
    })
}
