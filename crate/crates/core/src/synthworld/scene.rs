use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{DetectionSet, FrameImage, HandBox, HandClass};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Per-pixel texture noise standard deviation.
pub const TEXTURE_STD: f64 = 0.02;
pub const BACKGROUND: [f32; 3] = [0.62, 0.58, 0.52];

/// Flat render color of each hand class.
pub fn hand_color(class: HandClass) -> [f32; 3] {
    match class {
        HandClass::MyLeft => [0.86, 0.22, 0.18],
        HandClass::MyRight => [0.18, 0.32, 0.88],
        HandClass::YourLeft => [0.15, 0.72, 0.28],
        HandClass::YourRight => [0.92, 0.82, 0.16],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectShape {
    /// Filled ellipse.
    Cup,
    /// Hollow square frame.
    Trivet,
    /// Filled rectangle with a dark border.
    Crate,
}

impl ObjectShape {
    fn color(self) -> [f32; 3] {
        match self {
            ObjectShape::Cup => [0.98, 0.96, 0.94],
            ObjectShape::Trivet => [0.30, 0.20, 0.12],
            ObjectShape::Crate => [0.55, 0.40, 0.62],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entity", rename_all = "snake_case")]
pub enum EntityKind {
    Hand { class: HandClass },
    Object { shape: ObjectShape },
}

/// Something drawn in a frame, in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Entity {
    pub fn hand(class: HandClass, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Entity {
            kind: EntityKind::Hand { class },
            cx,
            cy,
            w,
            h,
        }
    }

    pub fn object(shape: ObjectShape, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Entity {
            kind: EntityKind::Object { shape },
            cx,
            cy,
            w,
            h,
        }
    }
}

/// Entities in back-to-front drawing order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub entities: Vec<Entity>,
}

impl SceneState {
    /// Ground truth: every hand box intersected with the unit square.
    pub fn truth(&self, frame_index: usize) -> DetectionSet {
        let boxes = self
            .entities
            .iter()
            .filter_map(|e| match e.kind {
                EntityKind::Hand { class } => HandBox::truth(class, e.cx, e.cy, e.w, e.h).clipped(),
                EntityKind::Object { .. } => None,
            })
            .collect();
        DetectionSet::new(frame_index, boxes)
    }

    pub fn hand(&self, class: HandClass) -> Option<&Entity> {
        self.entities
            .iter()
            .find(|e| e.kind == EntityKind::Hand { class })
    }

    pub fn hand_mut(&mut self, class: HandClass) -> Option<&mut Entity> {
        self.entities
            .iter_mut()
            .find(|e| e.kind == EntityKind::Hand { class })
    }
}

/// Half-open pixel index range whose centers fall in `[lo, hi)` (normalized).
pub fn pixel_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let first = (lo * n as f64 - 0.5).ceil().max(0.0);
    let last = (hi * n as f64 - 0.5).ceil().max(0.0);
    (first.min(n as f64) as usize, last.min(n as f64) as usize)
}

/// Static per-pixel texture for one episode (or one labeled frame).
pub fn texture(height: usize, width: usize, seed: u64) -> Vec<f32> {
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, TEXTURE_STD).expect("valid std");
    (0..3 * height * width)
        .map(|_| normal.sample(&mut rng) as f32)
        .collect()
}

fn paint(img: &mut [f32], height: usize, width: usize, e: &Entity) {
    let (x0, x1) = pixel_span(e.cx - e.w / 2.0, e.cx + e.w / 2.0, width);
    let (y0, y1) = pixel_span(e.cy - e.h / 2.0, e.cy + e.h / 2.0, height);
    let plane = height * width;
    let put = |img: &mut [f32], r: usize, c: usize, col: [f32; 3]| {
        for (ch, v) in col.iter().enumerate() {
            img[ch * plane + r * width + c] = *v;
        }
    };
    match e.kind {
        EntityKind::Hand { class } => {
            let col = hand_color(class);
            for r in y0..y1 {
                for c in x0..x1 {
                    put(img, r, c, col);
                }
            }
        }
        EntityKind::Object { shape } => {
            let col = shape.color();
            let (nx, ny) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
            let band = (nx.min(ny) / 4).max(1);
            for r in y0..y1 {
                for c in x0..x1 {
                    let inside = match shape {
                        ObjectShape::Cup => {
                            let dx = ((c as f64 + 0.5) / width as f64 - e.cx) / (e.w / 2.0);
                            let dy = ((r as f64 + 0.5) / height as f64 - e.cy) / (e.h / 2.0);
                            dx * dx + dy * dy <= 1.0
                        }
                        ObjectShape::Trivet => {
                            r < y0 + band || r + band >= y1 || c < x0 + band || c + band >= x1
                        }
                        ObjectShape::Crate => true,
                    };
                    if !inside {
                        continue;
                    }
                    let border = shape == ObjectShape::Crate
                        && (r == y0 || r + 1 == y1 || c == x0 || c + 1 == x1);
                    put(img, r, c, if border { [0.2, 0.15, 0.25] } else { col });
                }
            }
        }
    }
}

/// Rasterizes a scene: background, entities in order, then additive texture.
/// A pixel belongs to a box when its center lies inside it.
pub fn render_frame(
    state: &SceneState,
    size: (usize, usize),
    texture: Option<&[f32]>,
    frame_index: usize,
    episode_id: &str,
) -> Result<FrameImage> {
    let (height, width) = size;
    let plane = height * width;
    let mut img = vec![0.0f32; 3 * plane];
    for (ch, &v) in BACKGROUND.iter().enumerate() {
        img[ch * plane..(ch + 1) * plane].fill(v);
    }
    for e in &state.entities {
        paint(&mut img, height, width, e);
    }
    if let Some(noise) = texture {
        if noise.len() != img.len() {
            return Err(Error::shape("render_frame", "texture size does not match frame"));
        }
        for (p, n) in img.iter_mut().zip(noise) {
            *p += n;
        }
    }
    FrameImage::new(Tensor::new(vec![3, height, width], img)?, frame_index, episode_id)
}

/// Rectangular region (normalized) a hand center is kept inside.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        (rng.gen_range(self.x0..=self.x1), rng.gen_range(self.y0..=self.y1))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// Where each class's hand center normally lives: the wearer's hands in the
/// lower half, the partner's facing hands in the upper half (mirrored sides).
pub fn hand_region(class: HandClass) -> Region {
    match class {
        HandClass::MyLeft => Region { x0: 0.12, y0: 0.62, x1: 0.42, y1: 0.86 },
        HandClass::MyRight => Region { x0: 0.55, y0: 0.60, x1: 0.85, y1: 0.86 },
        HandClass::YourLeft => Region { x0: 0.55, y0: 0.14, x1: 0.85, y1: 0.40 },
        HandClass::YourRight => Region { x0: 0.12, y0: 0.14, x1: 0.42, y1: 0.40 },
    }
}
