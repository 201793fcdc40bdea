use std::fmt;

use serde::{Deserialize, Serialize};

/// The four hand categories. "My" hands belong to the camera wearer (the
/// robot at execution time); "your" hands belong to the partner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandClass {
    MyLeft,
    MyRight,
    YourLeft,
    YourRight,
}

impl HandClass {
    pub const ALL: [HandClass; 4] = [
        HandClass::MyLeft,
        HandClass::MyRight,
        HandClass::YourLeft,
        HandClass::YourRight,
    ];

    /// Position in [`HandClass::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Network label; 0 is background.
    pub fn label(self) -> usize {
        self.index() + 1
    }

    pub fn from_label(label: usize) -> Option<HandClass> {
        label.checked_sub(1).and_then(|i| HandClass::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            HandClass::MyLeft => "my_left",
            HandClass::MyRight => "my_right",
            HandClass::YourLeft => "your_left",
            HandClass::YourRight => "your_right",
        }
    }
}

impl fmt::Display for HandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box in normalized image coordinates (center + size).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandBox {
    pub class: HandClass,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// Present on predictions, absent on ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl HandBox {
    pub fn truth(class: HandClass, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        HandBox {
            class,
            cx,
            cy,
            w,
            h,
            score: None,
        }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }
    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn from_corners(class: HandClass, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        HandBox::truth(class, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// Intersection with the unit square, or `None` when it is empty.
    pub fn clipped(&self) -> Option<HandBox> {
        let x0 = self.left().max(0.0);
        let y0 = self.top().max(0.0);
        let x1 = self.right().min(1.0);
        let y1 = self.bottom().min(1.0);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let mut b = HandBox::from_corners(self.class, x0, y0, x1, y1);
        b.score = self.score;
        Some(b)
    }

    pub fn score_or_one(&self) -> f64 {
        self.score.unwrap_or(1.0)
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &HandBox, b: &HandBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Boxes for one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub frame_index: usize,
    pub boxes: Vec<HandBox>,
}

impl DetectionSet {
    pub fn new(frame_index: usize, boxes: Vec<HandBox>) -> Self {
        DetectionSet { frame_index, boxes }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn of_class(&self, class: HandClass) -> impl Iterator<Item = &HandBox> {
        self.boxes.iter().filter(move |b| b.class == class)
    }

    /// Highest-scoring box of a class (ties keep the earliest).
    pub fn best_of_class(&self, class: HandClass) -> Option<&HandBox> {
        self.of_class(class).fold(None, |best: Option<&HandBox>, b| match best {
            Some(x) if x.score_or_one() >= b.score_or_one() => Some(x),
            _ => Some(b),
        })
    }
}

/// Greedy per-class non-maximum suppression. Output is sorted by class,
/// then by descending score.
pub fn nms(boxes: &[HandBox], threshold: f64) -> Vec<HandBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(b.score_or_one().total_cmp(&a.score_or_one()))
    });
    let mut kept: Vec<HandBox> = Vec::with_capacity(sorted.len());
    for b in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class == b.class && iou(k, &b) > threshold);
        if !suppressed {
            kept.push(b);
        }
    }
    kept
}

/// Default box against which offsets are expressed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn as_box(&self) -> HandBox {
        HandBox::truth(HandClass::MyLeft, self.cx, self.cy, self.w, self.h)
    }
}

/// Offsets (Δcx/aw, Δcy/ah, ln(gw/aw), ln(gh/ah)).
pub fn encode_offsets(b: &HandBox, a: &Anchor) -> [f64; 4] {
    [
        (b.cx - a.cx) / a.w,
        (b.cy - a.cy) / a.h,
        (b.w / a.w).ln(),
        (b.h / a.h).ln(),
    ]
}

pub fn decode_offsets(o: &[f64; 4], a: &Anchor, class: HandClass, score: Option<f64>) -> HandBox {
    HandBox {
        class,
        cx: a.cx + o[0] * a.w,
        cy: a.cy + o[1] * a.h,
        w: a.w * o[2].exp(),
        h: a.h * o[3].exp(),
        score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(class: HandClass, cx: f64, cy: f64, s: f64) -> HandBox {
        HandBox {
            score: Some(s),
            ..HandBox::truth(class, cx, cy, 0.2, 0.2)
        }
    }

    #[test]
    fn iou_basics() {
        let a = HandBox::truth(HandClass::MyLeft, 0.5, 0.5, 0.2, 0.2);
        assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = HandBox::truth(HandClass::MyLeft, 0.9, 0.9, 0.1, 0.1);
        assert_eq!(iou(&a, &b), 0.0);
        // unit boxes offset by half in both axes: 0.25 / 1.75
        let u = HandBox::from_corners(HandClass::MyLeft, 0.0, 0.0, 1.0, 1.0);
        let v = HandBox::from_corners(HandClass::MyLeft, 0.5, 0.5, 1.5, 1.5);
        assert!((iou(&u, &v) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn nms_keeps_best_per_class() {
        let boxes = [
            pred(HandClass::MyRight, 0.5, 0.5, 0.6),
            pred(HandClass::MyRight, 0.51, 0.5, 0.9),
            pred(HandClass::MyLeft, 0.5, 0.5, 0.7),
        ];
        let kept = nms(&boxes, 0.45);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().any(|b| b.class == HandClass::MyRight && b.score == Some(0.9)));
    }

    #[test]
    fn best_of_class_is_argmax() {
        let set = DetectionSet::new(
            0,
            vec![pred(HandClass::MyRight, 0.2, 0.2, 0.6), pred(HandClass::MyRight, 0.7, 0.7, 0.9)],
        );
        assert_eq!(set.best_of_class(HandClass::MyRight).unwrap().cx, 0.7);
        assert!(set.best_of_class(HandClass::YourLeft).is_none());
    }

    fn arb_box() -> impl Strategy<Value = HandBox> {
        (0usize..4, 0.0..1.0f64, 0.0..1.0f64, 0.02..0.5f64, 0.02..0.5f64, 0.0..1.0f64).prop_map(
            |(c, cx, cy, w, h, s)| HandBox {
                score: Some(s),
                ..HandBox::truth(HandClass::ALL[c], cx, cy, w, h)
            },
        )
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn nms_idempotent_and_separated(boxes in prop::collection::vec(arb_box(), 0..12)) {
            let once = nms(&boxes, 0.45);
            prop_assert_eq!(nms(&once, 0.45), once.clone());
            for (i, a) in once.iter().enumerate() {
                for b in &once[i + 1..] {
                    prop_assert!(a.class != b.class || iou(a, b) <= 0.45);
                }
            }
        }

        #[test]
        fn offsets_roundtrip(b in arb_box(), ax in 0.0..1.0f64, ay in 0.0..1.0f64, aw in 0.05..0.4f64, ah in 0.05..0.4f64) {
            let a = Anchor { cx: ax, cy: ay, w: aw, h: ah };
            let back = decode_offsets(&encode_offsets(&b, &a), &a, b.class, b.score);
            prop_assert!((back.cx - b.cx).abs() < 1e-6);
            prop_assert!((back.cy - b.cy).abs() < 1e-6);
            prop_assert!((back.w - b.w).abs() < 1e-6);
            prop_assert!((back.h - b.h).abs() < 1e-6);
        }
    }
}
