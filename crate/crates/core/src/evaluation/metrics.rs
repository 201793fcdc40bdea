use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{iou, DetectionSet, HandBox, HandClass};
use crate::error::{Error, Result};
use crate::manip::HandPoint;

/// IoU a prediction must exceed (strictly) to count as a true positive.
pub const TRUE_POSITIVE_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        MeanStd { mean, std: var.sqrt(), n }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// (precision, recall, F); precision is 0 without predictions, recall 0
    /// without truth, except that an empty frame with no predictions scores 1.
    pub fn prf(&self) -> (f64, f64, f64) {
        if self.tp + self.fp + self.fn_ == 0 {
            return (1.0, 1.0, 1.0);
        }
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        (p, r, f_measure(p, r))
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn of_class(set: &DetectionSet, class: HandClass) -> Vec<&HandBox> {
    set.boxes.iter().filter(|b| b.class == class).collect()
}

/// Greedy one-to-one matching of one class: predictions in descending
/// score order each take the unmatched truth box of highest IoU, counting a
/// hit when that IoU exceeds `threshold`.
pub fn greedy_counts(preds: &DetectionSet, truth: &DetectionSet, class: HandClass, threshold: f64) -> Counts {
    let mut p = of_class(preds, class);
    p.sort_by(|a, b| b.score_or_one().total_cmp(&a.score_or_one()));
    let t = of_class(truth, class);
    let mut used = vec![false; t.len()];
    let mut tp = 0;
    for pb in &p {
        let best = t
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, tb)| (j, iou(pb, tb)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, v)) = best {
            if v > threshold {
                used[j] = true;
                tp += 1;
            }
        }
    }
    Counts {
        tp,
        fp: p.len() - tp,
        fn_: t.len() - tp,
    }
}

/// Largest possible number of one-to-one matches with IoU above
/// `threshold`, by exhaustive search.
pub fn exhaustive_true_positives(preds: &DetectionSet, truth: &DetectionSet, class: HandClass, threshold: f64) -> usize {
    fn go(i: usize, p: &[&HandBox], t: &[&HandBox], used: &mut [bool], threshold: f64) -> usize {
        if i == p.len() {
            return 0;
        }
        let mut best = go(i + 1, p, t, used, threshold);
        for j in 0..t.len() {
            if !used[j] && iou(p[i], t[j]) > threshold {
                used[j] = true;
                best = best.max(1 + go(i + 1, p, t, used, threshold));
                used[j] = false;
            }
        }
        best
    }
    let p = of_class(preds, class);
    let t = of_class(truth, class);
    go(0, &p, &t, &mut vec![false; t.len()], threshold)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f_measure: MeanStd,
    pub totals: Counts,
}

/// Precision / recall / F as mean ± std over frames, overall and per class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f_measure: MeanStd,
    pub totals: Counts,
    pub per_class: BTreeMap<HandClass, ClassScores>,
}

fn summarize(per_frame: &[Counts]) -> ClassScores {
    let mut totals = Counts::default();
    let (mut p, mut r, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for c in per_frame {
        totals.add(*c);
        let (a, b, g) = c.prf();
        p.push(a);
        r.push(b);
        f.push(g);
    }
    ClassScores {
        precision: MeanStd::of(&p),
        recall: MeanStd::of(&r),
        f_measure: MeanStd::of(&f),
        totals,
    }
}

/// Scores aligned prediction / truth lists. Per-class statistics skip
/// frames where the class appears on neither side.
pub fn evaluate_detections(preds: &[DetectionSet], truth: &[DetectionSet], threshold: f64) -> Result<DetectionScores> {
    if preds.len() != truth.len() {
        return Err(Error::shape(
            "evaluate_detections",
            format!("{} prediction frames vs {} truth frames", preds.len(), truth.len()),
        ));
    }
    let mut frames = Vec::with_capacity(preds.len());
    let mut classes: BTreeMap<HandClass, Vec<Counts>> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truth) {
        let mut frame = Counts::default();
        for class in HandClass::ALL {
            let c = greedy_counts(p, t, class, threshold);
            frame.add(c);
            if c.tp + c.fp + c.fn_ > 0 {
                classes.entry(class).or_default().push(c);
            }
        }
        frames.push(frame);
    }
    let all = summarize(&frames);
    Ok(DetectionScores {
        precision: all.precision,
        recall: all.recall,
        f_measure: all.f_measure,
        totals: all.totals,
        per_class: classes.into_iter().map(|(k, v)| (k, summarize(&v))).collect(),
    })
}

/// Center distance in pixels between the best-scoring predicted box and the
/// truth box of each listed class, over frames where both exist.
pub fn center_distances(
    preds: &[DetectionSet],
    truth: &[DetectionSet],
    classes: &[HandClass],
    resolution: (usize, usize),
) -> Result<Vec<f64>> {
    if preds.len() != truth.len() {
        return Err(Error::shape("mean_pixel_distance", "prediction and truth lists differ in length"));
    }
    let mut out = Vec::new();
    for (p, t) in preds.iter().zip(truth) {
        for &class in classes {
            if let (Some(a), Some(b)) = (p.best_of_class(class), t.best_of_class(class)) {
                let pa = HandPoint::from_normalized(a.cx, a.cy, resolution);
                let pb = HandPoint::from_normalized(b.cx, b.cy, resolution);
                out.push(pa.distance(&pb));
            }
        }
    }
    Ok(out)
}

pub fn mean_pixel_distance(
    preds: &[DetectionSet],
    truth: &[DetectionSet],
    classes: &[HandClass],
    resolution: (usize, usize),
) -> Result<MeanStd> {
    Ok(MeanStd::of(&center_distances(preds, truth, classes, resolution)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(class: HandClass, cx: f64, cy: f64, score: f64) -> HandBox {
        HandBox {
            score: Some(score),
            ..HandBox::truth(class, cx, cy, 0.2, 0.2)
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = vec![DetectionSet::new(0, vec![HandBox::truth(HandClass::MyLeft, 0.3, 0.3, 0.2, 0.2)])];
        let p = vec![DetectionSet::new(0, vec![b(HandClass::MyLeft, 0.3, 0.3, 1.0)])];
        let s = evaluate_detections(&p, &t, TRUE_POSITIVE_IOU).unwrap();
        assert_eq!((s.precision.mean, s.recall.mean, s.f_measure.mean), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let t = vec![DetectionSet::new(0, vec![HandBox::truth(HandClass::MyLeft, 0.3, 0.3, 0.2, 0.2)])];
        let p = vec![DetectionSet::new(0, vec![])];
        let s = evaluate_detections(&p, &t, TRUE_POSITIVE_IOU).unwrap();
        assert_eq!((s.precision.mean, s.recall.mean, s.f_measure.mean), (0.0, 0.0, 0.0));
        assert_eq!(s.totals, Counts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn misaligned_lists_rejected() {
        assert!(evaluate_detections(&[DetectionSet::default()], &[], 0.5).is_err());
    }

    #[test]
    fn constant_offset_distance() {
        let res = (1280, 720);
        let t = vec![DetectionSet::new(0, vec![HandBox::truth(HandClass::MyRight, 0.5, 0.5, 0.1, 0.1)])];
        let p = vec![DetectionSet::new(
            0,
            vec![b(HandClass::MyRight, 0.5 + 3.0 / 1280.0, 0.5 + 4.0 / 720.0, 0.9)],
        )];
        let d = mean_pixel_distance(&p, &t, &HandClass::ALL, res).unwrap();
        assert!((d.mean - 5.0).abs() < 1e-9);
        assert_eq!(d.n, 1);
        assert_eq!(mean_pixel_distance(&p, &t, &[HandClass::MyLeft], res).unwrap().n, 0);
    }

    #[test]
    fn greedy_prefers_high_score() {
        let t = DetectionSet::new(0, vec![HandBox::truth(HandClass::YourLeft, 0.5, 0.5, 0.2, 0.2)]);
        let p = DetectionSet::new(
            0,
            vec![b(HandClass::YourLeft, 0.52, 0.5, 0.2), b(HandClass::YourLeft, 0.5, 0.5, 0.9)],
        );
        let c = greedy_counts(&p, &t, HandClass::YourLeft, 0.5);
        assert_eq!(c, Counts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(exhaustive_true_positives(&p, &t, HandClass::YourLeft, 0.5), 1);
    }

    #[test]
    fn mean_std_population() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std, m.n), (2.0, 1.0, 2));
    }
}
