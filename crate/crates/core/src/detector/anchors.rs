use super::boxes::{encode_offsets, iou, Anchor, DetectionSet};

/// Positive-match IoU threshold (a box counts as found above one half).
pub const MATCH_IOU: f64 = 0.5;

/// One anchor per (cell, aspect), ordered row-major over cells with the
/// aspect index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub rows: usize,
    pub cols: usize,
    pub aspects: Vec<f64>,
    pub anchors: Vec<Anchor>,
}

impl AnchorGrid {
    pub fn new(rows: usize, cols: usize, base_scale: f64, aspects: &[f64]) -> Self {
        let mut anchors = Vec::with_capacity(rows * cols * aspects.len());
        for r in 0..rows {
            for c in 0..cols {
                let cx = (c as f64 + 0.5) / cols as f64;
                let cy = (r as f64 + 0.5) / rows as f64;
                for &a in aspects {
                    anchors.push(Anchor {
                        cx,
                        cy,
                        w: base_scale * a.sqrt(),
                        h: base_scale / a.sqrt(),
                    });
                }
            }
        }
        AnchorGrid {
            rows,
            cols,
            aspects: aspects.to_vec(),
            anchors,
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Per-anchor training targets for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchAssignment {
    /// 0 for background, otherwise the hand class label.
    pub labels: Vec<usize>,
    /// Offsets to the matched box; zero for background anchors.
    pub offsets: Vec<[f64; 4]>,
    /// Background anchors kept by hard-negative mining.
    pub negatives: Vec<bool>,
}

impl MatchAssignment {
    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.labels[i] != 0
    }
}

/// Assigns every anchor to the ground-truth box it overlaps most when that
/// IoU reaches [`MATCH_IOU`]; additionally each ground-truth box claims its
/// single best anchor so no box goes unmatched.
pub fn match_anchors(grid: &AnchorGrid, truth: &DetectionSet) -> MatchAssignment {
    let n = grid.len();
    let mut labels = vec![0usize; n];
    let mut offsets = vec![[0.0; 4]; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut best_iou = vec![0.0f64; n];
    for (g, gt) in truth.boxes.iter().enumerate() {
        for (i, a) in grid.anchors.iter().enumerate() {
            let v = iou(&a.as_box(), gt);
            if v >= MATCH_IOU && v > best_iou[i] {
                best_iou[i] = v;
                owner[i] = Some(g);
            }
        }
    }
    for (g, gt) in truth.boxes.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, a) in grid.anchors.iter().enumerate() {
            let v = iou(&a.as_box(), gt);
            if v > best.1 {
                best = (i, v);
            }
        }
        owner[best.0] = Some(g);
    }
    for (i, o) in owner.iter().enumerate() {
        if let Some(g) = *o {
            let gt = &truth.boxes[g];
            labels[i] = gt.class.label();
            offsets[i] = encode_offsets(gt, &grid.anchors[i]);
        }
    }
    MatchAssignment {
        labels,
        offsets,
        negatives: vec![false; n],
    }
}

/// Marks the hardest background anchors (highest background loss) across a
/// batch, keeping at most `ratio` negatives per positive.
pub fn mine_hard_negatives(assignments: &mut [MatchAssignment], background_loss: &[Vec<f64>], ratio: usize) {
    let positives: usize = assignments.iter().map(|a| a.num_positives()).sum();
    let budget = positives * ratio;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (f, (a, losses)) in assignments.iter_mut().zip(background_loss).enumerate() {
        a.negatives.iter_mut().for_each(|m| *m = false);
        for (i, &l) in losses.iter().enumerate() {
            if a.labels[i] == 0 {
                candidates.push((l, f, i));
            }
        }
    }
    // Stable order: loss descending, then frame, then anchor.
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for &(_, f, i) in candidates.iter().take(budget) {
        assignments[f].negatives[i] = true;
    }
}
