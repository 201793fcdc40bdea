//! Detection metrics, method comparison tables, closed-loop runs and
//! overlay rendering.

mod closed_loop;
mod methods;
mod metrics;
mod overlay;

pub use closed_loop::{
    closed_loop_episode, closed_loop_scripts, run_closed_loop, ClosedLoopConfig, ClosedLoopReport, Controller,
    EpisodeOutcome, LoopStep, LOOP_TOLERANCE_FRACTION,
};
pub use methods::{
    detector_scores, evaluate_method, predict_method, score_predictions, table, EvalSet, Method, MethodModels,
    MethodRow, PredictionReport,
};
pub use metrics::{
    center_distances, evaluate_detections, exhaustive_true_positives, f_measure, greedy_counts, mean_pixel_distance,
    ClassScores, Counts, DetectionScores, MeanStd, TRUE_POSITIVE_IOU,
};
pub use overlay::{box_color, draw_boxes, read_ppm, triptych, write_ppm, Rgb8Image};
