//! Proxy-task scoring, threshold calibration, reports and heatmaps.

mod heatmap;
mod metrics;
mod report;

pub use heatmap::{heatmap, render_pgm};
pub use metrics::{
    confusion_per_step, prf, score_existence_task, score_huber, sweep_threshold, threshold_grid, Aggregation,
    Confusion, Sweep, Task, TaskScore, SWEEP_MAX, SWEEP_MIN, SWEEP_POINTS,
};
pub use report::{
    calibrate, parse_grid_list, render_machine, render_table, score_predictor, Calibration, EvalReport, ReportRow,
    ThresholdPolicy,
};
