use std::fmt::Write as _;

use super::metrics::{score_existence_task, score_huber, sweep_threshold, threshold_grid, Aggregation, Task, TaskScore, SWEEP_POINTS};
use crate::baselines::Predictions;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::tech::TechTree;

/// How a predictor's existence thresholds are chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdPolicy {
    /// Best F1 on the validation set, per task and head.
    Swept,
    /// The same threshold for every task.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub op_u: f64,
    pub hid_u: f64,
    pub g_op_b: f64,
}

impl Calibration {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::OpponentUnits => self.op_u,
            Task::HiddenUnits => self.hid_u,
            Task::GlobalBuildings => self.g_op_b,
            Task::Huber => f64::NAN,
        }
    }
}

pub fn calibrate(
    policy: ThresholdPolicy,
    valid_preds: &[Predictions],
    valid: &[Sample],
    tech: &TechTree,
    agg: Aggregation,
) -> Result<Calibration> {
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(Calibration { op_u: t, hid_u: t, g_op_b: t }),
        ThresholdPolicy::Swept => {
            let grid = threshold_grid(SWEEP_POINTS);
            let best = |task| sweep_threshold(valid_preds, valid, task, tech, agg, &grid).map(|s| s.best);
            Ok(Calibration {
                op_u: best(Task::OpponentUnits)?,
                hid_u: best(Task::HiddenUnits)?,
                g_op_b: best(Task::GlobalBuildings)?,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub predictor: String,
    pub g: usize,
    pub s: f64,
    /// op_u, hid_u, g_op_b, huber in that order.
    pub scores: Vec<TaskScore>,
}

impl ReportRow {
    pub fn score(&self, task: Task) -> Option<&TaskScore> {
        self.scores.iter().find(|s| s.task == task)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub games: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn score_predictor(
    name: &str,
    calibration: Calibration,
    test_preds: &[Predictions],
    test: &[Sample],
    tech: &TechTree,
    agg: Aggregation,
    huber_delta: f64,
) -> Result<ReportRow> {
    let first = test.first().ok_or_else(|| Error::Dataset("empty test set".into()))?;
    let mut scores = Vec::with_capacity(4);
    for task in Task::EXISTENCE {
        scores.push(score_existence_task(test_preds, test, task, calibration.get(task), tech, agg)?);
    }
    scores.push(score_huber(test_preds, test, huber_delta)?);
    Ok(ReportRow { predictor: name.to_string(), g: first.spec.g, s: first.horizon, scores })
}

/// Parses `64:15,32:0` into `(g, s)` pairs.
pub fn parse_grid_list(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (g, s) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected g:s, got {p:?}")))?;
            let g = g.trim().parse().map_err(|_| Error::Config(format!("bad g in {p:?}")))?;
            let s = s.trim().parse().map_err(|_| Error::Config(format!("bad s in {p:?}")))?;
            Ok((g, s))
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Aligned table: one block of rows per `(g, s)`, predictors in input order.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let name_w = report.rows.iter().map(|r| r.predictor.len()).max().unwrap_or(0).max(9);
    writeln!(out, "games per row: {}", report.games).unwrap();
    writeln!(
        out,
        "{:<7} {:<name_w$} | {:^17} | {:^17} | {:^17} | {:>9}",
        "g:s", "predictor", "op_u", "hid_u", "g_op_b", "huber"
    )
    .unwrap();
    writeln!(
        out,
        "{:<7} {:<name_w$} | {:>5} {:>5} {:>5} | {:>5} {:>5} {:>5} | {:>5} {:>5} {:>5} | {:>9}",
        "", "", "P", "R", "F1", "P", "R", "F1", "P", "R", "F1", ""
    )
    .unwrap();
    let mut last_key = None;
    for r in &report.rows {
        let key = format!("{}:{}", r.g, r.s);
        if last_key.as_ref() != Some(&key) {
            writeln!(out, "{}", "-".repeat(7 + 1 + name_w + 3 * 20 + 12)).unwrap();
            last_key = Some(key.clone());
        }
        write!(out, "{:<7} {:<name_w$}", key, r.predictor).unwrap();
        for task in Task::EXISTENCE {
            let s = r.score(task);
            let p = s.and_then(|s| s.precision);
            let rc = s.and_then(|s| s.recall);
            let f = s.and_then(|s| s.f1);
            write!(out, " | {:>5} {:>5} {:>5}", cell(p).trim_start_matches('0'), cell(rc).trim_start_matches('0'), cell(f).trim_start_matches('0')).unwrap();
        }
        let h = r.score(Task::Huber).and_then(|s| s.huber);
        writeln!(out, " | {:>9}", h.map_or("-".into(), |x| format!("{x:.6}"))).unwrap();
    }
    out
}

/// One line per (row, task): `predictor g s task P R F1 huber threshold`.
pub fn render_machine(report: &EvalReport) -> String {
    let mut out = String::new();
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    for r in &report.rows {
        for s in &r.scores {
            writeln!(
                out,
                "{} {} {} {} {} {} {} {} {}",
                r.predictor,
                r.g,
                r.s,
                s.task.name(),
                f(s.precision),
                f(s.recall),
                f(s.f1),
                f(s.huber),
                f(s.threshold)
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_list_parses_table_rows() {
        let g = parse_grid_list("64:15,32:30, 32:15,32:5,32:0").unwrap();
        assert_eq!(g, vec![(64, 15.0), (32, 30.0), (32, 15.0), (32, 5.0), (32, 0.0)]);
        assert!(parse_grid_list("64-15").is_err());
    }
}
