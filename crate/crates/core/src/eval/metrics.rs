use crate::baselines::Predictions;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::tech::TechTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Global existence of each enemy building type.
    GlobalBuildings,
    /// Per-cell existence of enemy units not visible at the target time.
    HiddenUnits,
    /// Per-cell existence of all enemy units.
    OpponentUnits,
    /// Mean Huber error of enemy counts.
    Huber,
}

impl Task {
    pub const EXISTENCE: [Task; 3] = [Task::OpponentUnits, Task::HiddenUnits, Task::GlobalBuildings];

    pub fn name(self) -> &'static str {
        match self {
            Task::GlobalBuildings => "g_op_b",
            Task::HiddenUnits => "hid_u",
            Task::OpponentUnits => "op_u",
            Task::Huber => "huber",
        }
    }

    pub fn from_name(s: &str) -> Option<Task> {
        [Task::GlobalBuildings, Task::HiddenUnits, Task::OpponentUnits, Task::Huber].into_iter().find(|t| t.name() == s)
    }
}

/// How per-element outcomes within one game become that game's P/R/F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Pool TP/FP/FN over every step and element of the game.
    #[default]
    Pooled,
    /// Score each step separately and average over steps.
    PerStep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn merge(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Precision, recall and F1. An empty confusion scores 1 on all three; a
/// zero denominator alone makes that quantity 0.
pub fn prf(c: Confusion) -> (f64, f64, f64) {
    if c.tp == 0 && c.fp == 0 && c.fn_ == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let r = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskScore {
    pub task: Task,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub huber: Option<f64>,
    pub threshold: Option<f64>,
}

fn check_aligned(pred: &Predictions, sample: &Sample) -> Result<()> {
    let t = sample.len();
    if pred.counts.len() != t || pred.global.len() != t {
        return Err(Error::Shape(format!(
            "{} count and {} global predictions for a {t}-step sample",
            pred.counts.len(),
            pred.global.len()
        )));
    }
    for (p, y) in pred.counts.iter().zip(&sample.targets) {
        if !p.same_shape(y) {
            return Err(Error::Shape("prediction grid does not match target grid".into()));
        }
    }
    Ok(())
}

/// One confusion per step of one game at `threshold`.
pub fn confusion_per_step(pred: &Predictions, sample: &Sample, task: Task, threshold: f64, tech: &TechTree) -> Result<Vec<Confusion>> {
    check_aligned(pred, sample)?;
    let n = sample.num_types();
    let mut out = Vec::with_capacity(sample.len());
    for k in 0..sample.len() {
        let mut c = Confusion::default();
        let (p, y, o) = (&pred.counts[k], &sample.targets[k], &sample.target_obs[k]);
        match task {
            Task::OpponentUnits | Task::HiddenUnits => {
                let hidden = task == Task::HiddenUnits;
                let channels = p.channels();
                for (idx, ((&pv, &yv), &ov)) in p.data().iter().zip(y.data()).zip(o.data()).enumerate() {
                    if idx % channels < n {
                        continue;
                    }
                    let (score, truth) = if hidden {
                        (pv as f64 - ov as f64, yv - ov > 0.0)
                    } else {
                        (pv as f64, yv > 0.0)
                    };
                    c.record(score > threshold, truth);
                }
            }
            Task::GlobalBuildings => {
                for u in tech.building_ids() {
                    if u < n {
                        c.record(pred.global[k][u] > threshold, sample.global_targets[k][u]);
                    }
                }
            }
            Task::Huber => return Err(Error::Dataset("huber is not an existence task".into())),
        }
        out.push(c);
    }
    Ok(out)
}

fn game_prf(steps: &[Confusion], agg: Aggregation) -> (f64, f64, f64) {
    match agg {
        Aggregation::Pooled => {
            let mut total = Confusion::default();
            for &c in steps {
                total.merge(c);
            }
            prf(total)
        }
        Aggregation::PerStep => {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for &c in steps {
                let s = prf(c);
                p += s.0;
                r += s.1;
                f += s.2;
            }
            let k = steps.len().max(1) as f64;
            (p / k, r / k, f / k)
        }
    }
}

/// Per-game P/R/F1 averaged over games; every game weighs the same.
pub fn score_existence_task(
    preds: &[Predictions],
    samples: &[Sample],
    task: Task,
    threshold: f64,
    tech: &TechTree,
    agg: Aggregation,
) -> Result<TaskScore> {
    if preds.len() != samples.len() || samples.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for (pr, s) in preds.iter().zip(samples) {
        let g = game_prf(&confusion_per_step(pr, s, task, threshold, tech)?, agg);
        p += g.0;
        r += g.1;
        f += g.2;
    }
    let k = samples.len() as f64;
    Ok(TaskScore {
        task,
        precision: Some(p / k),
        recall: Some(r / k),
        f1: Some(f / k),
        huber: None,
        threshold: Some(threshold),
    })
}

fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Mean Huber over steps, cells and enemy channels per game, then over games.
pub fn score_huber(preds: &[Predictions], samples: &[Sample], delta: f64) -> Result<TaskScore> {
    if preds.len() != samples.len() || samples.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let mut total = 0.0;
    for (pr, s) in preds.iter().zip(samples) {
        check_aligned(pr, s)?;
        let n = s.num_types();
        let (mut sum, mut count) = (0.0, 0usize);
        for (p, y) in pr.counts.iter().zip(&s.targets) {
            let c = p.channels();
            for (idx, (&pv, &yv)) in p.data().iter().zip(y.data()).enumerate() {
                if idx % c >= n {
                    sum += huber(pv as f64 - yv as f64, delta);
                    count += 1;
                }
            }
        }
        total += sum / count.max(1) as f64;
    }
    Ok(TaskScore {
        task: Task::Huber,
        precision: None,
        recall: None,
        f1: None,
        huber: Some(total / samples.len() as f64),
        threshold: None,
    })
}

pub const SWEEP_MIN: f64 = 0.001;
pub const SWEEP_MAX: f64 = 1.5;
pub const SWEEP_POINTS: usize = 30;

/// `n` thresholds log-spaced from 0.001 to 1.5, both ends included.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let (a, b) = (SWEEP_MIN.ln(), SWEEP_MAX.ln());
    (0..n)
        .map(|i| match i {
            0 => SWEEP_MIN,
            _ if i == n - 1 => SWEEP_MAX,
            _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub best: f64,
    pub best_f1: f64,
    /// `(threshold, mean F1)` at every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Grid point with the highest mean F1; ties go to the smaller threshold.
pub fn sweep_threshold(
    preds: &[Predictions],
    samples: &[Sample],
    task: Task,
    tech: &TechTree,
    agg: Aggregation,
    grid: &[f64],
) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::Dataset("empty threshold grid".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let (mut best, mut best_f1) = (grid[0], f64::NEG_INFINITY);
    for &t in grid {
        let f = score_existence_task(preds, samples, task, t, tech, agg)?.f1.unwrap();
        curve.push((t, f));
        if f > best_f1 {
            best = t;
            best_f1 = f;
        }
    }
    Ok(Sweep { best, best_f1, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conventions() {
        assert_eq!(prf(Confusion::default()), (1.0, 1.0, 1.0));
        assert_eq!(prf(Confusion { tp: 1, fp: 1, fn_: 1 }), (0.5, 0.5, 0.5));
        assert_eq!(prf(Confusion { tp: 0, fp: 0, fn_: 3 }), (0.0, 0.0, 0.0));
        assert_eq!(prf(Confusion { tp: 0, fp: 2, fn_: 0 }), (0.0, 0.0, 0.0));
    }

    #[test]
    fn grid_is_log_spaced_with_exact_ends() {
        let g = threshold_grid(30);
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.001);
        assert_eq!(g[29], 1.5);
        let ratio = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-9);
        }
    }

    #[test]
    fn huber_closed_forms() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }
}
