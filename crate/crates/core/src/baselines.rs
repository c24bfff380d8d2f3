//! Rule-based predictors built only from past observations and the tech tree.
//!
//! All four copy the ally channels of the current observation; they differ
//! in what they remember about enemy units:
//!
//! * `Input` forgets everything not currently visible.
//! * `PS` (previous seen) keeps the last count observed in each cell until the
//!   cell is seen again.
//! * `PM` (previous max) keeps the largest count ever observed in each cell.
//! * `PM+R` is `PM` plus buildings implied by the prerequisites of seen types.

use std::collections::BTreeSet;

use crate::dataset::Sample;
use crate::grid::CountGrid;
use crate::tech::{TechTree, TypeId};

/// Per-step count predictions over all channels plus one global score per
/// enemy type.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub counts: Vec<CountGrid>,
    pub global: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    Input,
    PreviousSeen,
    PreviousMax,
    PreviousMaxRules,
}

impl Baseline {
    pub const ALL: [Baseline; 4] =
        [Baseline::Input, Baseline::PreviousSeen, Baseline::PreviousMax, Baseline::PreviousMaxRules];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Input => "Input",
            Baseline::PreviousSeen => "PS",
            Baseline::PreviousMax => "PM",
            Baseline::PreviousMaxRules => "PM+R",
        }
    }

    pub fn predict(self, sample: &Sample, tech: &TechTree) -> Predictions {
        match self {
            Baseline::Input => input_predict(sample),
            Baseline::PreviousSeen => ps_predict(sample),
            Baseline::PreviousMax => pm_predict(sample),
            Baseline::PreviousMaxRules => pmr_predict(sample, tech),
        }
    }
}

/// Memory carried across the steps of one sample. Grids hold all channels;
/// only the enemy half is ever written.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub last_seen: CountGrid,
    pub ever_seen_max: CountGrid,
    pub seen_types: BTreeSet<TypeId>,
    /// Cells visible at least once so far.
    pub ever_visible: Vec<bool>,
    /// First enemy-building cell of the latest observation that had one.
    pub last_building_cell: Option<(usize, usize)>,
}

impl MemoryState {
    pub fn new(like: &CountGrid) -> Self {
        let empty = CountGrid::zeros(like.rows(), like.cols(), like.channels());
        Self {
            last_seen: empty.clone(),
            ever_seen_max: empty,
            seen_types: BTreeSet::new(),
            ever_visible: vec![false; like.rows() * like.cols()],
            last_building_cell: None,
        }
    }

    /// `is_building[u]` marks enemy types whose cells feed `last_building_cell`.
    pub fn update(&mut self, obs: &CountGrid, visible: &[bool], is_building: &[bool]) {
        let n = obs.num_types();
        let mut building_cell = None;
        for i in 0..obs.rows() {
            for j in 0..obs.cols() {
                let cell = i * obs.cols() + j;
                if visible[cell] {
                    self.ever_visible[cell] = true;
                }
                for u in 0..n {
                    let c = n + u;
                    let v = obs.get(i, j, c);
                    if visible[cell] {
                        self.last_seen.set(i, j, c, v);
                    }
                    if v > self.ever_seen_max.get(i, j, c) {
                        self.ever_seen_max.set(i, j, c, v);
                    }
                    if v > 0.0 {
                        self.seen_types.insert(u);
                        if building_cell.is_none() && is_building[u] {
                            building_cell = Some((i, j));
                        }
                    }
                }
            }
        }
        if building_cell.is_some() {
            self.last_building_cell = building_cell;
        }
    }
}

fn with_allies(obs: &CountGrid, enemy: &CountGrid) -> CountGrid {
    let n = obs.num_types();
    let mut out = enemy.clone();
    for i in 0..obs.rows() {
        for j in 0..obs.cols() {
            for c in 0..n {
                out.set(i, j, c, obs.get(i, j, c));
            }
        }
    }
    out
}

/// 1 for each enemy type with a count of at least one somewhere in `grid`.
pub fn present_types(grid: &CountGrid) -> Vec<f64> {
    let n = grid.num_types();
    (0..n)
        .map(|u| {
            let any = (0..grid.rows()).any(|i| (0..grid.cols()).any(|j| grid.get(i, j, n + u) >= 1.0));
            if any {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

pub fn input_predict(sample: &Sample) -> Predictions {
    Predictions {
        counts: sample.inputs.clone(),
        global: sample.inputs.iter().map(present_types).collect(),
    }
}

fn memory_predict(sample: &Sample, pick: impl Fn(&MemoryState) -> &CountGrid) -> Predictions {
    let mut counts = Vec::with_capacity(sample.len());
    let mut mem = MemoryState::new(&sample.inputs[0]);
    let no_buildings = vec![false; sample.num_types()];
    for (obs, vis) in sample.inputs.iter().zip(&sample.input_visible) {
        mem.update(obs, vis, &no_buildings);
        counts.push(with_allies(obs, pick(&mem)));
    }
    let global = counts.iter().map(present_types).collect();
    Predictions { counts, global }
}

pub fn ps_predict(sample: &Sample) -> Predictions {
    memory_predict(sample, |m| &m.last_seen)
}

pub fn pm_predict(sample: &Sample) -> Predictions {
    memory_predict(sample, |m| &m.ever_seen_max)
}

pub fn pmr_predict(sample: &Sample, tech: &TechTree) -> Predictions {
    let n = sample.num_types();
    let mut mem = MemoryState::new(&sample.inputs[0]);
    let mut counts = Vec::with_capacity(sample.len());
    let mut global = Vec::with_capacity(sample.len());
    let is_building: Vec<bool> = tech.types().iter().map(|t| t.is_building).collect();
    for (obs, vis) in sample.inputs.iter().zip(&sample.input_visible) {
        mem.update(obs, vis, &is_building);
        let mut grid = with_allies(obs, &mem.ever_seen_max);
        let implied = tech.closure(&mem.seen_types);
        let at = mem.last_building_cell.unwrap_or(sample.enemy_start);
        for &u in &implied {
            if tech.types()[u].is_building && !mem.seen_types.contains(&u) {
                grid.add(at.0, at.1, n + u, 1.0);
            }
        }
        let mut g = present_types(&grid);
        for &u in &implied {
            g[u] = 1.0;
        }
        counts.push(grid);
        global.push(g);
    }
    Predictions { counts, global }
}
