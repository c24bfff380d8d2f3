//! Per-player fog of war at walk-tile resolution.

use crate::error::{Error, Result};
use crate::grid::{CountGrid, GridSpec, Player, RawFrame};
use crate::tech::TechTree;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    pub height: usize,
    pub width: usize,
    /// Row-major `[y][x]`.
    pub mask: Vec<bool>,
}

impl VisibilityMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Largest `d >= 0` with `d*d + dy*dy <= range^2`, or `None` if even `d = 0` fails.
fn half_width(range: f64, dy: i64) -> Option<i64> {
    let r2 = range * range;
    let rest = r2 - (dy * dy) as f64;
    if rest < 0.0 {
        return None;
    }
    let mut d = rest.sqrt().floor() as i64;
    while ((d + 1) * (d + 1)) as f64 <= rest {
        d += 1;
    }
    while d > 0 && (d * d) as f64 > rest {
        d -= 1;
    }
    Some(d)
}

pub fn visibility_mask(frame: &RawFrame, player: Player, tech: &TechTree, height: usize, width: usize) -> Result<VisibilityMask> {
    let mut mask = vec![false; height * width];
    for u in frame.units.iter().filter(|u| u.player == player) {
        let range = tech.get(u.kind)?.sight_range;
        let reach = range.floor() as i64;
        let (ux, uy) = (u.x as i64, u.y as i64);
        for dy in -reach..=reach {
            let y = uy + dy;
            if y < 0 || y >= height as i64 {
                continue;
            }
            let Some(d) = half_width(range, dy) else { continue };
            let x0 = (ux - d).max(0);
            let x1 = (ux + d).min(width as i64 - 1);
            if x0 > x1 {
                continue;
            }
            let row = y as usize * width;
            mask[row + x0 as usize..=row + x1 as usize].fill(true);
        }
    }
    Ok(VisibilityMask { height, width, mask })
}

/// The frame as `player` sees it: all own units plus others on visible tiles.
pub fn observe_with(frame: &RawFrame, player: Player, mask: &VisibilityMask) -> RawFrame {
    let units = frame
        .units
        .iter()
        .filter(|u| u.player == player || mask.get(u.x as usize, u.y as usize))
        .copied()
        .collect();
    RawFrame { time: frame.time, units }
}

pub fn observe(frame: &RawFrame, player: Player, tech: &TechTree, height: usize, width: usize) -> Result<RawFrame> {
    let mask = visibility_mask(frame, player, tech, height, width)?;
    Ok(observe_with(frame, player, &mask))
}

/// A cell is visible when any tile of its window is visible.
pub fn cell_visibility(mask: &VisibilityMask, spec: &GridSpec) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    // Inclusive prefix sums with a zero border row and column.
    let mut acc = vec![0u32; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut run = 0u32;
        for x in 0..w {
            run += mask.mask[y * w + x] as u32;
            acc[(y + 1) * (w + 1) + x + 1] = acc[y * (w + 1) + x + 1] + run;
        }
    }
    let mut out = Vec::with_capacity(spec.cells());
    for i in 0..spec.rows {
        let (y0, y1) = (i * spec.g, (i * spec.g + spec.r).min(h));
        for j in 0..spec.cols {
            let (x0, x1) = (j * spec.g, (j * spec.g + spec.r).min(w));
            let s = acc[y1 * (w + 1) + x1] + acc[y0 * (w + 1) + x0] - acc[y0 * (w + 1) + x1] - acc[y1 * (w + 1) + x0];
            out.push(s > 0);
        }
    }
    out
}

/// Enemy units present in `full` but not in `observed`; ally channels zero.
pub fn hidden_enemy_grid(full: &CountGrid, observed: &CountGrid) -> Result<CountGrid> {
    if !full.same_shape(observed) {
        return Err(Error::Shape(format!(
            "full grid {}x{}x{} vs observed {}x{}x{}",
            full.rows(),
            full.cols(),
            full.channels(),
            observed.rows(),
            observed.cols(),
            observed.channels()
        )));
    }
    let n = full.num_types();
    let c = full.channels();
    let data = full
        .data()
        .iter()
        .zip(observed.data())
        .enumerate()
        .map(|(k, (&f, &o))| if k % c >= n { (f - o).max(0.0) } else { 0.0 })
        .collect();
    CountGrid::from_data(full.rows(), full.cols(), c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UnitRecord;
    use crate::tech::{default_tech, TechTree, UnitTypeDef};

    fn one_type(sight: f64) -> TechTree {
        TechTree::new(
            vec![UnitTypeDef {
                id: 0,
                name: "eye".into(),
                is_building: false,
                prerequisites: Default::default(),
                sight_range: sight,
                move_speed: 1.0,
            }],
            vec![0],
        )
        .unwrap()
    }

    fn at(player: Player, x: u32, y: u32) -> UnitRecord {
        UnitRecord { player, kind: 0, x, y }
    }

    #[test]
    fn empty_and_zero_range() {
        let f = RawFrame { time: 0.0, units: vec![] };
        assert_eq!(visibility_mask(&f, Player::Zero, &one_type(3.0), 9, 9).unwrap().count(), 0);
        let f = RawFrame { time: 0.0, units: vec![at(Player::Zero, 4, 4)] };
        let m = visibility_mask(&f, Player::Zero, &one_type(0.0), 9, 9).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(4, 4));
    }

    #[test]
    fn disc_size_matches_enumeration() {
        for &range in &[1.0, 2.5, 3.0, 7.0, 7.9] {
            let f = RawFrame { time: 0.0, units: vec![at(Player::One, 20, 20)] };
            let m = visibility_mask(&f, Player::One, &one_type(range), 41, 41).unwrap();
            let mut expected = 0;
            for dy in -10i64..=10 {
                for dx in -10i64..=10 {
                    if ((dx * dx + dy * dy) as f64).sqrt() <= range {
                        expected += 1;
                    }
                }
            }
            assert_eq!(m.count(), expected, "range {range}");
        }
    }

    #[test]
    fn observe_keeps_own_units_even_without_sight() {
        let f = RawFrame {
            time: 1.0,
            units: vec![at(Player::Zero, 0, 0), at(Player::One, 5, 5), at(Player::Neutral, 0, 1)],
        };
        let o = observe(&f, Player::Zero, &one_type(1.0), 9, 9).unwrap();
        assert_eq!(o.units, vec![at(Player::Zero, 0, 0), at(Player::Neutral, 0, 1)]);
        let none = observe(&f, Player::Zero, &one_type(1.0), 9, 9).unwrap();
        assert_eq!(none.time, 1.0);
    }

    #[test]
    fn hidden_grid_cases() {
        let tech = default_tech();
        let mut full = CountGrid::zeros(2, 2, tech.num_channels());
        let mut seen = full.clone();
        assert_eq!(hidden_enemy_grid(&full, &seen).unwrap().total(), 0.0);
        full.set(1, 0, 7, 3.0);
        seen.set(1, 0, 7, 1.0);
        full.set(0, 0, 2, 4.0);
        let h = hidden_enemy_grid(&full, &seen).unwrap();
        assert_eq!(h.get(1, 0, 7), 2.0);
        assert_eq!(h.get(0, 0, 2), 0.0);
        assert!(hidden_enemy_grid(&full, &CountGrid::zeros(3, 2, 12)).is_err());
    }

    #[test]
    fn cell_visibility_any_tile() {
        let spec = GridSpec::new(12, 12, 4, 4).unwrap();
        let mut mask = VisibilityMask { height: 12, width: 12, mask: vec![false; 144] };
        mask.mask[5 * 12 + 7] = true;
        let v = cell_visibility(&mask, &spec);
        assert_eq!(v.len(), 4);
        assert_eq!(v, vec![false, false, false, true]);
    }
}
