//! Maps, frames and the pooling of unit positions into coarse count grids.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tech::{TechTree, TypeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Player {
    Zero,
    One,
    Neutral,
}

impl Player {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Player::Zero),
            1 => Ok(Player::One),
            _ => Err(Error::Dataset(format!("player id must be 0 or 1, got {i}"))),
        }
    }

    pub fn index(self) -> Option<usize> {
        match self {
            Player::Zero => Some(0),
            Player::One => Some(1),
            Player::Neutral => None,
        }
    }

    pub fn opponent(self) -> Option<Player> {
        match self {
            Player::Zero => Some(Player::One),
            Player::One => Some(Player::Zero),
            Player::Neutral => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UnitRecord {
    pub player: Player,
    pub kind: TypeId,
    pub x: u32,
    pub y: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub time: f64,
    pub units: Vec<UnitRecord>,
}

pub const TERRAIN_CHANNELS: usize = 3;

/// Walkability, buildability and ground height per walk tile, stored
/// row-major as `[y][x][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TerrainMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Grid("terrain must be non-empty".into()));
        }
        if data.len() != height * width * TERRAIN_CHANNELS {
            return Err(Error::Shape(format!(
                "terrain {height}x{width}x{TERRAIN_CHANNELS} needs {} values, got {}",
                height * width * TERRAIN_CHANNELS,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Grid("terrain values must be finite".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn flat(height: usize, width: usize) -> Self {
        let mut data = vec![0.0; height * width * TERRAIN_CHANNELS];
        for px in data.chunks_exact_mut(TERRAIN_CHANNELS) {
            px[0] = 1.0;
            px[1] = 1.0;
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * TERRAIN_CHANNELS + c]
    }

    /// The top-left `rows x cols` window, i.e. the tiles some grid cell covers.
    pub fn crop(&self, rows: usize, cols: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows * cols * TERRAIN_CHANNELS);
        for y in 0..rows {
            let start = y * self.width * TERRAIN_CHANNELS;
            out.extend_from_slice(&self.data[start..start + cols * TERRAIN_CHANNELS]);
        }
        out
    }
}

/// A full-information game record.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub terrain: Arc<TerrainMap>,
    pub factions: [usize; 2],
    pub frames: Vec<RawFrame>,
}

impl Replay {
    pub fn height(&self) -> usize {
        self.terrain.height()
    }

    pub fn width(&self) -> usize {
        self.terrain.width()
    }

    /// The latest frame at or before `t`.
    pub fn frame_at(&self, t: f64) -> Option<&RawFrame> {
        let idx = self.frames.partition_point(|f| f.time <= t + 1e-9);
        idx.checked_sub(1).map(|i| &self.frames[i])
    }

    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.time)
    }
}

pub fn grid_dims(height: usize, width: usize, r: usize, g: usize) -> Result<(usize, usize)> {
    if g == 0 {
        return Err(Error::Grid("stride must be at least 1".into()));
    }
    if r >= height || r >= width {
        return Err(Error::Grid(format!("window {r} leaves an empty grid on a {height}x{width} map")));
    }
    Ok(((height - r).div_ceil(g), (width - r).div_ceil(g)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub r: usize,
    pub g: usize,
    pub height: usize,
    pub width: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, r: usize, g: usize) -> Result<Self> {
        if g == 0 || r < g {
            return Err(Error::Grid(format!("need r >= g >= 1, got r={r} g={g}")));
        }
        let (rows, cols) = grid_dims(height, width, r, g)?;
        Ok(Self { r, g, height, width, rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Grid indices whose window `[i*g, i*g + r)` contains tile coordinate `p`.
    pub fn covering(&self, p: usize, extent: usize) -> std::ops::Range<usize> {
        let lo = (p + 1).saturating_sub(self.r).div_ceil(self.g);
        let hi = (p / self.g + 1).min(extent);
        lo..hi.max(lo)
    }

    /// Tiles covered by at least one cell along each axis.
    pub fn covered_extent(&self) -> (usize, usize) {
        ((self.rows - 1) * self.g + self.r, (self.cols - 1) * self.g + self.r)
    }
}

/// Non-negative counts laid out `[row][col][channel]`. Channels `[0, n)` are
/// the perspective player's types in id order, `[n, 2n)` the enemy's.
#[derive(Clone, Debug, PartialEq)]
pub struct CountGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl CountGrid {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    pub fn from_data(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::Shape(format!(
                "{rows}x{cols}x{channels} grid needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if data.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Grid("counts must be finite and non-negative".into()));
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_types(&self) -> usize {
        self.channels / 2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.cols + j) * self.channels + c
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f32 {
        self.data[self.index(i, j, c)]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f32) {
        debug_assert!(v >= 0.0);
        let k = self.index(i, j, c);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, c: usize, v: f32) {
        let k = self.index(i, j, c);
        self.data[k] += v;
    }

    pub fn enemy_channel(&self, kind: TypeId) -> usize {
        self.num_types() + kind
    }

    pub fn same_shape(&self, other: &CountGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

pub fn featurize_frame(frame: &RawFrame, spec: &GridSpec, tech: &TechTree, perspective: Player) -> Result<CountGrid> {
    if perspective == Player::Neutral {
        return Err(Error::Dataset("perspective must be player 0 or 1".into()));
    }
    let n = tech.num_types();
    let mut grid = CountGrid::zeros(spec.rows, spec.cols, 2 * n);
    for u in &frame.units {
        if u.kind >= n {
            return Err(Error::UnknownUnitType(u.kind));
        }
        if u.x as usize >= spec.width || u.y as usize >= spec.height {
            return Err(Error::OutOfBounds { x: u.x, y: u.y, width: spec.width, height: spec.height });
        }
        let side = match u.player {
            Player::Neutral => continue,
            p if p == perspective => 0,
            _ => 1,
        };
        let c = side * n + u.kind;
        for i in spec.covering(u.y as usize, spec.rows) {
            for j in spec.covering(u.x as usize, spec.cols) {
                grid.add(i, j, c, 1.0);
            }
        }
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<bool>,
}

impl BoolGrid {
    pub fn get(&self, i: usize, j: usize, c: usize) -> bool {
        self.data[(i * self.cols + j) * self.channels + c]
    }
}

/// True where the count strictly exceeds `threshold`.
pub fn existence(grid: &CountGrid, threshold: f64) -> BoolGrid {
    BoolGrid {
        rows: grid.rows,
        cols: grid.cols,
        channels: grid.channels,
        data: grid.data.iter().map(|&v| v as f64 > threshold).collect(),
    }
}
