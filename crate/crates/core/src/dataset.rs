//! Aligned training sequences, game splits and dataset generation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{io_err, Error, Result};
use crate::fog::{cell_visibility, observe_with, visibility_mask};
use crate::grid::{featurize_frame, CountGrid, GridSpec, Player, Replay, TerrainMap};
use crate::replay::{read_replay, write_replay, Manifest, ManifestEntry};
use crate::rng::SplitMix64;
use crate::sim::{generate_replay_shared, SimConfig};
use crate::tech::{FactionId, TechTree};

pub const WINDOW_START: f64 = 180.0;
pub const WINDOW_END: f64 = 660.0;
pub const MIN_STEP: f64 = 5.0;

/// Seconds between consecutive inputs for horizon `s` unless overridden.
pub fn default_step(horizon: f64) -> f64 {
    horizon.max(MIN_STEP)
}

/// Input times `180, 180 + step, ...` up to and including 660.
pub fn input_times(step: f64) -> Vec<f64> {
    let n = ((WINDOW_END - WINDOW_START) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|k| WINDOW_START + k as f64 * step).collect()
}

/// One player's view of one game, aligned step by step.
#[derive(Clone, Debug)]
pub struct Sample {
    pub player: Player,
    pub spec: GridSpec,
    pub step: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub terrain: Arc<TerrainMap>,
    pub faction_me: FactionId,
    pub faction_op: FactionId,
    /// Observed counts at each input time.
    pub inputs: Vec<CountGrid>,
    /// Row-major per-cell visibility at each input time.
    pub input_visible: Vec<Vec<bool>>,
    /// Full-state counts at input time + horizon.
    pub targets: Vec<CountGrid>,
    /// Observed counts at input time + horizon.
    pub target_obs: Vec<CountGrid>,
    /// Per enemy type: present anywhere in the target grid.
    pub global_targets: Vec<Vec<bool>>,
    /// First cell covering the enemy's starting base.
    pub enemy_start: (usize, usize),
}

impl Sample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_types(&self) -> usize {
        self.inputs[0].num_types()
    }
}

pub fn sample_sequence(replay: &Replay, spec: &GridSpec, horizon: f64, player: Player, tech: &TechTree) -> Result<Sample> {
    sample_sequence_with_step(replay, spec, horizon, default_step(horizon), player, tech)
}

pub fn sample_sequence_with_step(
    replay: &Replay,
    spec: &GridSpec,
    horizon: f64,
    step: f64,
    player: Player,
    tech: &TechTree,
) -> Result<Sample> {
    if !(horizon >= 0.0) || !(step > 0.0) {
        return Err(Error::Dataset(format!("need horizon >= 0 and step > 0, got {horizon} and {step}")));
    }
    if spec.height != replay.height() || spec.width != replay.width() {
        return Err(Error::Shape(format!(
            "grid spec is for a {}x{} map, replay is {}x{}",
            spec.height,
            spec.width,
            replay.height(),
            replay.width()
        )));
    }
    let opponent = player.opponent().ok_or_else(|| Error::Dataset("perspective must be player 0 or 1".into()))?;
    let times = input_times(step);
    let last = *times.last().unwrap() + horizon;
    if replay.duration() + 1e-9 < last {
        return Err(Error::Dataset(format!("replay ends at {} s, need {last} s", replay.duration())));
    }
    let frame = |t: f64| {
        replay
            .frame_at(t)
            .ok_or_else(|| Error::Dataset(format!("replay has no frame at or before {t} s")))
    };
    let (h, w) = (spec.height, spec.width);
    let observed = |t: f64| -> Result<(CountGrid, Vec<bool>)> {
        let f = frame(t)?;
        let mask = visibility_mask(f, player, tech, h, w)?;
        let o = featurize_frame(&observe_with(f, player, &mask), spec, tech, player)?;
        Ok((o, cell_visibility(&mask, spec)))
    };
    let n = tech.num_types();
    let mut sample = Sample {
        player,
        spec: *spec,
        step,
        horizon,
        times: times.clone(),
        terrain: replay.terrain.clone(),
        faction_me: replay.factions[player.index().unwrap()],
        faction_op: replay.factions[opponent.index().unwrap()],
        inputs: Vec::with_capacity(times.len()),
        input_visible: Vec::with_capacity(times.len()),
        targets: Vec::with_capacity(times.len()),
        target_obs: Vec::with_capacity(times.len()),
        global_targets: Vec::with_capacity(times.len()),
        enemy_start: (0, 0),
    };
    for &t in &times {
        let (o, vis) = observed(t)?;
        sample.inputs.push(o);
        sample.input_visible.push(vis);
        let y = featurize_frame(frame(t + horizon)?, spec, tech, player)?;
        let global = (0..n)
            .map(|u| (0..spec.rows).any(|i| (0..spec.cols).any(|j| y.get(i, j, n + u) >= 1.0)))
            .collect();
        sample.global_targets.push(global);
        sample.targets.push(y);
        sample.target_obs.push(observed(t + horizon)?.0);
    }
    let first = replay.frames.first().ok_or_else(|| Error::Dataset("replay has no frames".into()))?;
    let start = first
        .units
        .iter()
        .find(|u| u.player == opponent && tech.types()[u.kind].is_building)
        .ok_or_else(|| Error::Dataset("enemy has no starting building".into()))?;
    let rows = spec.covering(start.y as usize, spec.rows);
    let cols = spec.covering(start.x as usize, spec.cols);
    sample.enemy_start = (rows.start.min(spec.rows - 1), cols.start.min(spec.cols - 1));
    Ok(sample)
}

/// Both perspectives of a replay, player 0 first.
pub fn samples_for_replay(replay: &Replay, spec: &GridSpec, horizon: f64, step: f64, tech: &TechTree) -> Result<[Sample; 2]> {
    Ok([
        sample_sequence_with_step(replay, spec, horizon, step, Player::Zero, tech)?,
        sample_sequence_with_step(replay, spec, horizon, step, Player::One, tech)?,
    ])
}

/// Reads every replay of a manifest, sharing identical terrains.
pub fn load_replays(manifest: &Manifest) -> Result<Vec<Replay>> {
    let mut pool: Vec<Arc<TerrainMap>> = Vec::new();
    manifest
        .entries
        .iter()
        .map(|e| {
            let mut r = read_replay(&e.path)?;
            match pool.iter().find(|t| ***t == *r.terrain) {
                Some(t) => r.terrain = t.clone(),
                None => pool.push(r.terrain.clone()),
            }
            Ok(r)
        })
        .collect()
}

pub fn samples_for_replays(replays: &[Replay], spec: &GridSpec, horizon: f64, step: f64, tech: &TechTree) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(2 * replays.len());
    for r in replays {
        out.extend(samples_for_replay(r, spec, horizon, step, tech)?);
    }
    Ok(out)
}

/// Deterministic disjoint train/valid/test partition by game.
pub fn split(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<[Manifest; 3]> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Dataset(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = manifest.len();
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_valid = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_valid;
    for (name, k) in [("train", n_train), ("valid", n_valid), ("test", n_test)] {
        if k == 0 {
            return Err(Error::Dataset(format!("{name} split of {n} games would be empty")));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut parts = [order[..n_train].to_vec(), order[n_train..n_train + n_valid].to_vec(), order[n_train + n_valid..].to_vec()];
    Ok(parts.each_mut().map(|idx| {
        idx.sort_unstable();
        Manifest { entries: idx.iter().map(|&i| manifest.entries[i].clone()).collect() }
    }))
}

/// Per-game seeds derived from a base seed.
pub fn game_seeds(base_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = SplitMix64::new(base_seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Simulates `count` games in memory.
pub fn generate_replays(base_seed: u64, count: usize, config: &SimConfig) -> Result<Vec<(u64, Replay)>> {
    let mut cache = HashMap::new();
    game_seeds(base_seed, count)
        .into_iter()
        .map(|seed| {
            let cfg = SimConfig { seed, ..config.clone() };
            Ok((seed, generate_replay_shared(&cfg, &mut cache)?))
        })
        .collect()
}

/// Writes `count` replays plus `manifest.txt` into `dir`.
pub fn generate_dataset(base_seed: u64, count: usize, config: &SimConfig, dir: &Path) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::Dataset("count must be at least 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut cache = HashMap::new();
    let mut manifest = Manifest::default();
    for (i, seed) in game_seeds(base_seed, count).into_iter().enumerate() {
        let cfg = SimConfig { seed, ..config.clone() };
        let replay = generate_replay_shared(&cfg, &mut cache)?;
        let path = dir.join(format!("game_{i:05}.dfg"));
        write_replay(&replay, &path)?;
        manifest.entries.push(ManifestEntry { path, seed, factions: replay.factions });
    }
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(manifest)
}
