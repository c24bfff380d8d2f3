//! Scripted two-player games with full-state recording.
//!
//! Each player starts with a base and four workers in opposite corners of a
//! square arena. Workers shuttle between their base and a mining spot, build
//! orders are drawn from one of three templates (rush, tech, expand) biased by
//! faction, and army units gather at a rally point before attack-moving in
//! straight lines towards the enemy in periodic waves. Nothing ever dies.

use std::collections::HashMap;
use std::sync::Arc;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::grid::{Player, RawFrame, Replay, TerrainMap, UnitRecord, TERRAIN_CHANNELS};
use crate::rng::SplitMix64;
use crate::tech::{default_tech, FactionId, TechTree, TypeId};

pub const TEMPLATES: [&str; 3] = ["rush", "tech", "expand"];

/// Template preference multipliers per faction id, cycled for ids beyond 2.
const FACTION_BIAS: [[f64; 3]; 3] = [[2.5, 1.0, 0.8], [0.8, 2.5, 1.0], [1.0, 0.8, 2.5]];

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub height: usize,
    pub width: usize,
    /// Side of the square playable area anchored at the origin; tiles beyond
    /// it are unwalkable border.
    pub arena: usize,
    pub tech: TechTree,
    pub game_length: f64,
    pub tick: f64,
    pub template_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            height: 264,
            width: 264,
            arena: 256,
            tech: default_tech(),
            game_length: 720.0,
            tick: 5.0,
            template_weights: vec![1.0; TEMPLATES.len()],
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Reads and removes recognised `sim.*` keys over `self`. `sim.tech`
    /// names a tech-tree file.
    pub fn apply(mut self, kv: &mut KeyValues) -> Result<Self> {
        self.height = kv.take_or("sim.height", self.height)?;
        self.width = kv.take_or("sim.width", self.width)?;
        self.arena = kv.take_or("sim.arena", self.arena)?;
        self.game_length = kv.take_or("sim.game_length", self.game_length)?;
        self.tick = kv.take_or("sim.tick", self.tick)?;
        if let Some(w) = kv.take_string("sim.template_weights") {
            self.template_weights = w
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad template weight {x:?}"))))
                .collect::<Result<_>>()?;
        }
        if let Some(path) = kv.take_string("sim.tech") {
            self.tech = TechTree::load(std::path::Path::new(&path))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Sim(m.into()));
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return bad("tick must be positive");
        }
        if !(self.game_length >= 660.0) {
            return bad("game length must be at least 660 s");
        }
        if self.arena < 64 || self.arena > self.height.min(self.width) {
            return bad("arena must be at least 64 tiles and fit inside the map");
        }
        if self.template_weights.len() != TEMPLATES.len()
            || self.template_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.template_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("template weights must be three non-negative reals with a positive sum");
        }
        Roles::resolve(&self.tech)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Roles {
    base: TypeId,
    worker: TypeId,
    barracks: TypeId,
    techlab: TypeId,
    light: TypeId,
    heavy: TypeId,
}

impl Roles {
    fn resolve(tech: &TechTree) -> Result<Self> {
        let need = |name: &str| {
            tech.find(name)
                .ok_or_else(|| Error::Sim(format!("tech tree lacks a `{name}` type")))
        };
        let roles = Roles {
            base: need("base")?,
            worker: need("worker")?,
            barracks: need("barracks")?,
            techlab: need("tech-lab")?,
            light: need("light")?,
            heavy: need("heavy")?,
        };
        let all = roles.all();
        if !tech.types()[roles.base].prerequisites.is_empty() {
            return Err(Error::Sim("unsatisfiable tech tree: base must have no prerequisites".into()));
        }
        for &id in &all {
            let t = &tech.types()[id];
            if let Some(p) = t.prerequisites.iter().find(|p| !all.contains(p)) {
                return Err(Error::Sim(format!(
                    "unsatisfiable tech tree: {} requires {}, which the scripted players never build",
                    t.name,
                    tech.types()[*p].name
                )));
            }
        }
        for &(id, building) in &[
            (roles.base, true),
            (roles.barracks, true),
            (roles.techlab, true),
            (roles.worker, false),
            (roles.light, false),
            (roles.heavy, false),
        ] {
            let t = &tech.types()[id];
            if t.is_building != building || (!building && t.move_speed <= 0.0) {
                return Err(Error::Sim(format!("type {} has the wrong kind for its role", t.name)));
            }
        }
        Ok(roles)
    }

    fn all(&self) -> [TypeId; 6] {
        [self.base, self.worker, self.barracks, self.techlab, self.light, self.heavy]
    }
}

type Point = (f64, f64);

fn toward(from: Point, to: Point, step: f64) -> (Point, bool) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let d = (dx * dx + dy * dy).sqrt();
    if d <= step {
        (to, true)
    } else {
        ((from.0 + dx / d * step, from.1 + dy / d * step), false)
    }
}

#[derive(Clone, Debug)]
struct Mining {
    base: Point,
    spot: Point,
    period: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
enum Task {
    Static,
    Mine(Mining),
    Scout { path: Vec<Point>, next: usize, resume: Mining },
    Rally(Point),
    Attack { target: Point, hold_until: Option<f64> },
}

#[derive(Clone, Debug)]
struct Unit {
    kind: TypeId,
    pos: Point,
    task: Task,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    Worker,
    Barracks,
    TechLab,
    Light,
    Heavy,
    Expand,
}

const ITEMS: [Item; 6] = [Item::Worker, Item::Barracks, Item::TechLab, Item::Light, Item::Heavy, Item::Expand];

struct Side {
    player: Player,
    template: usize,
    main: Point,
    sites: [Point; 2],
    rally: Point,
    bases: Vec<Point>,
    units: Vec<Unit>,
    next_wave: f64,
    wave_gap: (f64, f64),
    scout_at: Option<f64>,
}

struct Layout {
    mains: [Point; 2],
    sites: [[Point; 2]; 2],
}

fn layout(arena: f64, flipped: bool) -> Layout {
    let lo = 24.0;
    let hi = arena - 1.0 - lo;
    let far = 72.0;
    let (a, b) = if flipped { ((hi, lo), (lo, hi)) } else { ((lo, lo), (hi, hi)) };
    let sites_of = |m: Point| {
        let sx = if m.0 < arena / 2.0 { 1.0 } else { -1.0 };
        let sy = if m.1 < arena / 2.0 { 1.0 } else { -1.0 };
        [(m.0 + sx * far, m.1), (m.0, m.1 + sy * far)]
    };
    Layout { mains: [a, b], sites: [sites_of(a), sites_of(b)] }
}

fn disk(t: &mut [f32], width: usize, arena: usize, c: Point, radius: f64, channel: usize, value: f32) {
    let r = radius.ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (c.0.round() as i64 + dx, c.1.round() as i64 + dy);
            if x < 0 || y < 0 || x >= arena as i64 || y >= arena as i64 {
                continue;
            }
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                let k = (y as usize * width + x as usize) * TERRAIN_CHANNELS + channel;
                if t[k] < value {
                    t[k] = value;
                }
            }
        }
    }
}

fn build_terrain(cfg: &SimConfig, lay: &Layout) -> TerrainMap {
    let (h, w, a) = (cfg.height, cfg.width, cfg.arena);
    let mut data = vec![0.0f32; h * w * TERRAIN_CHANNELS];
    for y in 0..a {
        for x in 0..a {
            data[(y * w + x) * TERRAIN_CHANNELS] = 1.0;
        }
    }
    for p in 0..2 {
        disk(&mut data, w, a, lay.mains[p], 28.0, 1, 1.0);
        disk(&mut data, w, a, lay.mains[p], 32.0, 2, 1.0);
        for &s in &lay.sites[p] {
            disk(&mut data, w, a, s, 20.0, 1, 1.0);
            disk(&mut data, w, a, s, 24.0, 2, 0.5);
        }
    }
    TerrainMap::new(h, w, data).expect("generated terrain is well-formed")
}

/// Simulates one game. The result depends only on `cfg` (including its seed).
pub fn generate_replay(cfg: &SimConfig) -> Result<Replay> {
    let mut cache = HashMap::new();
    generate_replay_shared(cfg, &mut cache)
}

/// As [`generate_replay`], reusing identical terrain allocations across games.
pub fn generate_replay_shared(cfg: &SimConfig, terrains: &mut HashMap<bool, Arc<TerrainMap>>) -> Result<Replay> {
    cfg.validate()?;
    let roles = Roles::resolve(&cfg.tech)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let arena = cfg.arena as f64;
    let flipped = rng.chance(0.5);
    let lay = layout(arena, flipped);
    let terrain = terrains.entry(flipped).or_insert_with(|| Arc::new(build_terrain(cfg, &lay))).clone();
    let swap = rng.chance(0.5) as usize;
    let factions_list = cfg.tech.factions();
    let mut factions = [0; 2];
    let mut sides = Vec::with_capacity(2);
    for p in 0..2 {
        let corner = p ^ swap;
        let faction: FactionId = factions_list[rng.below(factions_list.len() as u64) as usize];
        factions[p] = faction;
        let bias = FACTION_BIAS[faction % FACTION_BIAS.len()];
        let weights: Vec<f64> = cfg.template_weights.iter().zip(bias).map(|(w, b)| w * b).collect();
        let template = rng.weighted(&weights).expect("weights have a positive sum");
        let main = lay.mains[corner];
        let mut sites = lay.sites[corner];
        if rng.chance(0.5) {
            sites.swap(0, 1);
        }
        let center = (arena / 2.0, arena / 2.0);
        let rally = (main.0 + (center.0 - main.0) * 0.4, main.1 + (center.1 - main.1) * 0.4);
        let (first_wave, wave_gap) = match template {
            0 => (rng.uniform(200.0, 260.0), (70.0, 100.0)),
            1 => (rng.uniform(330.0, 420.0), (100.0, 130.0)),
            _ => (rng.uniform(400.0, 480.0), (90.0, 120.0)),
        };
        let scout_at = rng.chance(0.85).then(|| rng.uniform(60.0, 130.0));
        let mut side = Side {
            player: if p == 0 { Player::Zero } else { Player::One },
            template,
            main,
            sites,
            rally,
            bases: vec![main],
            units: vec![Unit { kind: roles.base, pos: main, task: Task::Static }],
            next_wave: first_wave,
            wave_gap,
            scout_at,
        };
        for _ in 0..4 {
            let task = Task::Mine(new_mining(&mut rng, main, arena));
            side.units.push(Unit { kind: roles.worker, pos: main, task });
        }
        sides.push(side);
    }

    let n_frames = (cfg.game_length / cfg.tick).floor() as usize + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * cfg.tick;
        if k > 0 {
            for p in 0..2 {
                let enemy_bases = sides[1 - p].bases.clone();
                step_side(&mut sides[p], &enemy_bases, &roles, &cfg.tech, t, cfg.tick, arena, &mut rng);
            }
        }
        frames.push(snapshot(&sides, t, cfg.arena));
    }
    Ok(Replay { terrain, factions, frames })
}

fn new_mining(rng: &mut SplitMix64, base: Point, arena: f64) -> Mining {
    // Mining spots sit on the corner side of the base, away from the centre.
    let away = |v: f64| if v < arena / 2.0 { -1.0 } else { 1.0 };
    let spot = (
        (base.0 + away(base.0) * rng.uniform(6.0, 14.0)).clamp(0.0, arena - 1.0),
        (base.1 + away(base.1) * rng.uniform(6.0, 14.0)).clamp(0.0, arena - 1.0),
    );
    Mining { base, spot, period: rng.uniform(20.0, 30.0), phase: rng.uniform(0.0, 30.0) }
}

fn mining_pos(m: &Mining, t: f64) -> Point {
    let u = ((t + m.phase) / m.period).fract();
    let a = 1.0 - (2.0 * u - 1.0).abs();
    (m.base.0 + (m.spot.0 - m.base.0) * a, m.base.1 + (m.spot.1 - m.base.1) * a)
}

fn jitter(rng: &mut SplitMix64, p: Point, amount: f64, arena: f64) -> Point {
    (
        (p.0 + rng.uniform(-amount, amount)).clamp(0.0, arena - 1.0),
        (p.1 + rng.uniform(-amount, amount)).clamp(0.0, arena - 1.0),
    )
}

fn item_weights(side: &Side, t: f64, counts: &[usize], roles: &Roles) -> [f64; 6] {
    let workers = counts[roles.worker];
    let barracks = counts[roles.barracks];
    let labs = counts[roles.techlab];
    let bases = side.bases.len();
    let on = |c: bool, w: f64| if c { w } else { 0.0 };
    match side.template {
        0 => [
            on(workers < 10, 3.0),
            on(barracks < 3, 2.5),
            on(t > 300.0 && labs < 1, 0.4),
            4.0,
            0.6,
            on(t > 420.0 && bases < 2, 0.3),
        ],
        1 => [
            on(workers < 14, 3.0),
            on(barracks < 2, 1.5),
            on(labs < 2, if labs == 0 { 3.0 } else { 1.0 }),
            1.0,
            4.0,
            on(t > 280.0 && bases < 2, 0.6),
        ],
        _ => [
            on(workers < 22, 3.5),
            on(barracks < 2, 1.2),
            on(t > 200.0 && labs < 1, 1.5),
            2.0,
            1.5,
            on(t > 100.0 && bases < 2, 3.0) + on(t > 400.0 && bases == 2, 0.5),
        ],
    }
}

#[allow(clippy::too_many_arguments)]
fn step_side(side: &mut Side, enemy_bases: &[Point], roles: &Roles, tech: &TechTree, t: f64, dt: f64, arena: f64, rng: &mut SplitMix64) {
    let mut counts = vec![0usize; tech.num_types()];
    for u in &side.units {
        counts[u.kind] += 1;
    }

    // Production: at most one new item per tick, prerequisites checked
    // against the state before this tick.
    if rng.chance(0.45) {
        let mut w = item_weights(side, t, &counts, roles);
        for (i, item) in ITEMS.iter().enumerate() {
            let kind = match item {
                Item::Worker => roles.worker,
                Item::Barracks => roles.barracks,
                Item::TechLab => roles.techlab,
                Item::Light => roles.light,
                Item::Heavy => roles.heavy,
                Item::Expand => roles.base,
            };
            let ready = tech.types()[kind].prerequisites.iter().all(|&p| counts[p] > 0);
            if !ready || (*item == Item::Expand && side.bases.len() > side.sites.len()) {
                w[i] = 0.0;
            }
        }
        if let Some(i) = rng.weighted(&w) {
            produce(side, ITEMS[i], roles, arena, rng);
        }
    }

    // Scouting: the first mining worker visits the enemy main and natural.
    if let Some(at) = side.scout_at {
        if t >= at {
            side.scout_at = None;
            let main = side.main;
            let enemy_main = enemy_bases[0];
            let path = vec![
                jitter(rng, enemy_main, 10.0, arena),
                jitter(rng, enemy_main, 16.0, arena),
                jitter(rng, main, 4.0, arena),
            ];
            if let Some(u) = side.units.iter_mut().find(|u| matches!(u.task, Task::Mine(_))) {
                if let Task::Mine(m) = u.task.clone() {
                    u.task = Task::Scout { path, next: 0, resume: m };
                }
            }
        }
    }

    // Attack waves.
    if t >= side.next_wave {
        side.next_wave = t + rng.uniform(side.wave_gap.0, side.wave_gap.1);
        let target_base = if enemy_bases.len() > 1 && rng.chance(0.5) {
            enemy_bases[1 + rng.below(enemy_bases.len() as u64 - 1) as usize]
        } else {
            enemy_bases[0]
        };
        for u in side.units.iter_mut() {
            if matches!(u.task, Task::Rally(_)) {
                u.task = Task::Attack { target: jitter(rng, target_base, 10.0, arena), hold_until: None };
            }
        }
    }

    // Movement.
    let rally = side.rally;
    for u in side.units.iter_mut() {
        let speed = tech.types()[u.kind].move_speed * dt;
        match &mut u.task {
            Task::Static => {}
            Task::Mine(m) => u.pos = mining_pos(m, t),
            Task::Scout { path, next, resume } => {
                let (p, arrived) = toward(u.pos, path[*next], speed);
                u.pos = p;
                if arrived {
                    *next += 1;
                    if *next == path.len() {
                        u.task = Task::Mine(resume.clone());
                    }
                }
            }
            Task::Rally(target) => {
                u.pos = toward(u.pos, *target, speed).0;
            }
            Task::Attack { target, hold_until } => match *hold_until {
                Some(until) if t >= until => {
                    u.task = Task::Rally(jitter(rng, rally, 8.0, arena));
                }
                Some(_) => {}
                None => {
                    let (p, arrived) = toward(u.pos, *target, speed);
                    u.pos = p;
                    if arrived {
                        *hold_until = Some(t + rng.uniform(25.0, 50.0));
                    }
                }
            },
        }
    }
}

fn produce(side: &mut Side, item: Item, roles: &Roles, arena: f64, rng: &mut SplitMix64) {
    let near = |rng: &mut SplitMix64, c: Point, lo: f64, hi: f64| {
        let ang = rng.uniform(0.0, std::f64::consts::TAU);
        let rad = rng.uniform(lo, hi);
        ((c.0 + rad * ang.cos()).clamp(0.0, arena - 1.0), (c.1 + rad * ang.sin()).clamp(0.0, arena - 1.0))
    };
    let find = |side: &Side, kind: TypeId| -> Vec<Point> {
        side.units.iter().filter(|u| u.kind == kind).map(|u| u.pos).collect()
    };
    match item {
        Item::Worker => {
            // New workers join the newest base until it has eight.
            let newest = *side.bases.last().unwrap();
            let at_newest = side
                .units
                .iter()
                .filter(|u| matches!(&u.task, Task::Mine(m) if m.base == newest))
                .count();
            let base = if at_newest < 8 { newest } else { side.main };
            let m = new_mining(rng, base, arena);
            side.units.push(Unit { kind: roles.worker, pos: base, task: Task::Mine(m) });
        }
        Item::Barracks | Item::TechLab => {
            let kind = if item == Item::Barracks { roles.barracks } else { roles.techlab };
            let pos = near(rng, side.main, 9.0, 20.0);
            side.units.push(Unit { kind, pos, task: Task::Static });
        }
        Item::Light | Item::Heavy => {
            let (kind, producer) = if item == Item::Light {
                (roles.light, roles.barracks)
            } else {
                (roles.heavy, roles.techlab)
            };
            let spots = find(side, producer);
            let pos = spots[rng.below(spots.len() as u64) as usize];
            let target = jitter(rng, side.rally, 8.0, arena);
            side.units.push(Unit { kind, pos, task: Task::Rally(target) });
        }
        Item::Expand => {
            let site = side.sites[side.bases.len() - 1];
            side.bases.push(site);
            side.units.push(Unit { kind: roles.base, pos: site, task: Task::Static });
        }
    }
}

fn snapshot(sides: &[Side], t: f64, arena: usize) -> RawFrame {
    let mut units = Vec::new();
    for side in sides {
        for u in &side.units {
            let c = |v: f64| (v.round().max(0.0) as u32).min(arena as u32 - 1);
            units.push(UnitRecord { player: side.player, kind: u.kind, x: c(u.pos.0), y: c(u.pos.1) });
        }
    }
    RawFrame { time: t, units }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_replay() {
        let cfg = SimConfig { seed: 11, ..Default::default() };
        assert_eq!(generate_replay(&cfg).unwrap(), generate_replay(&cfg).unwrap());
    }

    #[test]
    fn frames_cover_the_game_at_tick_resolution() {
        let r = generate_replay(&SimConfig::default()).unwrap();
        assert_eq!(r.frames.len(), 145);
        assert_eq!(r.frames[3].time, 15.0);
        assert_eq!(r.duration(), 720.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let short = SimConfig { game_length: 600.0, ..Default::default() };
        assert!(generate_replay(&short).is_err());
        let tick = SimConfig { tick: 0.0, ..Default::default() };
        assert!(generate_replay(&tick).is_err());
        let text = format!("{}6 psionic building - 10 0\n", crate::tech::DEFAULT_TECH);
        let odd = TechTree::parse(&text.replace("0 base building -", "0 base building 6")).unwrap();
        let cfg = SimConfig { tech: odd, ..Default::default() };
        assert!(generate_replay(&cfg).unwrap_err().to_string().contains("unsatisfiable"));
    }
}
