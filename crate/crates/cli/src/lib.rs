//! Subcommand implementations behind the `defog` binary.
//!
//! Every command reads a `key=value` configuration (file plus `--set`
//! overrides), writes its results as line-based `key=value` or whitespace
//! separated records, and is a pure function of its inputs and `--seed`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use defog_core::baselines::{Baseline, Predictions};
use defog_core::config::KeyValues;
use defog_core::dataset::{default_step, generate_dataset, load_replays, samples_for_replays, split, Sample};
use defog_core::eval::{
    calibrate, heatmap, render_machine, render_table, score_predictor, sweep_threshold, threshold_grid, Aggregation,
    Calibration, EvalReport, ReportRow, Task, ThresholdPolicy, SWEEP_POINTS,
};
use defog_core::fog::hidden_enemy_grid;
use defog_core::grid::{GridSpec, Player, Replay};
use defog_core::model::{load_model, save_model, train, EncoderKind, Model, ModelConfig, TrainConfig};
use defog_core::replay::Manifest;
use defog_core::sim::SimConfig;
use defog_core::tech::{default_tech, TechTree};

/// Namespaces any command tolerates in a shared configuration file.
const NAMESPACES: &[&str] = &["sim.", "model.", "train.", "eval.", "grid.", "split."];

pub struct Settings {
    pub seed: u64,
    pub kv: KeyValues,
}

impl Settings {
    pub fn load(config: Option<&Path>, seed: u64, overrides: &[String]) -> Result<Self> {
        let mut kv = match config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(Self { seed, kv })
    }

    /// Rejects keys outside the known namespaces.
    pub fn finish(mut self) -> Result<()> {
        self.kv.discard_prefixed(NAMESPACES);
        Ok(self.kv.finish()?)
    }

    pub fn tech(&mut self) -> Result<TechTree> {
        Ok(match self.kv.take_string("sim.tech") {
            Some(p) => TechTree::load(Path::new(&p))?,
            None => default_tech(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub aggregation: Aggregation,
    pub huber_delta: f64,
    /// Threshold policy for the rule-based predictors; learned heads are
    /// always swept.
    pub baseline_policy: ThresholdPolicy,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { aggregation: Aggregation::Pooled, huber_delta: 1.0, baseline_policy: ThresholdPolicy::Fixed(0.5) }
    }
}

impl EvalSettings {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let mut e = Self::default();
        if let Some(a) = kv.take_string("eval.aggregation") {
            e.aggregation = match a.as_str() {
                "pooled" => Aggregation::Pooled,
                "per_step" => Aggregation::PerStep,
                _ => bail!("eval.aggregation must be pooled or per_step, got {a:?}"),
            };
        }
        e.huber_delta = kv.take_or("eval.huber_delta", e.huber_delta)?;
        if let Some(t) = kv.take_string("eval.baseline_threshold") {
            e.baseline_policy = match t.as_str() {
                "swept" => ThresholdPolicy::Swept,
                v => ThresholdPolicy::Fixed(v.parse().map_err(|_| anyhow!("bad eval.baseline_threshold {v:?}"))?),
            };
        }
        Ok(e)
    }
}

/// Grid geometry of one evaluation setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridChoice {
    pub r: usize,
    pub g: usize,
    pub s: f64,
    pub step: f64,
}

impl GridChoice {
    /// Square cells (`r = g`) sampled every `max(s, 5)` seconds unless
    /// `grid.r` / `grid.step` say otherwise.
    pub fn new(g: usize, s: f64, kv: &mut KeyValues) -> Result<Self> {
        let r = kv.take_or("grid.r", g)?;
        let step = kv.take_or("grid.step", default_step(s))?;
        Ok(Self { r, g, s, step })
    }

    pub fn spec(&self, replay: &Replay) -> Result<GridSpec> {
        Ok(GridSpec::new(replay.height(), replay.width(), self.r, self.g)?)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

/// Replays and the samples of both perspectives.
pub fn load_samples(manifest: &Path, grid: GridChoice, tech: &TechTree) -> Result<(Vec<Replay>, Vec<Sample>)> {
    let replays = load_replays(&read_manifest(manifest)?)?;
    let first = replays.first().ok_or_else(|| anyhow!("manifest {} lists no games", manifest.display()))?;
    let spec = grid.spec(first)?;
    let samples = samples_for_replays(&replays, &spec, grid.s, grid.step, tech)?;
    Ok((replays, samples))
}

pub enum Predictor {
    Baseline(Baseline),
    Model { name: String, model: Box<Model<f32>> },
}

impl Predictor {
    pub fn parse_baseline(name: &str) -> Option<Predictor> {
        Baseline::ALL.into_iter().find(|b| b.name() == name).map(Predictor::Baseline)
    }

    pub fn load_model(path: &Path) -> Result<Predictor> {
        let model = load_model(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        Ok(Predictor::Model { name: model.config().encoder.name().to_string(), model: Box::new(model) })
    }

    pub fn name(&self) -> &str {
        match self {
            Predictor::Baseline(b) => b.name(),
            Predictor::Model { name, .. } => name,
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, Predictor::Model { .. })
    }

    pub fn predict(&self, samples: &[Sample], tech: &TechTree) -> Result<Vec<Predictions>> {
        match self {
            Predictor::Baseline(b) => Ok(samples.iter().map(|s| b.predict(s, tech)).collect()),
            Predictor::Model { model, .. } => Ok(samples.iter().map(|s| model.predict(s)).collect::<defog_core::Result<_>>()?),
        }
    }
}

pub fn simulate(mut st: Settings, games: usize, out: &Path, log: &mut dyn Write) -> Result<()> {
    let cfg = SimConfig::default().apply(&mut st.kv)?;
    let seed = st.seed;
    st.finish()?;
    let manifest = generate_dataset(seed, games, &cfg, out)?;
    for (i, e) in manifest.entries.iter().enumerate() {
        writeln!(
            log,
            "game={i} seed={} factions={},{} path={}",
            e.seed,
            e.factions[0],
            e.factions[1],
            e.path.file_name().unwrap().to_string_lossy()
        )?;
    }
    writeln!(log, "games={} manifest={}", manifest.len(), out.join("manifest.txt").display())?;
    Ok(())
}

fn absolute(m: Manifest) -> Result<Manifest> {
    let mut m = m;
    for e in &mut m.entries {
        e.path = fs::canonicalize(&e.path).with_context(|| format!("resolving {}", e.path.display()))?;
    }
    Ok(m)
}

pub fn split_command(mut st: Settings, manifest: &Path, out: &Path, log: &mut dyn Write) -> Result<()> {
    let ratios = match st.kv.take_string("split.ratios") {
        None => [0.8, 0.1, 0.1],
        Some(r) => {
            let v: Vec<f64> = r.split(',').map(|x| x.trim().parse()).collect::<std::result::Result<_, _>>()?;
            <[f64; 3]>::try_from(v).map_err(|_| anyhow!("split.ratios needs three values"))?
        }
    };
    let seed = st.seed;
    st.finish()?;
    let all = absolute(read_manifest(manifest)?)?;
    let parts = split(&all, ratios, seed)?;
    fs::create_dir_all(out)?;
    let out = fs::canonicalize(out)?;
    for (name, part) in ["train", "valid", "test"].iter().zip(&parts) {
        let path = out.join(format!("{name}.txt"));
        part.write(&path)?;
        writeln!(log, "split={name} games={} manifest={name}.txt", part.len())?;
    }
    Ok(())
}

/// Recomputes every sample invariant from scratch and reports per-game
/// statistics. Fails on the first violation.
pub fn featurize_check(mut st: Settings, manifest: &Path, g: usize, s: f64, log: &mut dyn Write) -> Result<()> {
    let tech = st.tech()?;
    let grid = GridChoice::new(g, s, &mut st.kv)?;
    st.finish()?;
    let (replays, samples) = load_samples(manifest, grid, &tech)?;
    let spec = samples[0].spec;
    writeln!(log, "rows={} cols={} r={} g={} s={} step={} steps={}", spec.rows, spec.cols, spec.r, spec.g, s, grid.step, samples[0].len())?;
    let n = tech.num_types();
    for (gi, pair) in samples.chunks(2).enumerate() {
        for sample in pair {
            let (mut enemy, mut hidden, mut visible_cells) = (0.0, 0.0, 0usize);
            for k in 0..sample.len() {
                let (y, o) = (&sample.targets[k], &sample.target_obs[k]);
                let h = hidden_enemy_grid(y, o)?;
                for idx in 0..y.data().len() {
                    let (yv, ov, hv) = (y.data()[idx], o.data()[idx], h.data()[idx]);
                    if yv < 0.0 || yv.fract() != 0.0 || ov > yv || (idx % y.channels() >= n && hv + ov != yv) {
                        bail!("game {gi} player {:?} step {k}: inconsistent counts at flat index {idx}", sample.player);
                    }
                }
                for c in 0..y.rows() * y.cols() {
                    enemy += (n..2 * n).map(|ch| y.data()[c * 2 * n + ch] as f64).sum::<f64>();
                    hidden += (n..2 * n).map(|ch| h.data()[c * 2 * n + ch] as f64).sum::<f64>();
                }
                visible_cells += sample.input_visible[k].iter().filter(|&&v| v).count();
                for (u, &present) in sample.global_targets[k].iter().enumerate() {
                    let any = (0..y.rows() * y.cols()).any(|c| y.data()[c * 2 * n + n + u] >= 1.0);
                    if any != present {
                        bail!("game {gi} step {k}: global target for type {u} disagrees with the grid");
                    }
                }
            }
            let idx = sample.player.index().unwrap();
            writeln!(
                log,
                "game={gi} player={idx} faction_me={} faction_op={} frames={} enemy_unit_cells={enemy} hidden_fraction={:.6} visible_cell_fraction={:.6}",
                sample.faction_me,
                sample.faction_op,
                replays[gi].frames.len(),
                if enemy > 0.0 { hidden / enemy } else { 0.0 },
                visible_cells as f64 / (sample.len() * spec.cells()) as f64
            )?;
        }
    }
    writeln!(log, "ok games={} samples={}", replays.len(), samples.len())?;
    Ok(())
}

/// Model configuration for data on `replay`'s map with the given grid.
pub fn model_config(kv: &mut KeyValues, grid: GridChoice, replay: &Replay, tech: &TechTree) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::desk(EncoderKind::ConvLstm);
    cfg.r = grid.r;
    cfg.g = grid.g;
    cfg.horizon = grid.s;
    cfg.map_height = replay.height();
    cfg.map_width = replay.width();
    cfg.num_types = tech.num_types();
    cfg.num_factions = tech.factions().iter().max().map_or(1, |m| m + 1);
    Ok(cfg.apply(kv)?)
}

pub struct TrainPaths<'a> {
    pub train: &'a Path,
    pub valid: &'a Path,
    pub out: &'a Path,
}

pub fn train_command(mut st: Settings, paths: TrainPaths<'_>, g: usize, s: f64, log: &mut dyn Write) -> Result<()> {
    let tech = st.tech()?;
    let grid = GridChoice::new(g, s, &mut st.kv)?;
    let (train_replays, train_samples) = load_samples(paths.train, grid, &tech)?;
    let (_, valid_samples) = load_samples(paths.valid, grid, &tech)?;
    let mcfg = model_config(&mut st.kv, grid, &train_replays[0], &tech)?;
    let tcfg = TrainConfig { seed: st.seed, ..TrainConfig::default() }.apply(&mut st.kv)?;
    let seed = st.seed;
    st.finish()?;
    let mut model = Model::<f32>::new(mcfg, seed)?;
    writeln!(
        log,
        "encoder={} depth={} block={} params={} train_samples={} valid_samples={} steps={} lr={}",
        model.config().encoder.name(),
        model.config().depth,
        model.config().block.name(),
        model.param_count(),
        train_samples.len(),
        valid_samples.len(),
        tcfg.steps,
        tcfg.lr
    )?;
    match train(&mut model, &train_samples, &valid_samples, &tech, &tcfg, log) {
        Ok(out) => {
            let best = Model::with_params(model.config().clone(), out.best)?;
            save_model(paths.out, &best)?;
            if let Some(v) = out.best_validation {
                writeln!(log, "best step={} valid_op_u_f1={:.6} checkpoint={}", v.step, v.op_u_f1, paths.out.display())?;
            }
            Ok(())
        }
        Err(e @ defog_core::Error::Diverged { .. }) => {
            save_model(paths.out, &model)?;
            writeln!(log, "saved last finite parameters to {}", paths.out.display())?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn predictor_from(spec: &str) -> Result<Predictor> {
    match Predictor::parse_baseline(spec) {
        Some(p) => Ok(p),
        None => Predictor::load_model(Path::new(spec)),
    }
}

pub fn sweep_command(mut st: Settings, valid: &Path, predictor: &str, g: usize, s: f64, log: &mut dyn Write) -> Result<()> {
    let tech = st.tech()?;
    let grid = GridChoice::new(g, s, &mut st.kv)?;
    let ev = EvalSettings::from_kv(&mut st.kv)?;
    st.finish()?;
    let p = predictor_from(predictor)?;
    let (_, samples) = load_samples(valid, grid, &tech)?;
    let preds = p.predict(&samples, &tech)?;
    let thresholds = threshold_grid(SWEEP_POINTS);
    for task in Task::EXISTENCE {
        let sw = sweep_threshold(&preds, &samples, task, &tech, ev.aggregation, &thresholds)?;
        for (t, f) in &sw.curve {
            writeln!(log, "curve predictor={} task={} threshold={t:.6} f1={f:.6}", p.name(), task.name())?;
        }
        writeln!(log, "best predictor={} task={} threshold={:.6} f1={:.6}", p.name(), task.name(), sw.best, sw.best_f1)?;
    }
    Ok(())
}

/// Calibrates each predictor on `valid` and scores it on `test`.
pub fn evaluate_predictors(
    predictors: &[Predictor],
    valid: &[Sample],
    test: &[Sample],
    tech: &TechTree,
    ev: EvalSettings,
) -> Result<Vec<(ReportRow, Calibration)>> {
    predictors
        .iter()
        .map(|p| {
            let policy = if p.is_learned() { ThresholdPolicy::Swept } else { ev.baseline_policy };
            let cal = calibrate(policy, &p.predict(valid, tech)?, valid, tech, ev.aggregation)?;
            let row = score_predictor(p.name(), cal, &p.predict(test, tech)?, test, tech, ev.aggregation, ev.huber_delta)?;
            Ok((row, cal))
        })
        .collect()
}

fn predictors_for(models: &[PathBuf]) -> Result<Vec<Predictor>> {
    let mut out: Vec<Predictor> = Baseline::ALL.into_iter().map(Predictor::Baseline).collect();
    for m in models {
        out.push(Predictor::load_model(m)?);
    }
    Ok(out)
}

pub struct EvalPaths<'a> {
    pub valid: &'a Path,
    pub test: &'a Path,
}

pub fn evaluate_command(
    mut st: Settings,
    paths: EvalPaths<'_>,
    models: &[PathBuf],
    g: usize,
    s: f64,
    log: &mut dyn Write,
) -> Result<()> {
    let tech = st.tech()?;
    let grid = GridChoice::new(g, s, &mut st.kv)?;
    let ev = EvalSettings::from_kv(&mut st.kv)?;
    st.finish()?;
    let predictors = predictors_for(models)?;
    let (_, valid) = load_samples(paths.valid, grid, &tech)?;
    let (replays, test) = load_samples(paths.test, grid, &tech)?;
    let rows = evaluate_predictors(&predictors, &valid, &test, &tech, ev)?;
    let report = EvalReport { rows: rows.into_iter().map(|r| r.0).collect(), games: replays.len() };
    write!(log, "{}", render_machine(&report))?;
    Ok(())
}

/// One checkpoint per `(g, s)` in `g:s=path` form.
pub fn parse_model_spec(text: &str) -> Result<((usize, f64), PathBuf)> {
    let (key, path) = text.split_once('=').ok_or_else(|| anyhow!("--model expects g:s=path, got {text:?}"))?;
    let grid = defog_core::eval::parse_grid_list(key)?;
    match grid.as_slice() {
        [one] => Ok((*one, PathBuf::from(path))),
        _ => bail!("--model expects a single g:s before '=', got {key:?}"),
    }
}

pub fn report_command(
    mut st: Settings,
    paths: EvalPaths<'_>,
    grid_list: &str,
    models: &[String],
    machine_out: Option<&Path>,
    table: &mut dyn Write,
) -> Result<()> {
    let tech = st.tech()?;
    let grids = defog_core::eval::parse_grid_list(grid_list)?;
    let models: Vec<_> = models.iter().map(|m| parse_model_spec(m)).collect::<Result<_>>()?;
    let r_override: Option<usize> = st.kv.take("grid.r")?;
    let step_override: Option<f64> = st.kv.take("grid.step")?;
    let ev = EvalSettings::from_kv(&mut st.kv)?;
    st.finish()?;
    let mut report = EvalReport::default();
    for &(g, s) in &grids {
        let grid = GridChoice { r: r_override.unwrap_or(g), g, s, step: step_override.unwrap_or(default_step(s)) };
        let ckpts: Vec<PathBuf> = models.iter().filter(|(k, _)| *k == (g, s)).map(|(_, p)| p.clone()).collect();
        let predictors = predictors_for(&ckpts)?;
        let (_, valid) = load_samples(paths.valid, grid, &tech)?;
        let (replays, test) = load_samples(paths.test, grid, &tech)?;
        report.games = replays.len();
        for (row, _) in evaluate_predictors(&predictors, &valid, &test, &tech, ev)? {
            report.rows.push(row);
        }
    }
    write!(table, "{}", render_table(&report))?;
    if let Some(p) = machine_out {
        fs::write(p, render_machine(&report)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub struct HeatmapTarget {
    pub game: usize,
    pub player: usize,
    pub step: usize,
    pub unit_type: String,
}

#[allow(clippy::too_many_arguments)]
pub fn heatmap_command(
    mut st: Settings,
    manifest: &Path,
    predictor: &str,
    target: &HeatmapTarget,
    g: usize,
    s: f64,
    out_prefix: &Path,
    log: &mut dyn Write,
) -> Result<()> {
    let tech = st.tech()?;
    let grid = GridChoice::new(g, s, &mut st.kv)?;
    st.finish()?;
    let m = read_manifest(manifest)?;
    let entry = m.entries.get(target.game).ok_or_else(|| anyhow!("game {} not in manifest ({} games)", target.game, m.len()))?;
    let one = Manifest { entries: vec![entry.clone()] };
    let replays = load_replays(&one)?;
    let spec = grid.spec(&replays[0])?;
    let player = Player::from_index(target.player)?;
    let sample = defog_core::dataset::sample_sequence_with_step(&replays[0], &spec, grid.s, grid.step, player, &tech)?;
    if target.step >= sample.len() {
        bail!("step {} out of range; the sample has {} steps", target.step, sample.len());
    }
    let kind = match target.unit_type.parse::<usize>() {
        Ok(id) => tech.get(id)?.id,
        Err(_) => tech.find(&target.unit_type).ok_or_else(|| anyhow!("unknown unit type {:?}", target.unit_type))?,
    };
    let p = predictor_from(predictor)?;
    let preds = p.predict(std::slice::from_ref(&sample), &tech)?;
    let k = target.step;
    let channel = sample.inputs[k].enemy_channel(kind);
    if let Some(dir) = out_prefix.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let files = heatmap(&sample.inputs[k], &preds[0].counts[k], &sample.targets[k], channel, out_prefix)?;
    for f in files {
        writeln!(log, "wrote={}", f.display())?;
    }
    Ok(())
}
