//! Line-based replay and manifest files.
//!
//! A replay file is:
//!
//! ```text
//! DFG1 <H> <W> <C_T> <faction of player 0> <faction of player 1>
//! <C_T blocks of H lines, W space-separated terrain values per line>
//! <time> | <player>,<type>,<x>,<y> ; <player>,<type>,<x>,<y> ; ...
//! ...
//! end <number of frames>
//! ```
//!
//! Players are `0`, `1` or `n` (neutral). Numbers are written in their
//! shortest round-trip decimal form, so reading a written replay gives back
//! the identical value. The `end` trailer marks a complete file.
//!
//! A manifest lists one replay per line as `<path> <seed> <f0> <f1>`; relative
//! paths are resolved against the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{io_err, Error, Result};
use crate::grid::{Player, RawFrame, Replay, TerrainMap, UnitRecord, TERRAIN_CHANNELS};

pub const REPLAY_MAGIC: &str = "DFG1";

pub fn encode_replay(replay: &Replay) -> String {
    let t = &replay.terrain;
    let (h, w) = (t.height(), t.width());
    let mut out = String::with_capacity(h * w * TERRAIN_CHANNELS * 2 + replay.frames.len() * 1024);
    writeln!(out, "{REPLAY_MAGIC} {h} {w} {TERRAIN_CHANNELS} {} {}", replay.factions[0], replay.factions[1]).unwrap();
    for c in 0..TERRAIN_CHANNELS {
        for y in 0..h {
            for x in 0..w {
                if x > 0 {
                    out.push(' ');
                }
                write!(out, "{}", t.get(y, x, c)).unwrap();
            }
            out.push('\n');
        }
    }
    for f in &replay.frames {
        write!(out, "{} |", f.time).unwrap();
        for (i, u) in f.units.iter().enumerate() {
            out.push_str(if i == 0 { " " } else { " ; " });
            match u.player {
                Player::Zero => out.push('0'),
                Player::One => out.push('1'),
                Player::Neutral => out.push('n'),
            }
            write!(out, ",{},{},{}", u.kind, u.x, u.y).unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "end {}", replay.frames.len()).unwrap();
    out
}

pub fn decode_replay(text: &str, origin: &str) -> Result<Replay> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Replay { path: origin.into(), msg: "empty file".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    match fields.first() {
        Some(&REPLAY_MAGIC) => {}
        Some(other) if other.starts_with("DFG") => return Err(Error::Version(other.to_string())),
        _ => return Err(parse_err(1, "missing DFG1 header".into())),
    }
    if fields.len() != 6 {
        return Err(parse_err(1, "header must be `DFG1 H W C_T f0 f1`".into()));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| parse_err(1, format!("bad {what} {s:?}")));
    let (h, w, ct) = (num(fields[1], "height")?, num(fields[2], "width")?, num(fields[3], "channel count")?);
    let factions = [num(fields[4], "faction")?, num(fields[5], "faction")?];
    if ct != TERRAIN_CHANNELS {
        return Err(parse_err(1, format!("expected {TERRAIN_CHANNELS} terrain channels, got {ct}")));
    }
    let mut data = vec![0.0f32; h * w * ct];
    for c in 0..ct {
        for y in 0..h {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::Replay { path: origin.into(), msg: "truncated inside terrain raster".into() })?;
            let mut count = 0;
            for (x, tok) in line.split_ascii_whitespace().enumerate() {
                if x >= w {
                    return Err(parse_err(n, format!("more than {w} terrain values")));
                }
                let v: f32 = tok.parse().map_err(|_| parse_err(n, format!("bad terrain value {tok:?}")))?;
                data[(y * w + x) * ct + c] = v;
                count += 1;
            }
            if count != w {
                return Err(parse_err(n, format!("expected {w} terrain values, got {count}")));
            }
        }
    }
    let terrain = TerrainMap::new(h, w, data).map_err(|e| Error::Replay { path: origin.into(), msg: e.to_string() })?;

    let mut frames: Vec<RawFrame> = Vec::new();
    let last_good = |frames: &[RawFrame]| match frames.last() {
        Some(f) => format!("last good frame t={}", f.time),
        None => "no complete frame".to_string(),
    };
    let mut complete = false;
    for (n, line) in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("end ") {
            let expected: usize = rest.trim().parse().map_err(|_| parse_err(n, "bad frame count in trailer".into()))?;
            if expected != frames.len() {
                return Err(parse_err(n, format!("trailer declares {expected} frames, found {}", frames.len())));
            }
            complete = true;
            break;
        }
        let frame = parse_frame(line, w, h)
            .map_err(|msg| parse_err(n, format!("{msg} ({})", last_good(&frames))))?;
        if let Some(prev) = frames.last() {
            if !(frame.time > prev.time) {
                return Err(parse_err(n, format!("frame times must increase ({})", last_good(&frames))));
            }
        }
        frames.push(frame);
    }
    if !complete {
        return Err(Error::Replay {
            path: origin.into(),
            msg: format!("truncated: missing end trailer, {}", last_good(&frames)),
        });
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(n, "content after end trailer".into()));
    }
    Ok(Replay { terrain: Arc::new(terrain), factions, frames })
}

fn parse_frame(line: &str, width: usize, height: usize) -> std::result::Result<RawFrame, String> {
    let (time, rest) = line.split_once('|').ok_or("frame line lacks `|`")?;
    let time: f64 = time.trim().parse().map_err(|_| format!("bad frame time {:?}", time.trim()))?;
    if !time.is_finite() {
        return Err("frame time must be finite".into());
    }
    let mut units = Vec::new();
    let rest = rest.trim();
    if !rest.is_empty() {
        for rec in rest.split(';') {
            let parts: Vec<&str> = rec.trim().split(',').collect();
            if parts.len() != 4 {
                return Err(format!("unit record {rec:?} must be player,type,x,y"));
            }
            let player = match parts[0] {
                "0" => Player::Zero,
                "1" => Player::One,
                "n" => Player::Neutral,
                p => return Err(format!("bad player {p:?}")),
            };
            let int = |s: &str| s.parse::<u32>().map_err(|_| format!("bad integer {s:?}"));
            let (kind, x, y) = (int(parts[1])? as usize, int(parts[2])?, int(parts[3])?);
            if x as usize >= width || y as usize >= height {
                return Err(format!("unit at ({x}, {y}) is off the map"));
            }
            units.push(UnitRecord { player, kind, x, y });
        }
    }
    Ok(RawFrame { time, units })
}

pub fn write_replay(replay: &Replay, path: &Path) -> Result<()> {
    std::fs::write(path, encode_replay(replay)).map_err(io_err(path))
}

pub fn read_replay(path: &Path) -> Result<Replay> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    decode_replay(&text, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub seed: u64,
    pub factions: [usize; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(out, "{} {} {} {}", e.path.display(), e.seed, e.factions[0], e.factions[1]).unwrap();
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse { path: origin.into(), line: i + 1, msg: msg.into() };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(err("manifest lines are `path seed f0 f1`"));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(f[0]),
                seed: f[1].parse().map_err(|_| err("bad seed"))?,
                factions: [f[2].parse().map_err(|_| err("bad faction"))?, f[3].parse().map_err(|_| err("bad faction"))?],
            });
        }
        Ok(Self { entries })
    }

    /// Reads a manifest, resolving relative replay paths against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = Self::parse(&text, &path.display().to_string())?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = dir.join(&e.path);
            }
        }
        Ok(m)
    }

    /// Writes the manifest with paths relative to its directory when possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let rel = Manifest {
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    path: e.path.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone()),
                    ..e.clone()
                })
                .collect(),
        };
        std::fs::write(path, rel.to_text()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Replay {
        let mut data = vec![0.0f32; 2 * 3 * 3];
        data[1] = 0.5;
        data[17] = -1.25;
        Replay {
            terrain: Arc::new(TerrainMap::new(2, 3, data).unwrap()),
            factions: [2, 0],
            frames: vec![
                RawFrame { time: 0.0, units: vec![] },
                RawFrame {
                    time: 2.5,
                    units: vec![
                        UnitRecord { player: Player::Zero, kind: 1, x: 2, y: 1 },
                        UnitRecord { player: Player::Neutral, kind: 0, x: 0, y: 0 },
                    ],
                },
            ],
        }
    }

    #[test]
    fn exact_text_layout() {
        let text = encode_replay(&tiny());
        let expected = "DFG1 2 3 3 2 0\n0 0 0\n0 0 0\n0.5 0 0\n0 0 0\n0 0 0\n0 0 -1.25\n0 |\n2.5 | 0,1,2,1 ; n,0,0,0\nend 2\n";
        assert_eq!(text, expected);
        assert_eq!(decode_replay(&text, "mem").unwrap(), tiny());
    }

    #[test]
    fn truncation_and_version_errors() {
        let text = encode_replay(&tiny());
        let cut = &text[..text.len() - "end 2\n".len()];
        let err = decode_replay(cut, "mem").unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("t=2.5"), "{err}");
        let v2 = text.replacen("DFG1", "DFG2", 1);
        assert!(matches!(decode_replay(&v2, "mem"), Err(Error::Version(v)) if v == "DFG2"));
        let bad = text.replace("0,1,2,1", "0,1,2");
        let err = decode_replay(&bad, "mem").unwrap_err().to_string();
        assert!(err.contains("line 9"), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry { path: "games/a.dfg".into(), seed: 42, factions: [1, 2] }],
        };
        assert_eq!(m.to_text(), "games/a.dfg 42 1 2\n");
        assert_eq!(Manifest::parse(&m.to_text(), "m").unwrap(), m);
        assert!(Manifest::parse("a 1 2\n", "m").is_err());
    }
}
