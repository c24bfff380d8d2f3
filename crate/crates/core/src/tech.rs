//! Unit types, prerequisites and the text format for tech trees.
//!
//! A tech-tree file holds one directive per line. Blank lines and lines
//! starting with `#` are skipped.
//!
//! ```text
//! factions 0,1,2
//! # id name     kind     prereqs sight speed
//! 0    base     building -       40    0
//! 1    worker   unit     0       24    5
//! 3    tech-lab building 2       28    0
//! ```
//!
//! `kind` is `building` or `unit`; `prereqs` is a comma-separated list of
//! type ids or `-` for none. Types must be listed in id order starting at 0.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, Error, Result};

pub type TypeId = usize;
pub type FactionId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct UnitTypeDef {
    pub id: TypeId,
    pub name: String,
    pub is_building: bool,
    pub prerequisites: BTreeSet<TypeId>,
    pub sight_range: f64,
    pub move_speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TechTree {
    types: Vec<UnitTypeDef>,
    factions: Vec<FactionId>,
}

impl TechTree {
    pub fn new(types: Vec<UnitTypeDef>, factions: Vec<FactionId>) -> Result<Self> {
        let bad = |m: String| Err(Error::TechTree(m));
        if types.is_empty() {
            return bad("no unit types".into());
        }
        if factions.is_empty() {
            return bad("no factions".into());
        }
        for (i, t) in types.iter().enumerate() {
            if t.id != i {
                return bad(format!("type ids must be dense and ordered: found {} at position {i}", t.id));
            }
            if !(t.sight_range >= 0.0 && t.sight_range.is_finite()) {
                return bad(format!("{}: sight range must be finite and non-negative", t.name));
            }
            if !(t.move_speed >= 0.0 && t.move_speed.is_finite()) {
                return bad(format!("{}: move speed must be finite and non-negative", t.name));
            }
            if t.is_building && t.move_speed != 0.0 {
                return bad(format!("{}: buildings cannot move", t.name));
            }
            if let Some(&p) = t.prerequisites.iter().find(|&&p| p >= types.len()) {
                return bad(format!("{}: prerequisite {p} is not a known type", t.name));
            }
        }
        let tree = Self { types, factions };
        tree.check_acyclic()?;
        Ok(tree)
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit(tree: &TechTree, id: TypeId, state: &mut [u8]) -> Result<()> {
            match state[id] {
                2 => return Ok(()),
                1 => {
                    return Err(Error::TechTree(format!(
                        "prerequisite cycle through {}",
                        tree.types[id].name
                    )))
                }
                _ => {}
            }
            state[id] = 1;
            for &p in &tree.types[id].prerequisites {
                visit(tree, p, state)?;
            }
            state[id] = 2;
            Ok(())
        }
        let mut state = vec![0u8; self.types.len()];
        for id in 0..self.types.len() {
            visit(self, id, &mut state)?;
        }
        Ok(())
    }

    pub fn types(&self) -> &[UnitTypeDef] {
        &self.types
    }

    pub fn factions(&self) -> &[FactionId] {
        &self.factions
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Channels per count grid: allies then enemies.
    pub fn num_channels(&self) -> usize {
        2 * self.types.len()
    }

    pub fn get(&self, id: TypeId) -> Result<&UnitTypeDef> {
        self.types.get(id).ok_or(Error::UnknownUnitType(id))
    }

    pub fn find(&self, name: &str) -> Option<TypeId> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn building_ids(&self) -> Vec<TypeId> {
        self.types.iter().filter(|t| t.is_building).map(|t| t.id).collect()
    }

    pub fn has_faction(&self, f: FactionId) -> bool {
        self.factions.contains(&f)
    }

    /// Every type in `seen` plus all of their transitive prerequisites.
    pub fn closure(&self, seen: &BTreeSet<TypeId>) -> BTreeSet<TypeId> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<TypeId> = seen.iter().copied().collect();
        while let Some(id) = stack.pop() {
            if id < self.types.len() && out.insert(id) {
                stack.extend(self.types[id].prerequisites.iter().copied());
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut types = Vec::new();
        let mut factions = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::TechTree(format!("line {}: {m}", n + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "factions" {
                if fields.len() != 2 {
                    return Err(err("expected `factions <id,id,...>`"));
                }
                let ids = fields[1]
                    .split(',')
                    .map(|s| s.parse::<FactionId>().map_err(|_| err("bad faction id")))
                    .collect::<Result<Vec<_>>>()?;
                factions = Some(ids);
                continue;
            }
            if fields.len() != 6 {
                return Err(err("expected `id name kind prereqs sight speed`"));
            }
            let id = fields[0].parse().map_err(|_| err("bad type id"))?;
            let is_building = match fields[2] {
                "building" => true,
                "unit" => false,
                _ => return Err(err("kind must be `building` or `unit`")),
            };
            let prerequisites = if fields[3] == "-" {
                BTreeSet::new()
            } else {
                fields[3]
                    .split(',')
                    .map(|s| s.parse().map_err(|_| err("bad prerequisite id")))
                    .collect::<Result<_>>()?
            };
            types.push(UnitTypeDef {
                id,
                name: fields[1].to_string(),
                is_building,
                prerequisites,
                sight_range: fields[4].parse().map_err(|_| err("bad sight range"))?,
                move_speed: fields[5].parse().map_err(|_| err("bad move speed"))?,
            });
        }
        let factions = factions.ok_or_else(|| Error::TechTree("missing `factions` line".into()))?;
        Self::new(types, factions)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let f: Vec<String> = self.factions.iter().map(|f| f.to_string()).collect();
        writeln!(out, "factions {}", f.join(",")).unwrap();
        for t in &self.types {
            let pre = if t.prerequisites.is_empty() {
                "-".to_string()
            } else {
                t.prerequisites.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            };
            let kind = if t.is_building { "building" } else { "unit" };
            writeln!(out, "{} {} {} {} {} {}", t.id, t.name, kind, pre, t.sight_range, t.move_speed).unwrap();
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }
}

/// The six-type table used by the simulator: three buildings and three
/// mobile types, shared by three factions.
pub fn default_tech() -> TechTree {
    TechTree::parse(DEFAULT_TECH).expect("built-in tech tree is valid")
}

pub const DEFAULT_TECH: &str = "\
factions 0,1,2
0 base building - 40 0
1 worker unit 0 24 5
2 barracks building 0 28 0
3 tech-lab building 2 28 0
4 light unit 2 28 4
5 heavy unit 3 32 2.5
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tree_shape() {
        let t = default_tech();
        assert_eq!(t.num_types(), 6);
        assert_eq!(t.num_channels(), 12);
        assert_eq!(t.building_ids(), vec![0, 2, 3]);
        assert_eq!(t.find("heavy"), Some(5));
        assert_eq!(TechTree::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn closure_of_heavy_is_the_full_chain() {
        let t = default_tech();
        let got = t.closure(&[5].into_iter().collect());
        assert_eq!(got, [0, 2, 3, 5].into_iter().collect());
        assert!(t.closure(&BTreeSet::new()).is_empty());
    }

    #[test]
    fn rejects_cycles_and_bad_rows() {
        let cyc = "factions 0\n0 a building 1 1 0\n1 b building 0 1 0\n";
        assert!(TechTree::parse(cyc).unwrap_err().to_string().contains("cycle"));
        let moving = "factions 0\n0 a building - 1 3\n";
        assert!(TechTree::parse(moving).is_err());
        let sparse = "factions 0\n1 a building - 1 0\n";
        assert!(TechTree::parse(sparse).is_err());
        let dangling = "factions 0\n0 a unit 7 1 1\n";
        assert!(TechTree::parse(dangling).is_err());
        assert!(TechTree::parse("0 a unit - 1 1\n").is_err());
    }
}
