//! Places locations on a 2D tile grid so that adjacent locations sit on
//! orthogonally neighbouring tiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::LocationSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LayoutExport", try_from = "LayoutExport")]
pub struct SceneLayout {
    pub grid_size: (u32, u32),
    pub placements: BTreeMap<String, (u32, u32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tile {
    id: String,
    x: u32,
    y: u32,
}

/// Wire form: `{grid: [w, h], tiles: [{id, x, y}]}`, tiles sorted by id.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutExport {
    grid: [u32; 2],
    tiles: Vec<Tile>,
}

impl From<SceneLayout> for LayoutExport {
    fn from(l: SceneLayout) -> Self {
        Self {
            grid: [l.grid_size.0, l.grid_size.1],
            tiles: l.placements.into_iter().map(|(id, (x, y))| Tile { id, x, y }).collect(),
        }
    }
}

impl TryFrom<LayoutExport> for SceneLayout {
    type Error = String;

    fn try_from(e: LayoutExport) -> Result<Self, Self::Error> {
        let mut placements = BTreeMap::new();
        for t in e.tiles {
            if placements.insert(t.id.clone(), (t.x, t.y)).is_some() {
                return Err(format!("tile '{}' listed twice", t.id));
            }
        }
        Ok(Self { grid_size: (e.grid[0], e.grid[1]), placements })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("grid {width}x{height} has fewer than {needed} tiles")]
    GridTooSmall { width: u32, height: u32, needed: usize },
    #[error("no placement satisfies every adjacency")]
    Unsatisfiable,
}

/// Smallest square grid with at least twice as many tiles as locations.
pub fn default_grid(location_count: usize) -> (u32, u32) {
    let mut w: u32 = 1;
    while (w as usize) * (w as usize) < 2 * location_count {
        w += 1;
    }
    (w, w)
}

/// Parses `WxH`, e.g. `4x3`.
pub fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    if w == 0 || h == 0 {
        return Err(format!("grid dimensions must be positive, got '{s}'"));
    }
    Ok((w, h))
}

/// Symmetric adjacency over declared locations, by index in id order.
fn adjacency(ids: &[&str], locations: &[LocationSpec]) -> Vec<BTreeSet<usize>> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adj = vec![BTreeSet::new(); ids.len()];
    for loc in locations {
        let Some(&a) = index.get(loc.id.as_str()) else { continue };
        for other in &loc.adjacent_to {
            if let Some(&b) = index.get(other.as_str()) {
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
    }
    adj
}

/// Grid graphs are bipartite, so an odd cycle rules out any layout.
fn is_bipartite(adj: &[BTreeSet<usize>]) -> bool {
    let mut color = vec![None; adj.len()];
    for start in 0..adj.len() {
        if color[start].is_some() {
            continue;
        }
        color[start] = Some(false);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            let c = color[v].expect("colored before push");
            for &u in &adj[v] {
                match color[u] {
                    None => {
                        color[u] = Some(!c);
                        stack.push(u);
                    }
                    Some(cu) if cu == c => return false,
                    _ => {}
                }
            }
        }
    }
    true
}

struct Search<'a> {
    w: u32,
    h: u32,
    adj: &'a [BTreeSet<usize>],
    pos: Vec<Option<(u32, u32)>>,
    used: BTreeSet<(u32, u32)>,
}

impl Search<'_> {
    fn free_neighbours(&self, (x, y): (u32, u32)) -> usize {
        let mut n = 0;
        if x > 0 && !self.used.contains(&(x - 1, y)) {
            n += 1;
        }
        if x + 1 < self.w && !self.used.contains(&(x + 1, y)) {
            n += 1;
        }
        if y > 0 && !self.used.contains(&(x, y - 1)) {
            n += 1;
        }
        if y + 1 < self.h && !self.used.contains(&(x, y + 1)) {
            n += 1;
        }
        n
    }

    /// Every placed location still has room around it for its unplaced neighbours.
    fn room_left(&self) -> bool {
        self.pos.iter().enumerate().all(|(i, p)| match p {
            Some(tile) => {
                let pending = self.adj[i].iter().filter(|&&j| self.pos[j].is_none()).count();
                pending <= self.free_neighbours(*tile)
            }
            None => true,
        })
    }

    fn place(&mut self, i: usize) -> bool {
        if i == self.pos.len() {
            return true;
        }
        for y in 0..self.h {
            for x in 0..self.w {
                let tile = (x, y);
                if self.used.contains(&tile) {
                    continue;
                }
                let fits = self.adj[i]
                    .iter()
                    .filter_map(|&j| self.pos[j])
                    .all(|(px, py)| px.abs_diff(x) + py.abs_diff(y) == 1);
                if !fits {
                    continue;
                }
                self.pos[i] = Some(tile);
                self.used.insert(tile);
                if self.room_left() && self.place(i + 1) {
                    return true;
                }
                self.used.remove(&tile);
                self.pos[i] = None;
            }
        }
        false
    }
}

/// Depth-first backtracking: locations in id order, tiles in row-major order.
pub fn layout_scene(locations: &[LocationSpec], grid: (u32, u32)) -> Result<SceneLayout, LayoutError> {
    let (w, h) = grid;
    let tiles = w as usize * h as usize;
    let mut ids: Vec<&str> = locations.iter().map(|l| l.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if tiles < ids.len() {
        return Err(LayoutError::GridTooSmall { width: w, height: h, needed: ids.len() });
    }
    let adj = adjacency(&ids, locations);
    if adj.iter().any(|a| a.len() > 4) || !is_bipartite(&adj) {
        return Err(LayoutError::Unsatisfiable);
    }
    let mut search = Search { w, h, adj: &adj, pos: vec![None; ids.len()], used: BTreeSet::new() };
    if !search.place(0) {
        return Err(LayoutError::Unsatisfiable);
    }
    let placements = ids
        .iter()
        .zip(&search.pos)
        .map(|(id, p)| (id.to_string(), p.expect("all placed")))
        .collect();
    Ok(SceneLayout { grid_size: grid, placements })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayoutViolationCode {
    Overlap,
    MissingPlacement,
    UnknownPlacement,
    OutOfBounds,
    AdjacencyUnmet,
}

impl LayoutViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Overlap => "OVERLAP",
            Self::MissingPlacement => "MISSING_PLACEMENT",
            Self::UnknownPlacement => "UNKNOWN_PLACEMENT",
            Self::OutOfBounds => "OUT_OF_BOUNDS",
            Self::AdjacencyUnmet => "ADJACENCY_UNMET",
        }
    }
}

impl fmt::Display for LayoutViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutViolation {
    pub code: LayoutViolationCode,
    pub subject: String,
}

/// Checks a layout against the locations it claims to place. Independent of the solver.
pub fn verify_layout(layout: &SceneLayout, locations: &[LocationSpec]) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    let mut v = |code, subject: String| out.push(LayoutViolation { code, subject });
    let (w, h) = layout.grid_size;
    let declared: BTreeSet<&str> = locations.iter().map(|l| l.id.as_str()).collect();

    let mut by_tile: BTreeMap<(u32, u32), Vec<&str>> = BTreeMap::new();
    for (id, &(x, y)) in &layout.placements {
        if !declared.contains(id.as_str()) {
            v(LayoutViolationCode::UnknownPlacement, id.clone());
        }
        if x >= w || y >= h {
            v(LayoutViolationCode::OutOfBounds, id.clone());
        }
        by_tile.entry((x, y)).or_default().push(id);
    }
    for ((x, y), ids) in &by_tile {
        if ids.len() > 1 {
            v(LayoutViolationCode::Overlap, format!("({x},{y}): {}", ids.join(",")));
        }
    }
    for id in &declared {
        if !layout.placements.contains_key(*id) {
            v(LayoutViolationCode::MissingPlacement, id.to_string());
        }
    }
    let mut pairs = BTreeSet::new();
    for loc in locations {
        for other in &loc.adjacent_to {
            if other != &loc.id && declared.contains(other.as_str()) {
                let pair = if loc.id < *other { (loc.id.as_str(), other.as_str()) } else { (other.as_str(), loc.id.as_str()) };
                pairs.insert(pair);
            }
        }
    }
    for (a, b) in pairs {
        if let (Some(&(ax, ay)), Some(&(bx, by))) = (layout.placements.get(a), layout.placements.get(b)) {
            if ax.abs_diff(bx) + ay.abs_diff(by) != 1 {
                v(LayoutViolationCode::AdjacencyUnmet, format!("{a}-{b}"));
            }
        }
    }
    out
}
