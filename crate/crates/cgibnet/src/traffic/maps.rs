//! Map/route tables: versioned plain-text format, shipped in `data/maps/`.
//!
//! ```text
//! format traffic-map/2
//! name easy
//! grid <rows> <cols>
//! agents <N>
//! max_steps <T>
//! spawns <eid> <k>                              # spawn offsets 0..k-1
//! route <id> entrance <eid> cells r,c r,c ...   # last cell off-grid
//! ```
//!
//! A car assigned to entrance `eid` starts at a uniformly random offset in
//! the first `k` cells of its route (the routes of one entrance share that
//! prefix), so start positions sit "near the entrance" without being
//! predictable.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{CgibError, Result};

pub const EASY_MAP: &str = include_str!("../../data/maps/easy.map");
pub const MEDIUM_MAP: &str = include_str!("../../data/maps/medium.map");
pub const HARD_MAP: &str = include_str!("../../data/maps/hard.map");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapName {
    Easy,
    Medium,
    Hard,
}

impl MapName {
    pub const ALL: [MapName; 3] = [MapName::Easy, MapName::Medium, MapName::Hard];

    fn raw(self) -> &'static str {
        match self {
            MapName::Easy => EASY_MAP,
            MapName::Medium => MEDIUM_MAP,
            MapName::Hard => HARD_MAP,
        }
    }
}

impl fmt::Display for MapName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapName::Easy => "easy",
            MapName::Medium => "medium",
            MapName::Hard => "hard",
        };
        write!(f, "{s}")
    }
}

impl FromStr for MapName {
    type Err = CgibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(MapName::Easy),
            "medium" => Ok(MapName::Medium),
            "hard" => Ok(MapName::Hard),
            other => Err(CgibError::MapData(format!("unknown map '{other}'"))),
        }
    }
}

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub id: usize,
    pub entrance: usize,
    /// Ordered path; first cell on-grid (the entrance), last cell off-grid.
    pub cells: Vec<Cell>,
}

impl Route {
    /// Number of on-grid cells (everything except the off-grid exit marker).
    pub fn on_grid_len(&self) -> usize {
        self.cells.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entrance {
    pub cell: Cell,
    pub routes: Vec<usize>,
    /// Cars spawn at route offsets 0..spawn_offsets.
    pub spawn_offsets: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapSpec {
    pub name: MapName,
    pub rows: usize,
    pub cols: usize,
    pub num_agents: usize,
    pub max_steps: usize,
    pub routes: Vec<Route>,
    pub entrances: Vec<Entrance>,
}

impl MapSpec {
    pub fn builtin(name: MapName) -> MapSpec {
        // shipped data files are validated by tests; a parse failure here is
        // a build defect
        Self::parse(name.raw()).expect("embedded map data must parse")
    }

    pub fn load(path: &Path) -> Result<MapSpec> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn on_grid(&self, cell: Cell) -> bool {
        cell.0 >= 0 && cell.1 >= 0 && (cell.0 as usize) < self.rows && (cell.1 as usize) < self.cols
    }

    pub fn grid_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    /// Observation layout: one-hot location ++ one-hot route ++ normalized age.
    pub fn obs_dim(&self) -> usize {
        self.grid_cells() + self.num_routes() + 1
    }

    pub fn global_state_dim(&self) -> usize {
        self.num_agents * self.obs_dim() + 1
    }

    pub fn parse(text: &str) -> Result<MapSpec> {
        let bad = |msg: String| CgibError::MapData(msg);
        let mut name = None;
        let mut grid = None;
        let mut agents = None;
        let mut max_steps = None;
        let mut routes: Vec<Route> = Vec::new();
        let mut spawns: Vec<(usize, usize)> = Vec::new();

        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some("format traffic-map/2") => {}
            other => return Err(bad(format!("unsupported map format line: {other:?}"))),
        }
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("name") => {
                    name = Some(tok.next().ok_or_else(|| bad("name missing".into()))?.parse::<MapName>()?)
                }
                Some("grid") => {
                    let r = tok.next().and_then(|v| v.parse().ok());
                    let c = tok.next().and_then(|v| v.parse().ok());
                    grid = Some((
                        r.ok_or_else(|| bad("bad grid rows".into()))?,
                        c.ok_or_else(|| bad("bad grid cols".into()))?,
                    ));
                }
                Some("agents") => {
                    agents = Some(
                        tok.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad agents".into()))?,
                    )
                }
                Some("max_steps") => {
                    max_steps = Some(
                        tok.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad("bad max_steps".into()))?,
                    )
                }
                Some("spawns") => {
                    let eid: usize = tok
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad spawns entrance".into()))?;
                    let k: usize = tok
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad spawns count".into()))?;
                    spawns.push((eid, k));
                }
                Some("route") => {
                    let id: usize = tok
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("bad route id".into()))?;
                    if tok.next() != Some("entrance") {
                        return Err(bad(format!("route {id}: expected 'entrance'")));
                    }
                    let entrance: usize = tok
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("route {id}: bad entrance")))?;
                    if tok.next() != Some("cells") {
                        return Err(bad(format!("route {id}: expected 'cells'")));
                    }
                    let mut cells = Vec::new();
                    for pair in tok {
                        let (r, c) = pair
                            .split_once(',')
                            .ok_or_else(|| bad(format!("route {id}: bad cell '{pair}'")))?;
                        cells.push((
                            r.parse::<i32>().map_err(|_| bad(format!("route {id}: bad row")))?,
                            c.parse::<i32>().map_err(|_| bad(format!("route {id}: bad col")))?,
                        ));
                    }
                    routes.push(Route { id, entrance, cells });
                }
                Some(other) => return Err(bad(format!("unknown directive '{other}'"))),
                None => {}
            }
        }

        let name = name.ok_or_else(|| bad("missing name".into()))?;
        let (rows, cols) = grid.ok_or_else(|| bad("missing grid".into()))?;
        let num_agents = agents.ok_or_else(|| bad("missing agents".into()))?;
        let max_steps = max_steps.ok_or_else(|| bad("missing max_steps".into()))?;

        let mut spec = MapSpec {
            name,
            rows,
            cols,
            num_agents,
            max_steps,
            routes,
            entrances: Vec::new(),
        };
        spec.build_entrances()?;
        for (eid, k) in spawns {
            if eid >= spec.entrances.len() || k == 0 {
                return Err(CgibError::MapData(format!("bad spawns directive for entrance {eid}")));
            }
            spec.entrances[eid].spawn_offsets = k;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn build_entrances(&mut self) -> Result<()> {
        let max_ent = self
            .routes
            .iter()
            .map(|r| r.entrance)
            .max()
            .ok_or_else(|| CgibError::MapData("map has no routes".into()))?;
        let mut entrances: Vec<Entrance> = (0..=max_ent)
            .map(|_| Entrance {
                cell: (0, 0),
                routes: Vec::new(),
                spawn_offsets: 1,
            })
            .collect();
        for route in &self.routes {
            let e = &mut entrances[route.entrance];
            if e.routes.is_empty() {
                e.cell = route.cells[0];
            } else if e.cell != route.cells[0] {
                return Err(CgibError::MapData(format!(
                    "entrance {} routes start at different cells",
                    route.entrance
                )));
            }
            e.routes.push(route.id);
        }
        self.entrances = entrances;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let expected = match self.name {
            MapName::Easy => (4, 20),
            MapName::Medium => (8, 40),
            MapName::Hard => (16, 60),
        };
        if (self.num_agents, self.max_steps) != expected {
            return Err(CgibError::MapData(format!(
                "{}: agents/max_steps {:?} do not match required {:?}",
                self.name,
                (self.num_agents, self.max_steps),
                expected
            )));
        }
        for (i, route) in self.routes.iter().enumerate() {
            if route.id != i {
                return Err(CgibError::MapData(format!("route ids must be dense, got {}", route.id)));
            }
            if route.cells.len() < 2 {
                return Err(CgibError::MapData(format!("route {i} too short")));
            }
            if !self.on_grid(route.cells[0]) {
                return Err(CgibError::MapData(format!("route {i}: entrance off-grid")));
            }
            let last = *route.cells.last().unwrap();
            if self.on_grid(last) {
                return Err(CgibError::MapData(format!("route {i}: exit cell must be off-grid")));
            }
            for w in route.cells.windows(2) {
                let d = (w[0].0 - w[1].0).abs() + (w[0].1 - w[1].1).abs();
                if d != 1 {
                    return Err(CgibError::MapData(format!(
                        "route {i}: cells {:?} -> {:?} not adjacent",
                        w[0], w[1]
                    )));
                }
            }
            for cell in &route.cells[..route.cells.len() - 1] {
                if !self.on_grid(*cell) {
                    return Err(CgibError::MapData(format!(
                        "route {i}: interior cell {cell:?} off-grid"
                    )));
                }
            }
        }
        for (eid, e) in self.entrances.iter().enumerate() {
            if e.routes.len() != 2 {
                return Err(CgibError::MapData(format!(
                    "entrance {eid} offers {} routes, expected exactly 2",
                    e.routes.len()
                )));
            }
            for off in 0..e.spawn_offsets {
                let cells: Vec<Cell> = e
                    .routes
                    .iter()
                    .map(|&r| self.routes[r].cells[off])
                    .collect();
                if cells.iter().any(|c| *c != cells[0]) || !self.on_grid(cells[0]) {
                    return Err(CgibError::MapData(format!(
                        "entrance {eid}: spawn offset {off} not a shared on-grid prefix"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_maps_parse_and_validate() {
        for name in MapName::ALL {
            let spec = MapSpec::builtin(name);
            assert_eq!(spec.name, name);
            let (n, t) = match name {
                MapName::Easy => (4, 20),
                MapName::Medium => (8, 40),
                MapName::Hard => (16, 60),
            };
            assert_eq!(spec.num_agents, n);
            assert_eq!(spec.max_steps, t);
            for e in &spec.entrances {
                assert_eq!(e.routes.len(), 2);
            }
        }
    }

    #[test]
    fn easy_obs_dim_matches_encoding() {
        let spec = MapSpec::builtin(MapName::Easy);
        assert_eq!(spec.obs_dim(), 7 * 7 + 4 + 1);
    }

    #[test]
    fn corrupted_route_is_rejected() {
        let text = EASY_MAP.replace("3,0 3,1 3,2", "3,0 3,2");
        assert!(MapSpec::parse(&text).is_err());
    }

    #[test]
    fn load_from_disk_matches_builtin() {
        let dir = std::env::temp_dir().join(format!("map_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("easy.map");
        std::fs::write(&p, EASY_MAP).unwrap();
        let loaded = MapSpec::load(&p).unwrap();
        assert_eq!(loaded, MapSpec::builtin(MapName::Easy));
        std::fs::remove_dir_all(&dir).ok();
    }
}
