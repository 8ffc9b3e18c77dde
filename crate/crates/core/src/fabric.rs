//! Trapped-ion fabric: a grid of typed wells joined by half-duplex channels.
//!
//! A ULB of size `n` is an `n x n` tiling of a primitive template read from a
//! layout table. Channels are implied between orthogonally adjacent wells,
//! also across template seams. Four boundary wells (the ones closest to the
//! midpoint of each ULB edge) act as I/O ports.

use std::collections::VecDeque;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FabricConfig, Micros};

/// The built-in template, one row per line.
pub const BUILTIN_TEMPLATE: &str = include_str!("../layouts/template_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WellId(pub u32);

impl WellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WellKind {
    Basic,
    Creation,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Well {
    pub id: WellId,
    pub row: usize,
    pub col: usize,
    pub kind: WellKind,
    pub is_port: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("layout line {line}: unknown cell code `{code}`")]
    BadCell { line: usize, code: char },
    #[error("layout rows have unequal length")]
    Ragged,
    #[error("layout is {found_rows}x{found_cols} but the config expects {rows}x{cols}")]
    SizeMismatch {
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("layout has no {0:?} well")]
    Missing(WellKind),
    #[error("fabric is disconnected: well at ({row},{col}) is unreachable")]
    Disconnected { row: usize, col: usize },
    #[error("unknown well {0}")]
    UnknownWell(WellId),
}

/// One cell of the template table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Well(WellKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLayout {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Cell>,
}

impl TemplateLayout {
    /// Parse a grid of cell codes. Lines starting with `#` and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, FabricError> {
        let mut cells = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let width = line.chars().count();
            if *cols.get_or_insert(width) != width {
                return Err(FabricError::Ragged);
            }
            for code in line.chars() {
                cells.push(match code {
                    '.' => Cell::Empty,
                    'B' => Cell::Well(WellKind::Basic),
                    'C' => Cell::Well(WellKind::Creation),
                    'I' => Cell::Well(WellKind::Interaction),
                    _ => return Err(FabricError::BadCell { line: lineno + 1, code }),
                });
            }
            rows += 1;
        }
        Ok(Self { rows, cols: cols.unwrap_or(0), cells })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATE).expect("built-in layout parses")
    }

    fn at(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.cols + c]
    }
}

/// Immutable fabric graph with a lazily filled, per-source distance table.
pub struct FabricGraph {
    config: FabricConfig,
    rows: usize,
    cols: usize,
    wells: Vec<Well>,
    grid: Vec<Option<WellId>>,
    adjacency: Vec<Vec<WellId>>,
    interaction: Vec<WellId>,
    creation: Vec<WellId>,
    ports: Vec<WellId>,
    distances: Vec<OnceLock<Box<[u32]>>>,
}

impl fmt::Debug for FabricGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FabricGraph")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("wells", &self.wells.len())
            .field("interaction", &self.interaction.len())
            .field("creation", &self.creation.len())
            .field("ports", &self.ports)
            .finish()
    }
}

const UNREACHABLE: u32 = u32::MAX;

impl FabricGraph {
    /// Tile the built-in template.
    pub fn build(config: &FabricConfig) -> Result<Self, FabricError> {
        Self::from_layout(config, &TemplateLayout::builtin())
    }

    pub fn from_layout(config: &FabricConfig, layout: &TemplateLayout) -> Result<Self, FabricError> {
        config.validate()?;
        if layout.rows != config.template_rows || layout.cols != config.template_cols {
            return Err(FabricError::SizeMismatch {
                rows: config.template_rows,
                cols: config.template_cols,
                found_rows: layout.rows,
                found_cols: layout.cols,
            });
        }
        let n = config.ulb_n;
        let rows = layout.rows * n;
        let cols = layout.cols * n;
        let mut wells = Vec::new();
        let mut grid = vec![None; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if let Cell::Well(kind) = layout.at(r % layout.rows, c % layout.cols) {
                    let id = WellId(wells.len() as u32);
                    grid[r * cols + c] = Some(id);
                    wells.push(Well { id, row: r, col: c, kind, is_port: false });
                }
            }
        }
        for kind in [WellKind::Interaction, WellKind::Creation] {
            if !wells.iter().any(|w| w.kind == kind) {
                return Err(FabricError::Missing(kind));
            }
        }

        // Neighbour order (up, left, right, down) fixes BFS tie-breaking.
        let mut adjacency = vec![Vec::new(); wells.len()];
        for w in &wells {
            let (r, c) = (w.row as isize, w.col as isize);
            for (dr, dc) in [(-1, 0), (0, -1), (0, 1), (1, 0)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                    continue;
                }
                if let Some(nb) = grid[nr as usize * cols + nc as usize] {
                    adjacency[w.id.index()].push(nb);
                }
            }
        }

        let interaction = wells.iter().filter(|w| w.kind == WellKind::Interaction).map(|w| w.id).collect();
        let creation = wells.iter().filter(|w| w.kind == WellKind::Creation).map(|w| w.id).collect();
        let distances = (0..wells.len()).map(|_| OnceLock::new()).collect();
        let mut fabric = Self {
            config: config.clone(),
            rows,
            cols,
            wells,
            grid,
            adjacency,
            interaction,
            creation,
            ports: Vec::new(),
            distances,
        };

        let from_first = fabric.bfs(WellId(0));
        if let Some(pos) = from_first.iter().position(|&d| d == UNREACHABLE) {
            let w = &fabric.wells[pos];
            return Err(FabricError::Disconnected { row: w.row, col: w.col });
        }
        let _ = fabric.distances[0].set(from_first);

        fabric.ports = fabric.designate_ports();
        for p in fabric.ports.clone() {
            fabric.wells[p.index()].is_port = true;
        }
        Ok(fabric)
    }

    /// Boundary well closest to the midpoint of each edge: top, right, bottom, left.
    fn designate_ports(&self) -> Vec<WellId> {
        let mid_r = (self.rows - 1) as f64 / 2.0;
        let mid_c = (self.cols - 1) as f64 / 2.0;
        let last_r = self.rows - 1;
        let last_c = self.cols - 1;
        let edges: [(Box<dyn Fn(&Well) -> bool>, Box<dyn Fn(&Well) -> f64>); 4] = [
            (Box::new(|w: &Well| w.row == 0), Box::new(move |w: &Well| (w.col as f64 - mid_c).abs())),
            (Box::new(move |w: &Well| w.col == last_c), Box::new(move |w: &Well| (w.row as f64 - mid_r).abs())),
            (Box::new(move |w: &Well| w.row == last_r), Box::new(move |w: &Well| (w.col as f64 - mid_c).abs())),
            (Box::new(|w: &Well| w.col == 0), Box::new(move |w: &Well| (w.row as f64 - mid_r).abs())),
        ];
        let mut ports = Vec::new();
        for (on_edge, offset) in edges.iter() {
            let best = self
                .wells
                .iter()
                .filter(|w| on_edge(w))
                .min_by(|a, b| offset(a).total_cmp(&offset(b)).then(a.id.cmp(&b.id)));
            if let Some(w) = best {
                if !ports.contains(&w.id) {
                    ports.push(w.id);
                }
            }
        }
        ports
    }

    fn bfs(&self, src: WellId) -> Box<[u32]> {
        let mut dist = vec![UNREACHABLE; self.wells.len()];
        let mut queue = VecDeque::new();
        dist[src.index()] = 0;
        queue.push_back(src);
        while let Some(w) = queue.pop_front() {
            let d = dist[w.index()];
            for &nb in &self.adjacency[w.index()] {
                if dist[nb.index()] == UNREACHABLE {
                    dist[nb.index()] = d + 1;
                    queue.push_back(nb);
                }
            }
        }
        dist.into_boxed_slice()
    }

    fn row_from(&self, src: WellId) -> &[u32] {
        self.distances[src.index()].get_or_init(|| self.bfs(src))
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn wells(&self) -> &[Well] {
        &self.wells
    }
    pub fn well(&self, id: WellId) -> &Well {
        &self.wells[id.index()]
    }
    pub fn num_wells(&self) -> usize {
        self.wells.len()
    }
    pub fn interaction_wells(&self) -> &[WellId] {
        &self.interaction
    }
    pub fn creation_wells(&self) -> &[WellId] {
        &self.creation
    }
    pub fn ports(&self) -> &[WellId] {
        &self.ports
    }
    pub fn neighbors(&self, id: WellId) -> &[WellId] {
        &self.adjacency[id.index()]
    }

    pub fn well_at(&self, row: usize, col: usize) -> Option<WellId> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.grid[row * self.cols + col]
    }

    pub fn contains(&self, id: WellId) -> bool {
        id.index() < self.wells.len()
    }

    pub fn are_adjacent(&self, a: WellId, b: WellId) -> bool {
        self.contains(a) && self.adjacency[a.index()].contains(&b)
    }

    /// Hop count of the shortest channel path.
    pub fn physical_distance(&self, a: WellId, b: WellId) -> Result<u32, FabricError> {
        for w in [a, b] {
            if !self.contains(w) {
                return Err(FabricError::UnknownWell(w));
            }
        }
        Ok(self.distance(a, b))
    }

    /// Unchecked variant of [`physical_distance`](Self::physical_distance) for valid ids.
    pub fn distance(&self, a: WellId, b: WellId) -> u32 {
        if a == b {
            return 0;
        }
        // Reuse whichever endpoint already has a cached row.
        if self.distances[b.index()].get().is_some() && self.distances[a.index()].get().is_none() {
            return self.row_from(b)[a.index()];
        }
        self.row_from(a)[b.index()]
    }

    pub fn static_latency(&self, a: WellId, b: WellId) -> Result<Micros, FabricError> {
        Ok(self.physical_distance(a, b)? as Micros * self.config.move_delay)
    }

    pub fn latency(&self, a: WellId, b: WellId) -> Micros {
        self.distance(a, b) as Micros * self.config.move_delay
    }

    pub fn manhattan(&self, a: WellId, b: WellId) -> u32 {
        let (wa, wb) = (self.well(a), self.well(b));
        (wa.row.abs_diff(wb.row) + wa.col.abs_diff(wb.col)) as u32
    }

    /// Shortest path `a ..= b` (both endpoints included), deterministic.
    pub fn shortest_path(&self, a: WellId, b: WellId) -> Vec<WellId> {
        let to_b = self.row_from(b);
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            let d = to_b[cur.index()];
            cur = *self.adjacency[cur.index()]
                .iter()
                .find(|nb| to_b[nb.index()] + 1 == d)
                .expect("connected fabric has a descending neighbour");
            path.push(cur);
        }
        path
    }

    /// Port with the smallest physical distance to `w` (ties to the lower id).
    pub fn nearest_port(&self, w: WellId) -> WellId {
        *self
            .ports
            .iter()
            .min_by_key(|&&p| (self.distance(p, w), p))
            .expect("every fabric has at least one port")
    }

    /// Index `(tile_row, tile_col)` of the template that holds `w`.
    pub fn tile_of(&self, w: WellId) -> (usize, usize) {
        let well = self.well(w);
        (well.row / self.config.template_rows, well.col / self.config.template_cols)
    }

    /// Grid-text rendering; `mark` may override the symbol of any well.
    pub fn render(&self, mark: impl Fn(WellId) -> Option<char>) -> String {
        let mut out = String::with_capacity((self.cols + 1) * self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(match self.grid[r * self.cols + c] {
                    None => '.',
                    Some(id) => mark(id).unwrap_or(match self.well(id) {
                        w if w.is_port => 'P',
                        w => match w.kind {
                            WellKind::Basic => 'B',
                            WellKind::Creation => 'C',
                            WellKind::Interaction => 'I',
                        },
                    }),
                });
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fabric(n: usize) -> FabricGraph {
        FabricGraph::build(&FabricConfig::default().with_ulb_n(n)).unwrap()
    }

    #[test]
    fn single_template_geometry() {
        let f = fabric(1);
        assert_eq!((f.rows(), f.cols()), (11, 11));
        let pos = |ids: &[WellId]| ids.iter().map(|&w| (f.well(w).row, f.well(w).col)).collect::<Vec<_>>();
        assert_eq!(pos(f.interaction_wells()), vec![(2, 2), (7, 7)]);
        assert_eq!(pos(f.creation_wells()), vec![(2, 3), (7, 6)]);
        assert_eq!(f.ports().len(), 4);
        assert!(f.ports().iter().all(|&p| f.well(p).is_port));
    }

    #[test]
    fn tiling_multiplies_well_count() {
        let one = fabric(1);
        let two = fabric(2);
        assert_eq!(two.num_wells(), 4 * one.num_wells());
        assert_eq!(two.interaction_wells().len(), 4 * one.interaction_wells().len());
        // row-2 corridor continues across the vertical seam
        let a = two.well_at(2, 10).unwrap();
        let b = two.well_at(2, 11).unwrap();
        assert!(two.are_adjacent(a, b));
        let a = two.well_at(10, 2).unwrap();
        let b = two.well_at(11, 2).unwrap();
        assert!(two.are_adjacent(a, b));
    }

    #[test]
    fn disconnected_layout_rejected() {
        let text = "\
B..
...
..I
";
        let layout = TemplateLayout::parse(text).unwrap();
        let cfg = FabricConfig { template_rows: 3, template_cols: 3, ..Default::default() };
        // no creation well
        assert_eq!(FabricGraph::from_layout(&cfg, &layout).unwrap_err(), FabricError::Missing(WellKind::Creation));
        let layout = TemplateLayout::parse("BC.\n...\n..I\n").unwrap();
        assert!(matches!(
            FabricGraph::from_layout(&cfg, &layout),
            Err(FabricError::Disconnected { .. })
        ));
    }

    #[test]
    fn layout_errors() {
        assert!(matches!(TemplateLayout::parse("BX\n"), Err(FabricError::BadCell { line: 1, code: 'X' })));
        assert_eq!(TemplateLayout::parse("BB\nB\n"), Err(FabricError::Ragged));
        let small = TemplateLayout::parse("CI\n").unwrap();
        assert!(matches!(
            FabricGraph::from_layout(&FabricConfig::default(), &small),
            Err(FabricError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let f = fabric(1);
        let i = f.interaction_wells();
        assert_eq!(f.physical_distance(i[0], i[0]).unwrap(), 0);
        let a = f.well_at(2, 4).unwrap();
        let b = f.well_at(2, 5).unwrap();
        assert_eq!(f.physical_distance(a, b).unwrap(), 1);
        assert_eq!(f.static_latency(a, b).unwrap(), 10);
        assert_eq!(f.static_latency(a, a).unwrap(), 0);
        assert_eq!(f.physical_distance(WellId(9999), a), Err(FabricError::UnknownWell(WellId(9999))));
    }

    #[test]
    fn closest_interaction_pair_is_ten_hops() {
        for n in 1..=3 {
            let f = fabric(n);
            let ids = f.interaction_wells();
            let mut best = u32::MAX;
            for (k, &a) in ids.iter().enumerate() {
                for &b in &ids[k + 1..] {
                    best = best.min(f.distance(a, b));
                    assert!(f.manhattan(a, b) >= 10);
                }
            }
            assert_eq!(best, 10, "n = {n}");
            let (a, b) = (f.well_at(2, 2).unwrap(), f.well_at(7, 7).unwrap());
            assert_eq!(f.static_latency(a, b).unwrap(), 100);
        }
    }

    #[test]
    fn shortest_path_matches_distance() {
        let f = fabric(2);
        for &a in f.interaction_wells() {
            for &b in f.creation_wells() {
                let p = f.shortest_path(a, b);
                assert_eq!(p.len() as u32 - 1, f.distance(a, b));
                assert!(p.windows(2).all(|w| f.are_adjacent(w[0], w[1])));
                assert_eq!((p[0], *p.last().unwrap()), (a, b));
            }
        }
    }

    #[test]
    fn ports_sit_on_edge_midpoints() {
        let f = fabric(2);
        let pos: Vec<_> = f.ports().iter().map(|&p| (f.well(p).row, f.well(p).col)).collect();
        assert_eq!(pos, vec![(0, 13), (13, 21), (21, 13), (13, 0)]);
    }

    /// Plain BFS straight off the grid, no shared code with the graph.
    fn grid_bfs(f: &FabricGraph, src: (usize, usize)) -> Vec<Vec<Option<u32>>> {
        let mut d = vec![vec![None; f.cols()]; f.rows()];
        let mut q = VecDeque::from([src]);
        d[src.0][src.1] = Some(0);
        while let Some((r, c)) = q.pop_front() {
            let cur = d[r][c].unwrap();
            let cand = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
            for (nr, nc) in cand {
                if nr < f.rows() && nc < f.cols() && f.well_at(nr, nc).is_some() && d[nr][nc].is_none() {
                    d[nr][nc] = Some(cur + 1);
                    q.push_back((nr, nc));
                }
            }
        }
        d
    }

    #[test]
    fn distance_table_matches_independent_bfs() {
        for n in 1..=2 {
            let f = fabric(n);
            for src in f.wells() {
                let table = grid_bfs(&f, (src.row, src.col));
                for dst in f.wells() {
                    assert_eq!(Some(f.distance(src.id, dst.id)), table[dst.row][dst.col]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn metric_properties(a in 0u32..160, b in 0u32..160, c in 0u32..160) {
            let f = fabric(2);
            let (a, b, c) = (WellId(a), WellId(b), WellId(c));
            let ab = f.distance(a, b);
            prop_assert_eq!(ab, f.distance(b, a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(ab >= f.manhattan(a, b));
            prop_assert!(f.distance(a, c) <= ab + f.distance(b, c));
        }
    }
}
