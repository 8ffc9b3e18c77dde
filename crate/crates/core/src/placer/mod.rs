//! Timing-driven placement of instructions onto interaction wells.
//!
//! Levels are finalized in order. For each level the free instructions are
//! placed by weighted quadratic wirelength with per-level rough legalization,
//! the current level is snapped to wells, and predicted start times are
//! checked against the level's threshold. Late instructions are pushed to the
//! next level and the scheduler is re-run before moving on.

mod finalize;
mod legalize;
mod quadratic;
mod weights;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Micros, PlacerConfig};
use crate::fabric::{FabricGraph, WellId};
use crate::qasm::QubitKind;
use crate::qidg::{Qidg, QubitId};
use crate::scheduler::{fds_schedule, LevelConstraints, SchedError, Schedule};

pub use finalize::{finalize_level, well_point};
pub use legalize::{rough_legalize, BinGrid, Overcapacity, Rect, UniformBins};
pub use quadratic::{Net, NetList, Pin, Point, QuadraticSystem, SolveError};
pub use weights::NetWeight;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacerError {
    #[error("no free creation well for ancilla {qubit} (all {wells} in use)")]
    NoCreationWell { qubit: String, wells: usize },
    #[error("deferral grew the schedule to {levels} levels, beyond the cap of {cap}")]
    HorizonExceeded { levels: usize, cap: usize },
    #[error("level {level}: {source}")]
    Overcapacity { level: usize, source: Overcapacity },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Schedule(#[from] SchedError),
    #[error("schedule does not match the graph")]
    ScheduleMismatch,
}

/// Whether late instructions may move to a later level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelMode {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub schedule: Schedule,
    pub well: Vec<WellId>,
    /// Continuous coordinates each instruction had when it was snapped.
    pub coords: Vec<Point>,
    pub predicted_start: Vec<Micros>,
    /// Start-time threshold of the level the instruction was finalized in.
    pub threshold: Vec<f64>,
    /// Creation well (ancilla) or entry port (I/O) of each qubit.
    pub origin: Vec<WellId>,
    /// Exit port of each I/O qubit.
    pub exit: Vec<Option<WellId>>,
    pub deferrals: usize,
    pub reschedules: usize,
}

impl Placement {
    /// Predicted end-to-end latency from static routes.
    pub fn predicted_latency(&self, g: &Qidg, f: &FabricGraph) -> Micros {
        let mut end = 0;
        for i in 0..g.len() {
            end = end.max(self.predicted_start[i] + g.node(i).duration);
        }
        for q in 0..g.qubits().len() {
            if let (Some(exit), Some(last)) = (self.exit[q], last_use(g, &self.schedule, QubitId(q as u32))) {
                end = end.max(self.predicted_start[last] + g.node(last).duration + f.latency(self.well[last], exit));
            }
        }
        end
    }

    /// Tab-separated table: instruction, level, well, position, x, y, T^min.
    pub fn dump(&self, g: &Qidg, f: &FabricGraph) -> String {
        let mut out = String::from("instruction\tlevel\twell\trow\tcol\tx\ty\tt_min\n");
        for i in 0..g.len() {
            let w = f.well(self.well[i]);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{}",
                g.node(i).index,
                self.schedule.level[i],
                self.well[i],
                w.row,
                w.col,
                self.coords[i].x,
                self.coords[i].y,
                self.predicted_start[i]
            );
        }
        out
    }

    /// Grid picture of one level: `#` marks wells used on that level.
    pub fn render_level(&self, f: &FabricGraph, level: usize) -> String {
        let used: Vec<WellId> = (0..self.well.len()).filter(|&i| self.schedule.level[i] == level).map(|i| self.well[i]).collect();
        f.render(|w| used.contains(&w).then_some('#'))
    }
}

/// Accesses of `q` ordered by level (shared-qubit accesses never share one).
pub fn qubit_route(g: &Qidg, s: &Schedule, q: QubitId) -> Vec<usize> {
    let mut acc: Vec<usize> = g.accesses(q).collect();
    acc.sort_by_key(|&i| (s.level[i], i));
    acc.dedup();
    acc
}

fn first_use(g: &Qidg, s: &Schedule, q: QubitId) -> Option<usize> {
    qubit_route(g, s, q).first().copied()
}

fn last_use(g: &Qidg, s: &Schedule, q: QubitId) -> Option<usize> {
    qubit_route(g, s, q).last().copied()
}

/// Place every instruction of `g` (already preprocessed) starting from `schedule`.
pub fn place(
    g: &Qidg,
    schedule: &Schedule,
    fabric: &FabricGraph,
    cfg: &PlacerConfig,
    mode: LevelMode,
) -> Result<Placement, PlacerError> {
    if schedule.level.len() != g.len() {
        return Err(PlacerError::ScheduleMismatch);
    }
    Placer::new(g, schedule, fabric, cfg, mode).run()
}

/// Variable-level placement (deferral enabled).
pub fn place_with_deferral(
    g: &Qidg,
    schedule: &Schedule,
    fabric: &FabricGraph,
    cfg: &PlacerConfig,
) -> Result<Placement, PlacerError> {
    place(g, schedule, fabric, cfg, LevelMode::Variable)
}

/// Predicted earliest start of `i` at well `w`: parents' finish plus route,
/// each operand's previous visit plus route, first-use origin routes, and the
/// previous instruction on `w`. Also returns the route latencies involved.
#[allow(clippy::too_many_arguments)]
pub fn predict_start(
    g: &Qidg,
    f: &FabricGraph,
    s: &Schedule,
    i: usize,
    w: WellId,
    well: &[Option<WellId>],
    start: &[Option<Micros>],
    origin: &[Option<WellId>],
    well_free_at: Micros,
) -> (Micros, Vec<Micros>) {
    let mut t = well_free_at;
    let mut legs = Vec::new();
    let finish = |j: usize| start[j].expect("predecessor finalized") + g.node(j).duration;
    for &j in g.parents(i) {
        let r = f.latency(well[j].expect("predecessor finalized"), w);
        t = t.max(finish(j) + r);
        legs.push(r);
    }
    for &q in &g.node(i).operands {
        let route = qubit_route(g, s, q);
        let pos = route.iter().position(|&k| k == i).unwrap();
        if pos == 0 {
            if let Some(o) = origin[q.index()] {
                let r = f.latency(o, w);
                t = t.max(r);
                legs.push(r);
            }
        } else {
            let prev = route[pos - 1];
            if let (Some(pw), Some(_)) = (well[prev], start[prev]) {
                let r = f.latency(pw, w);
                t = t.max(finish(prev) + r);
                legs.push(r);
            }
        }
    }
    (t, legs)
}

/// Start-time threshold of a level: earliest predicted start plus half of
/// (longest duration + median incoming route latency).
pub fn level_threshold(t_min: &[Micros], durations: &[Micros], legs: &[Micros]) -> f64 {
    let es = t_min.iter().copied().min().unwrap_or(0) as f64;
    let dmax = durations.iter().copied().max().unwrap_or(0) as f64;
    let mut legs = legs.to_vec();
    legs.sort_unstable();
    let median = if legs.is_empty() { 0.0 } else { legs[(legs.len() - 1) / 2] as f64 };
    es + 0.5 * (dmax + median)
}

struct Placer<'a> {
    g: &'a Qidg,
    f: &'a FabricGraph,
    cfg: &'a PlacerConfig,
    mode: LevelMode,
    sched: Schedule,
    floors: Vec<usize>,
    well: Vec<Option<WellId>>,
    start: Vec<Option<Micros>>,
    threshold: Vec<f64>,
    coords: Vec<Point>,
    snapped: Vec<Point>,
    origin: Vec<Option<WellId>>,
    exit: Vec<Option<WellId>>,
    ports_bound: bool,
    creation_used: Vec<bool>,
    interaction: Vec<(WellId, Point)>,
    bins: UniformBins,
    center: Point,
    deferrals: usize,
    reschedules: usize,
    pending: usize,
    pending_slack: f64,
}

impl<'a> Placer<'a> {
    fn new(g: &'a Qidg, schedule: &Schedule, f: &'a FabricGraph, cfg: &'a PlacerConfig, mode: LevelMode) -> Self {
        let n = g.len();
        let center = Point::new((f.cols() as f64 - 1.0) / 2.0, (f.rows() as f64 - 1.0) / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let coords = (0..n)
            .map(|_| Point::new(center.x + rng.random_range(-0.5..0.5), center.y + rng.random_range(-0.5..0.5)))
            .collect();
        let mut floors = schedule.floors.clone();
        floors.resize(n, 0);
        Self {
            g,
            f,
            cfg,
            mode,
            sched: schedule.clone(),
            floors,
            well: vec![None; n],
            start: vec![None; n],
            threshold: vec![0.0; n],
            coords,
            snapped: vec![Point::default(); n],
            origin: vec![None; g.qubits().len()],
            exit: vec![None; g.qubits().len()],
            ports_bound: false,
            creation_used: vec![false; f.creation_wells().len()],
            interaction: f.interaction_wells().iter().map(|&w| (w, well_point(f, w))).collect(),
            bins: UniformBins::from_fabric(f),
            center,
            deferrals: 0,
            reschedules: 0,
            pending: 0,
            pending_slack: 0.0,
        }
    }

    fn run(mut self) -> Result<Placement, PlacerError> {
        let cap = self.cfg.horizon_factor * self.sched.num_levels.max(1);
        let mut level = 0;
        while level < self.sched.num_levels {
            if self.sched.num_levels > cap {
                return Err(PlacerError::HorizonExceeded { levels: self.sched.num_levels, cap });
            }
            let members: Vec<usize> =
                (0..self.g.len()).filter(|&i| self.sched.level[i] == level && self.well[i].is_none()).collect();
            if members.is_empty() {
                level += 1;
                continue;
            }
            self.global_place(level)?;
            let points: Vec<Point> = members.iter().map(|&i| self.coords[i]).collect();
            let wells = finalize_level(&points, &self.interaction);

            // tentative: ancilla origins and predicted starts
            let mut claimed: Vec<(usize, usize)> = Vec::new();
            let mut t_min = Vec::with_capacity(members.len());
            let mut all_legs = Vec::new();
            for (k, &i) in members.iter().enumerate() {
                for &q in &self.g.node(i).operands {
                    if self.g.qubit_kind(q) == QubitKind::Ancilla
                        && self.origin[q.index()].is_none()
                        && first_use(self.g, &self.sched, q) == Some(i)
                    {
                        let c = self.nearest_free_creation(wells[k], q)?;
                        self.creation_used[c] = true;
                        self.origin[q.index()] = Some(self.f.creation_wells()[c]);
                        claimed.push((i, c));
                    }
                }
                let busy = self.well_free_at(wells[k]);
                let (t, legs) = predict_start(
                    self.g, self.f, &self.sched, i, wells[k], &self.well, &self.start, &self.origin, busy,
                );
                t_min.push(t);
                all_legs.extend(legs);
            }
            let durations: Vec<Micros> = members.iter().map(|&i| self.g.node(i).duration).collect();
            let th = level_threshold(&t_min, &durations, &all_legs);

            let late: Vec<usize> = if self.mode == LevelMode::Variable {
                (0..members.len()).filter(|&k| t_min[k] as f64 > th).collect()
            } else {
                Vec::new()
            };
            for (k, &i) in members.iter().enumerate() {
                if late.contains(&k) {
                    continue;
                }
                self.well[i] = Some(wells[k]);
                self.start[i] = Some(t_min[k]);
                self.threshold[i] = th;
                self.snapped[i] = points[k];
            }
            if !late.is_empty() {
                for &k in &late {
                    let i = members[k];
                    self.floors[i] = level + 1;
                    for &(owner, c) in &claimed {
                        if owner == i {
                            self.creation_used[c] = false;
                            let q = self.f.creation_wells()[c];
                            if let Some(slot) = self.origin.iter_mut().find(|o| **o == Some(q)) {
                                *slot = None;
                            }
                        }
                    }
                    self.pending_slack += t_min[k] as f64 - th;
                }
                self.deferrals += late.len();
                self.pending += late.len();
                self.relevel(level, &late.iter().map(|&k| members[k]).collect::<Vec<_>>())?;
            }
            level += 1;
        }
        // Qubits no instruction touches are never created; they still get a
        // well of the right kind.
        let origin = (0..self.g.qubits().len())
            .map(|q| {
                self.origin[q].unwrap_or_else(|| match self.g.qubit_kind(QubitId(q as u32)) {
                    QubitKind::Ancilla => self.f.creation_wells().first().copied().unwrap_or(self.f.ports()[0]),
                    QubitKind::Io => self.f.ports()[0],
                })
            })
            .collect();
        Ok(Placement {
            schedule: self.sched,
            well: self.well.into_iter().map(Option::unwrap).collect(),
            coords: self.snapped,
            predicted_start: self.start.into_iter().map(Option::unwrap).collect(),
            threshold: self.threshold,
            origin,
            exit: self.exit,
            deferrals: self.deferrals,
            reschedules: self.reschedules,
        })
    }

    fn nearest_free_creation(&self, w: WellId, q: QubitId) -> Result<usize, PlacerError> {
        let cws = self.f.creation_wells();
        (0..cws.len())
            .filter(|&c| !self.creation_used[c])
            .min_by_key(|&c| (self.f.distance(cws[c], w), cws[c]))
            .ok_or_else(|| PlacerError::NoCreationWell {
                qubit: self.g.qubits()[q.index()].name.clone(),
                wells: cws.len(),
            })
    }

    fn well_free_at(&self, w: WellId) -> Micros {
        (0..self.g.len())
            .filter(|&j| self.well[j] == Some(w))
            .map(|j| self.start[j].unwrap() + self.g.node(j).duration)
            .max()
            .unwrap_or(0)
    }

    /// Move deferred instructions past `level` and repair the schedule.
    fn relevel(&mut self, level: usize, late: &[usize]) -> Result<(), PlacerError> {
        let n = self.g.len();
        for i in 0..n {
            if self.well[i].is_none() {
                self.floors[i] = self.floors[i].max(level + 1);
            }
        }
        let batch_full =
            self.pending >= self.cfg.defer_batch_count || self.pending_slack >= self.cfg.defer_batch_slack;
        if !batch_full {
            if let Some(s) = self.shift_forward(late) {
                self.sched = s;
                return Ok(());
            }
        }
        let pinned = (0..n).map(|i| self.well[i].map(|_| self.sched.level[i])).collect();
        let cons = LevelConstraints { floors: self.floors.clone(), pinned };
        self.sched = fds_schedule(self.g, self.sched.n_cap, &cons)?;
        self.reschedules += 1;
        self.pending = 0;
        self.pending_slack = 0.0;
        Ok(())
    }

    /// Push levels up along dependencies without re-running the scheduler.
    /// `None` if that would overfill a level.
    fn shift_forward(&self, _late: &[usize]) -> Option<Schedule> {
        let topo = self.g.topo_order().ok()?;
        let mut level = self.sched.level.clone();
        for &i in &topo {
            if self.well[i].is_some() {
                continue;
            }
            let need = self.g.parents(i).iter().map(|&p| level[p] + 1).max().unwrap_or(0).max(self.floors[i]);
            level[i] = level[i].max(need);
        }
        let s = Schedule::from_levels(level, self.sched.n_cap, self.floors.clone());
        (s.max_per_level() <= s.n_cap).then_some(s)
    }

    /// Quadratic placement of every unfinalized instruction with rough
    /// legalization of each level; leaves legalized coordinates in `coords`.
    fn global_place(&mut self, level: usize) -> Result<(), PlacerError> {
        let free: Vec<usize> = (0..self.g.len()).filter(|&i| self.well[i].is_none()).collect();
        let mut slot = vec![usize::MAX; self.g.len()];
        for (k, &i) in free.iter().enumerate() {
            slot[i] = k;
        }
        if !self.ports_bound {
            let base = self.nets(&free, &slot, false);
            let init: Vec<Point> = free.iter().map(|&i| self.coords[i]).collect();
            let solved = QuadraticSystem::build(&base).solve(&init, self.cfg.cg_tolerance)?;
            for (k, &i) in free.iter().enumerate() {
                self.coords[i] = solved[k];
            }
            self.bind_ports();
        }
        let base = self.nets(&free, &slot, true);
        let mut anchors: Vec<Option<Point>> = vec![None; free.len()];
        let mut current: Vec<Point> = free.iter().map(|&i| self.coords[i]).collect();
        let levels: Vec<usize> = {
            let mut ls: Vec<usize> = free.iter().map(|&i| self.sched.level[i]).collect();
            ls.sort_unstable();
            ls.dedup();
            ls
        };
        let mut weight = self.cfg.pseudo_net_base;
        for _ in 0..self.cfg.max_global_iters {
            let mut nets = base.clone();
            for (k, a) in anchors.iter().enumerate() {
                if let Some(p) = a {
                    nets.connect(Pin::Free(k), Pin::Fixed(*p), weight);
                }
            }
            nets.anchor_floating(self.center, 1e-3);
            let solved = QuadraticSystem::build(&nets).solve(&current, self.cfg.cg_tolerance)?;
            let mut legal = solved.clone();
            for &l in &levels {
                let ks: Vec<usize> = (0..free.len()).filter(|&k| self.sched.level[free[k]] == l).collect();
                let pts: Vec<Point> = ks.iter().map(|&k| solved[k]).collect();
                let spread = rough_legalize(&pts, &self.bins)
                    .map_err(|source| PlacerError::Overcapacity { level: l, source })?;
                for (k, p) in ks.into_iter().zip(spread) {
                    legal[k] = p;
                }
            }
            let gap = solved.iter().zip(&legal).map(|(a, b)| a.manhattan(*b)).fold(0.0, f64::max);
            current = legal.clone();
            if gap < 1.0 {
                break;
            }
            for (k, p) in legal.iter().enumerate() {
                if p.manhattan(solved[k]) > 1e-9 {
                    anchors[k] = Some(*p);
                }
            }
            weight *= self.cfg.pseudo_net_growth;
        }
        let _ = level;
        for (k, &i) in free.iter().enumerate() {
            self.coords[i] = current[k];
        }
        Ok(())
    }

    fn bind_ports(&mut self) {
        let ports: Vec<(WellId, Point)> = self.f.ports().iter().map(|&p| (p, well_point(self.f, p))).collect();
        let nearest = |pt: Point| ports.iter().min_by(|a, b| pt.manhattan(a.1).total_cmp(&pt.manhattan(b.1))).map(|p| p.0);
        for q in 0..self.g.qubits().len() {
            let qid = QubitId(q as u32);
            if self.g.qubit_kind(qid) != QubitKind::Io {
                continue;
            }
            match (first_use(self.g, &self.sched, qid), last_use(self.g, &self.sched, qid)) {
                (Some(a), Some(b)) => {
                    self.origin[q] = nearest(self.coords[a]);
                    self.exit[q] = nearest(self.coords[b]);
                }
                _ => {
                    self.origin[q] = Some(self.f.ports()[0]);
                    self.exit[q] = Some(self.f.ports()[0]);
                }
            }
        }
        self.ports_bound = true;
    }

    fn nets(&self, free: &[usize], slot: &[usize], with_terminals: bool) -> NetList {
        let g = self.g;
        let m_max = self.cfg.m_max;
        let mut nets = NetList::new(free.len());
        let pin = |i: usize| match self.well[i] {
            Some(w) => Pin::Fixed(well_point(self.f, w)),
            None => Pin::Free(slot[i]),
        };
        for (j, i, _) in g.edges() {
            if self.well[i].is_some() && self.well[j].is_some() {
                continue;
            }
            let gap = self.sched.level[i] as i64 - self.sched.level[j] as i64;
            let w = NetWeight::new(g.alap(i) - g.asap(i), gap).value(m_max);
            nets.connect(pin(j), pin(i), w);
        }
        if with_terminals {
            for q in 0..g.qubits().len() {
                let qid = QubitId(q as u32);
                let route = qubit_route(g, &self.sched, qid);
                let (Some(&first), Some(&last)) = (route.first(), route.last()) else { continue };
                if let Some(o) = self.origin[q] {
                    if self.well[first].is_none() {
                        let w = NetWeight::terminal(g.alap(first) - g.asap(first)).value(m_max);
                        nets.connect(Pin::Fixed(well_point(self.f, o)), pin(first), w);
                    }
                }
                if let Some(e) = self.exit[q] {
                    if self.well[last].is_none() {
                        let w = NetWeight::terminal(g.alap(last) - g.asap(last)).value(m_max);
                        nets.connect(pin(last), Pin::Fixed(well_point(self.f, e)), w);
                    }
                }
            }
        }
        nets.anchor_floating(self.center, 1e-3);
        nets
    }
}
