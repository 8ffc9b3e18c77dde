//! Static shortest routes and the greedy tick-driven dynamic router.
//!
//! Time advances in ticks of `move_delay`. Within a tick the router first
//! completes operations (and retires qubits that are finished), then creates
//! qubits, then fires every operation whose operands are all present, and
//! finally moves qubits one hop each in priority order. Moves are repeated in
//! passes so a qubit may follow another into a well vacated in the same tick.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commands::{Command, CommandKind, CommandStream, Pos};
use crate::config::Micros;
use crate::fabric::{FabricGraph, WellId};
use crate::placer::{qubit_route, Placement};
use crate::qasm::QubitKind;
use crate::qidg::{Qidg, QubitId};

/// One required movement of a qubit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub from: WellId,
    pub to: WellId,
    /// Instruction waiting at `to`; `None` for the trip to the exit port.
    pub target: Option<usize>,
    /// Wells after `from`, ending at `to`. Empty when `from == to`.
    pub path: Vec<WellId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitRoute {
    pub qubit: QubitId,
    pub origin: WellId,
    pub legs: Vec<Leg>,
}

impl QubitRoute {
    pub fn is_used(&self) -> bool {
        !self.legs.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouterError {
    #[error("deadlock at t={time} us; blocked: {}", blocked.join(", "))]
    Deadlock { time: Micros, blocked: Vec<String> },
    #[error("placement does not match the graph")]
    PlacementMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub stream: CommandStream,
    pub start: Vec<Micros>,
    pub finish: Vec<Micros>,
    /// Completion of the last command.
    pub latency: Micros,
    /// Qubit-ticks spent unable to take a wanted hop.
    pub stalls: usize,
    /// Instructions that started later than their operands were all present.
    pub well_waits: usize,
    /// Qubits pushed one hop off their route to break a standstill.
    pub evictions: usize,
}

impl RouteOutcome {
    pub fn contention(&self) -> usize {
        self.stalls + self.well_waits
    }
}

/// Shortest path for every movement: origin to first use, between
/// consecutive uses, and from the last use to the exit port (I/O qubits).
pub fn static_routes(g: &Qidg, p: &Placement, f: &FabricGraph) -> Vec<QubitRoute> {
    (0..g.qubits().len())
        .map(|qi| {
            let q = QubitId(qi as u32);
            let origin = p.origin[qi];
            let mut legs = Vec::new();
            let mut at = origin;
            let route = qubit_route(g, &p.schedule, q);
            for &i in &route {
                let to = p.well[i];
                legs.push(Leg { from: at, to, target: Some(i), path: hops(f, at, to) });
                at = to;
            }
            if let (Some(exit), false) = (p.exit[qi], route.is_empty()) {
                legs.push(Leg { from: at, to: exit, target: None, path: hops(f, at, exit) });
            }
            QubitRoute { qubit: q, origin, legs }
        })
        .collect()
}

fn hops(f: &FabricGraph, a: WellId, b: WellId) -> Vec<WellId> {
    f.shortest_path(a, b).into_iter().skip(1).collect()
}

/// Latency with unlimited channel and well capacity: every instruction
/// starts once each operand has finished its previous visit and travelled
/// the static route (creation at time 0), and once the instruction placed
/// before it on the same well has finished.
pub fn static_lower_bound(g: &Qidg, p: &Placement, f: &FabricGraph) -> Micros {
    let routes = static_routes(g, p, f);
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by_key(|&i| (p.schedule.level[i], i));
    let mut finish = vec![0; g.len()];
    let mut well_free = vec![0; f.num_wells()];
    let mut end = 0;
    for &i in &order {
        let mut start = well_free[p.well[i].index()];
        for r in &routes {
            for (k, leg) in r.legs.iter().enumerate() {
                if leg.target == Some(i) {
                    let ready = if k == 0 { 0 } else { finish[r.legs[k - 1].target.expect("exit leg is last")] };
                    start = start.max(ready + f.latency(leg.from, leg.to));
                }
            }
        }
        for &j in g.parents(i) {
            start = start.max(finish[j]);
        }
        finish[i] = start + g.node(i).duration;
        well_free[p.well[i].index()] = finish[i];
        end = end.max(finish[i]);
    }
    for r in &routes {
        if let Some(leg) = r.legs.last().filter(|l| l.target.is_none()) {
            let before = r.legs[r.legs.len() - 2].target.expect("exit follows a use");
            end = end.max(finish[before] + f.latency(leg.from, leg.to));
        }
    }
    end
}

#[derive(Debug, Clone)]
struct QubitState {
    created: bool,
    retired: bool,
    pos: WellId,
    leg: usize,
    /// Index into the current leg's path of the next hop.
    hop: usize,
    /// Arrival time of the last hop.
    arrive: Micros,
    busy: bool,
    /// When the qubit reached the end of its current leg.
    at_stop: Micros,
}

/// Give up after this many ticks.
const TICK_LIMIT: Micros = 1_000_000;

/// Mutable fabric state of one simulation.
struct RouteState<'a> {
    g: &'a Qidg,
    p: &'a Placement,
    f: &'a FabricGraph,
    routes: Vec<QubitRoute>,
    q: Vec<QubitState>,
    occupancy: Vec<usize>,
    /// Interval `[from, until)` of the operation last fired at each well.
    reserved_from: Vec<Micros>,
    reserved_until: Vec<Micros>,
    /// Per well: its instructions in (level, id) order and the next to fire.
    queue: Vec<Vec<usize>>,
    head: Vec<usize>,
    start: Vec<Option<Micros>>,
    finish: Vec<Option<Micros>>,
    running: Vec<usize>,
    commands: Vec<Command>,
    stalls: usize,
    well_waits: usize,
    evictions: usize,
    cap: usize,
    md: Micros,
}

/// Route every qubit of a placed graph and emit the command stream.
pub fn dynamic_route(g: &Qidg, p: &Placement, f: &FabricGraph) -> Result<RouteOutcome, RouterError> {
    if p.well.len() != g.len() || p.origin.len() != g.qubits().len() || p.exit.len() != g.qubits().len() {
        return Err(RouterError::PlacementMismatch);
    }
    RouteState::new(g, p, f).run()
}

impl<'a> RouteState<'a> {
    fn new(g: &'a Qidg, p: &'a Placement, f: &'a FabricGraph) -> Self {
        let routes = static_routes(g, p, f);
        let q = routes
            .iter()
            .map(|r| QubitState {
                created: false,
                retired: !r.is_used(),
                pos: r.origin,
                leg: 0,
                hop: 0,
                arrive: 0,
                busy: false,
                at_stop: 0,
            })
            .collect();
        let mut queue = vec![Vec::new(); f.num_wells()];
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by_key(|&i| (p.schedule.level[i], i));
        for i in order {
            queue[p.well[i].index()].push(i);
        }
        Self {
            g,
            p,
            f,
            routes,
            q,
            occupancy: vec![0; f.num_wells()],
            reserved_from: vec![0; f.num_wells()],
            reserved_until: vec![0; f.num_wells()],
            queue,
            head: vec![0; f.num_wells()],
            start: vec![None; g.len()],
            finish: vec![None; g.len()],
            running: Vec::new(),
            commands: Vec::new(),
            stalls: 0,
            well_waits: 0,
            evictions: 0,
            cap: f.config().well_capacity,
            md: f.config().move_delay,
        }
    }

    fn pos(&self, w: WellId) -> Pos {
        let well = self.f.well(w);
        (well.row, well.col)
    }

    fn leg(&self, q: usize) -> Option<&Leg> {
        self.routes[q].legs.get(self.q[q].leg)
    }

    fn at_leg_end(&self, q: usize) -> bool {
        self.leg(q).is_some_and(|l| self.q[q].hop == l.path.len())
    }

    fn is_head(&self, i: usize) -> bool {
        let w = self.p.well[i].index();
        self.queue[w].get(self.head[w]) == Some(&i)
    }

    /// Operand of a head instruction, or on its way out.
    fn urgent(&self, q: usize) -> bool {
        match self.leg(q).map(|l| l.target) {
            Some(Some(i)) => self.is_head(i),
            Some(None) => true,
            None => false,
        }
    }

    fn slack(&self, q: usize) -> usize {
        match self.leg(q).and_then(|l| l.target) {
            Some(i) => self.g.alap(i) - self.g.asap(i),
            None => 0,
        }
    }

    fn all_done(&self) -> bool {
        self.finish.iter().all(Option::is_some) && self.q.iter().all(|s| s.retired)
    }

    fn run(mut self) -> Result<RouteOutcome, RouterError> {
        let mut t: Micros = 0;
        loop {
            let mut progress = self.complete(t);
            progress |= self.create(t);
            progress |= self.fire(t);
            if self.all_done() {
                break;
            }
            progress |= self.moves(t, false);
            if !progress && self.running.is_empty() && self.q.iter().all(|s| s.arrive <= t) {
                // Let ordinary traffic use the headroom kept for urgent qubits,
                // then push a parked qubit aside.
                if !self.moves(t, true) && !(self.evict(t) && {
                    self.moves(t, true);
                    true
                }) {
                    return Err(RouterError::Deadlock { time: t, blocked: self.blocked() });
                }
            }
            t += self.md;
            if t / self.md > TICK_LIMIT {
                return Err(RouterError::Deadlock { time: t, blocked: self.blocked() });
            }
        }
        let start: Vec<Micros> = self.start.iter().map(|s| s.expect("all fired")).collect();
        let finish: Vec<Micros> = self.finish.iter().map(|s| s.expect("all finished")).collect();
        let latency = self
            .commands
            .iter()
            .map(|c| match &c.kind {
                CommandKind::Create { .. } => c.time,
                CommandKind::Move { .. } => c.time + self.md,
                CommandKind::Op { instruction, .. } => {
                    let i = self.g.nodes().iter().position(|n| n.index == *instruction).expect("own instruction");
                    c.time + self.g.node(i).duration
                }
            })
            .max()
            .unwrap_or(0);
        Ok(RouteOutcome {
            stream: CommandStream::new(self.commands),
            start,
            finish,
            latency,
            stalls: self.stalls,
            well_waits: self.well_waits,
            evictions: self.evictions,
        })
    }

    fn retire(&mut self, q: usize) {
        let s = &mut self.q[q];
        s.retired = true;
        self.occupancy[s.pos.index()] -= 1;
    }

    fn complete(&mut self, t: Micros) -> bool {
        let mut progress = false;
        let mut done: Vec<usize> = self.running.iter().copied().filter(|&i| self.finish[i] == Some(t)).collect();
        done.sort_unstable();
        self.running.retain(|i| !done.contains(i));
        for i in done {
            progress = true;
            for qid in self.g.node(i).operands.clone() {
                let q = qid.index();
                let s = &mut self.q[q];
                s.busy = false;
                s.leg += 1;
                s.hop = 0;
                if s.leg == self.routes[q].legs.len() {
                    self.retire(q);
                } else if self.routes[q].legs[s.leg].path.is_empty() {
                    s.at_stop = t;
                }
            }
        }
        for q in 0..self.q.len() {
            let s = &self.q[q];
            if s.created && !s.retired && s.arrive <= t && self.at_leg_end(q) && self.leg(q).is_some_and(|l| l.target.is_none()) {
                self.retire(q);
                progress = true;
            }
        }
        progress
    }

    fn create(&mut self, t: Micros) -> bool {
        let mut progress = false;
        for q in 0..self.q.len() {
            if self.q[q].created || self.q[q].retired {
                continue;
            }
            let w = self.routes[q].origin;
            let ancilla = self.g.qubit_kind(QubitId(q as u32)) == QubitKind::Ancilla;
            let limit = if ancilla || self.urgent(q) { self.cap } else { self.cap - 2 };
            if self.reserved_until[w.index()] > t || self.occupancy[w.index()] + 1 > limit {
                self.stalls += 1;
                continue;
            }
            self.occupancy[w.index()] += 1;
            let s = &mut self.q[q];
            s.created = true;
            s.arrive = t;
            if self.routes[q].legs[0].path.is_empty() {
                s.at_stop = t;
            }
            self.commands.push(Command { time: t, kind: CommandKind::Create { qubit: q as u32, at: self.pos(w) } });
            progress = true;
        }
        progress
    }

    fn fire(&mut self, t: Micros) -> bool {
        let mut progress = false;
        for w in 0..self.queue.len() {
            let Some(&i) = self.queue[w].get(self.head[w]) else { continue };
            if self.reserved_until[w] > t {
                continue;
            }
            let ready_ops = self.g.node(i).operands.iter().all(|qid| {
                let q = qid.index();
                let s = &self.q[q];
                s.created
                    && !s.busy
                    && s.arrive <= t
                    && self.at_leg_end(q)
                    && self.leg(q).is_some_and(|l| l.target == Some(i))
            });
            let parents_done = self.g.parents(i).iter().all(|&j| self.finish[j].is_some_and(|f| f <= t));
            if !ready_ops || !parents_done {
                continue;
            }
            let d = self.g.node(i).duration;
            let mut ready = 0;
            for qid in &self.g.node(i).operands {
                ready = ready.max(self.q[qid.index()].at_stop);
            }
            for &j in self.g.parents(i) {
                ready = ready.max(self.finish[j].expect("parent done"));
            }
            if t > ready {
                self.well_waits += 1;
            }
            self.start[i] = Some(t);
            self.finish[i] = Some(t + d);
            self.reserved_from[w] = t;
            self.reserved_until[w] = t + d;
            self.head[w] += 1;
            self.running.push(i);
            for qid in &self.g.node(i).operands {
                self.q[qid.index()].busy = true;
            }
            let node = self.g.node(i);
            self.commands.push(Command {
                time: t,
                kind: CommandKind::Op {
                    opcode: node.opcode.clone(),
                    instruction: node.index,
                    at: self.pos(WellId(w as u32)),
                    operands: node.operands.iter().map(|q| q.0).collect(),
                },
            });
            progress = true;
        }
        progress
    }

    fn wants_move(&self, q: usize, t: Micros) -> bool {
        let s = &self.q[q];
        s.created && !s.retired && !s.busy && s.arrive <= t && !self.at_leg_end(q)
    }

    /// One hop for as many qubits as the rules allow. With `relaxed`, the
    /// two slots each well keeps for urgent qubits are open to everyone.
    fn moves(&mut self, t: Micros, relaxed: bool) -> bool {
        let mut order: Vec<usize> = (0..self.q.len()).filter(|&q| self.wants_move(q, t)).collect();
        order.sort_by_key(|&q| {
            let target = self.leg(q).and_then(|l| l.target).unwrap_or(usize::MAX);
            (!self.urgent(q), self.slack(q), target, q)
        });
        let mut moved = vec![false; self.q.len()];
        let mut channels: HashSet<(WellId, WellId)> = HashSet::new();
        let mut any = false;
        loop {
            let mut pass = false;
            for &q in &order {
                if moved[q] {
                    continue;
                }
                let leg = self.leg(q).expect("moving qubit has a leg");
                let cur = self.q[q].pos;
                let next = leg.path[self.q[q].hop];
                let last = self.q[q].hop + 1 == leg.path.len();
                let urgent = self.urgent(q);
                if !self.may_leave(cur, t) || !self.may_enter(next, t + self.md) {
                    continue;
                }
                let key = (cur.min(next), cur.max(next));
                if channels.contains(&key) {
                    continue;
                }
                let limit = if urgent || relaxed { self.cap } else { self.cap - 2 };
                if self.occupancy[next.index()] + 1 > limit {
                    continue;
                }
                self.occupancy[cur.index()] -= 1;
                self.occupancy[next.index()] += 1;
                channels.insert(key);
                moved[q] = true;
                let s = &mut self.q[q];
                s.pos = next;
                s.hop += 1;
                s.arrive = t + self.md;
                if last {
                    s.at_stop = t + self.md;
                }
                self.commands.push(Command {
                    time: t,
                    kind: CommandKind::Move { qubit: q as u32, from: self.pos(cur), to: self.pos(next) },
                });
                pass = true;
                any = true;
            }
            if !pass {
                break;
            }
        }
        if !relaxed {
            self.stalls += order.iter().filter(|&&q| !moved[q]).count();
        }
        any
    }

    /// At a standstill, find an operand of the earliest unfired instruction
    /// that is held up by a full well and move one other qubit out of that
    /// well to a neighbour with room. The evicted qubit re-routes from there.
    fn evict(&mut self, t: Micros) -> bool {
        let Some(i) = (0..self.g.len()).filter(|&i| self.start[i].is_none()).min_by_key(|&i| (self.p.schedule.level[i], i)) else {
            return false;
        };
        let operands: Vec<usize> = self.g.node(i).operands.iter().map(|q| q.index()).collect();
        for &u in &operands {
            let s = &self.q[u];
            if s.busy || s.retired || (s.created && self.at_leg_end(u)) {
                continue;
            }
            let full = if s.created { self.leg(u).expect("moving").path[s.hop] } else { self.routes[u].origin };
            if self.occupancy[full.index()] < self.cap {
                continue;
            }
            let mut victims: Vec<usize> = (0..self.q.len())
                .filter(|&v| {
                    let s = &self.q[v];
                    s.created && !s.retired && !s.busy && s.pos == full && s.arrive <= t && !operands.contains(&v)
                })
                .collect();
            victims.sort_by_key(|&v| {
                let target = self.leg(v).and_then(|l| l.target).unwrap_or(usize::MAX);
                (self.urgent(v), std::cmp::Reverse((self.slack(v), target, v)))
            });
            let mut spots: Vec<WellId> = self.f.neighbors(full).to_vec();
            spots.sort_by_key(|&w| (w == self.q[u].pos, w));
            for v in victims {
                if !self.may_leave(full, t) {
                    break;
                }
                let Some(&spot) =
                    spots.iter().find(|&&w| self.may_enter(w, t + self.md) && self.occupancy[w.index()] < self.cap)
                else {
                    break;
                };
                let leg = self.q[v].leg;
                let to = self.routes[v].legs[leg].to;
                self.routes[v].legs[leg].path = std::iter::once(spot).chain(hops(self.f, spot, to)).collect();
                self.occupancy[full.index()] -= 1;
                self.occupancy[spot.index()] += 1;
                let s = &mut self.q[v];
                s.pos = spot;
                s.hop = 1;
                s.arrive = t + self.md;
                if spot == to {
                    s.at_stop = t + self.md;
                }
                self.commands.push(Command {
                    time: t,
                    kind: CommandKind::Move { qubit: v as u32, from: self.pos(full), to: self.pos(spot) },
                });
                self.evictions += 1;
                return true;
            }
        }
        false
    }

    /// No qubit may leave or land in a well while an operation runs there;
    /// the instants the operation starts and ends are free.
    fn may_leave(&self, w: WellId, t: Micros) -> bool {
        !(self.reserved_from[w.index()] < t && t < self.reserved_until[w.index()])
    }

    /// Landing at `at`; operations that could still start are at or after `at`.
    fn may_enter(&self, w: WellId, at: Micros) -> bool {
        self.reserved_until[w.index()] <= at
    }

    fn blocked(&self) -> Vec<String> {
        (0..self.q.len())
            .filter(|&q| self.q[q].created && !self.q[q].retired)
            .map(|q| {
                let w = self.f.well(self.q[q].pos);
                let what = match self.leg(q).map(|l| l.target) {
                    Some(Some(i)) => format!("I{}", self.g.node(i).index),
                    _ => "exit".to_string(),
                };
                format!("q{q}@({},{})->{what}", w.row, w.col)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FabricConfig, PlacerConfig};
    use crate::placer::{place, LevelMode, Point};
    use crate::qasm;
    use crate::scheduler::Schedule;

    fn manual(g: &Qidg, f: &FabricGraph, wells: Vec<WellId>, origin: Vec<WellId>, exit: Vec<Option<WellId>>) -> Placement {
        let level = (0..g.len()).map(|i| g.asap(i)).collect();
        let schedule = Schedule::from_levels(level, f.interaction_wells().len(), vec![0; g.len()]);
        Placement {
            schedule,
            coords: vec![Point::new(0.0, 0.0); g.len()],
            predicted_start: vec![0; g.len()],
            threshold: vec![0.0; g.len()],
            well: wells,
            origin,
            exit,
            deferrals: 0,
            reschedules: 0,
        }
    }

    fn fabric() -> FabricGraph {
        FabricGraph::build(&FabricConfig::default()).unwrap()
    }

    #[test]
    fn routes_match_physical_distance() {
        let f = fabric();
        let prog = qasm::parse("QUBIT a,0\nQUBIT b,0\nH a\nCNOT a,b\nH a\n").unwrap();
        let g = Qidg::analyze(&prog, f.config()).unwrap();
        let i0 = f.well_at(2, 2).unwrap();
        let i1 = f.well_at(7, 7).unwrap();
        let p = manual(&g, &f, vec![i0, i1, i1], vec![f.well_at(2, 3).unwrap(), f.well_at(7, 6).unwrap()], vec![None, None]);
        let routes = static_routes(&g, &p, &f);
        let a = &routes[0];
        assert_eq!(a.legs.len(), 3);
        assert_eq!(a.legs[0].path.len(), 1);
        assert_eq!(a.legs[2].path, Vec::<WellId>::new());
        for leg in &a.legs {
            assert_eq!(leg.path.len() as u32, f.distance(leg.from, leg.to));
        }
    }

    #[test]
    fn single_qubit_ten_hops_then_op() {
        let f = fabric();
        let g = Qidg::analyze(&qasm::parse("QUBIT a, 0\nX a\n").unwrap(), f.config()).unwrap();
        let target = f.well_at(7, 7).unwrap();
        let from = f.wells().iter().find(|w| f.distance(w.id, target) == 10).unwrap().id;
        let p = manual(&g, &f, vec![target], vec![from], vec![None]);
        let g2 = Qidg::analyze(&qasm::parse("QUBIT a, 0\nQUBIT b, 0\nCNOT a, b\n").unwrap(), f.config()).unwrap();
        let p2 = manual(&g2, &f, vec![target], vec![from, target], vec![None, None]);
        let out = dynamic_route(&g, &p, &f).unwrap();
        assert_eq!(out.latency, 150);
        let out = dynamic_route(&g2, &p2, &f).unwrap();
        assert_eq!(out.latency, 200);
        assert_eq!(out.latency, static_lower_bound(&g2, &p2, &f));
        assert_eq!(out.contention(), 0);
    }

    #[test]
    fn opposing_qubits_share_a_channel_in_turn() {
        let f = fabric();
        let prog = qasm::parse("QUBIT a,0\nQUBIT b,0\nH a\nH b\n").unwrap();
        let g = Qidg::analyze(&prog, f.config()).unwrap();
        // Three hops apart on one corridor: they meet on the middle channel.
        let (l, r) = (f.well_at(2, 4).unwrap(), f.well_at(2, 7).unwrap());
        let p = manual(&g, &f, vec![r, l], vec![l, r], vec![None, None]);
        let out = dynamic_route(&g, &p, &f).unwrap();
        assert_eq!(static_lower_bound(&g, &p, &f), 80);
        assert_eq!(out.stalls, 1);
        assert_eq!(out.latency, 90);
    }

    #[test]
    fn steane_routes_without_deadlock() {
        let cfg = FabricConfig::default().with_ulb_n(2);
        let f = FabricGraph::build(&cfg).unwrap();
        let mut g = Qidg::analyze(&qasm::parse(qasm::STEANE_ZERO_PREP).unwrap(), &cfg).unwrap();
        crate::scheduler::preprocess(&mut g).unwrap();
        let s = crate::scheduler::fds_schedule(&g, 2, &crate::scheduler::LevelConstraints::none(g.len())).unwrap();
        let p = place(&g, &s, &f, &PlacerConfig::default(), LevelMode::Variable).unwrap();
        let out = dynamic_route(&g, &p, &f).unwrap();
        assert!(out.latency >= static_lower_bound(&g, &p, &f));
        assert!(out.start.iter().zip(&out.finish).all(|(s, e)| s < e));
    }
}
