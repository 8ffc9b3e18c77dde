//! Replays a command stream against the fabric rules.
//!
//! Deliberately written without reference to the router's state machine:
//! every rule is re-derived from the commands alone. Within one time instant,
//! completions come first, then creations, then operation starts, then moves.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::commands::{CommandKind, CommandStream, Pos};
use crate::config::Micros;
use crate::fabric::{FabricGraph, WellId, WellKind};
use crate::qasm::QubitKind;
use crate::qidg::Qidg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    UnknownWell,
    UnknownQubit,
    UnknownInstruction,
    DuplicateCreate,
    WrongCreateWell,
    NotCreated,
    NonAdjacentMove,
    WrongSource,
    MoveInFlight,
    QubitBusy,
    ReservedWell,
    HalfDuplex,
    ChannelOverload,
    CapacityExceeded,
    NotInteractionWell,
    OperandMismatch,
    OperandNotPresent,
    WellBusy,
    DependencyOrder,
    DuplicateOp,
    MissingOp,
    NotAtExit,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub time: Micros,
    pub command: String,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmulatorReport {
    pub ok: bool,
    pub total_latency: Micros,
    pub violations: Vec<Violation>,
}

impl EmulatorReport {
    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}  total_latency={}us  violations={}", if self.ok { "OK" } else { "FAIL" }, self.total_latency, self.violations.len());
        for v in &self.violations {
            let _ = writeln!(s, "t={} {} [{}] {}", v.time, v.rule, v.command, v.detail);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default)]
struct Ion {
    at: Option<WellId>,
    created: bool,
    gone: bool,
    /// Busy moving until this time.
    landed: Micros,
    /// Busy in an operation until this time.
    free: Micros,
}

struct Replay<'a> {
    f: &'a FabricGraph,
    g: &'a Qidg,
    ions: Vec<Ion>,
    count: Vec<usize>,
    /// Per well: operation intervals `[start, end)`.
    busy: Vec<Vec<(Micros, Micros)>>,
    /// Per well: instants a qubit left or landed there.
    touched: Vec<Vec<Micros>>,
    /// Per undirected channel: (time, from) of each traversal.
    traffic: HashMap<(WellId, WellId), Vec<(Micros, WellId)>>,
    done: Vec<Option<Micros>>,
    violations: Vec<Violation>,
    step: Micros,
}

/// Check `stream` against the fabric and the dependency graph.
pub fn validate(stream: &CommandStream, f: &FabricGraph, g: &Qidg) -> EmulatorReport {
    let step = f.config().move_delay;
    let mut r = Replay {
        f,
        g,
        ions: vec![Ion::default(); g.qubits().len()],
        count: vec![0; f.num_wells()],
        busy: vec![Vec::new(); f.num_wells()],
        touched: vec![Vec::new(); f.num_wells()],
        traffic: HashMap::new(),
        done: vec![None; g.len()],
        violations: Vec::new(),
        step,
    };
    let by_index: HashMap<usize, usize> = g.nodes().iter().enumerate().map(|(i, n)| (n.index, i)).collect();

    let mut cmds: Vec<_> = stream.commands.iter().collect();
    let phase = |k: &CommandKind| match k {
        CommandKind::Create { .. } => 0,
        CommandKind::Op { .. } => 1,
        CommandKind::Move { .. } => 2,
    };
    cmds.sort_by_key(|c| (c.time, phase(&c.kind)));

    // When each qubit's last command completes, it leaves the fabric.
    let mut leave: BTreeMap<Micros, Vec<usize>> = BTreeMap::new();
    let mut last_end: HashMap<usize, Micros> = HashMap::new();
    let mut latency = 0;
    for c in &cmds {
        let end = match &c.kind {
            CommandKind::Create { .. } => c.time,
            CommandKind::Move { .. } => c.time + step,
            CommandKind::Op { instruction, .. } => c.time + by_index.get(instruction).map_or(0, |&i| g.node(i).duration),
        };
        latency = latency.max(end);
        for q in c.qubits() {
            let e = last_end.entry(q as usize).or_insert(0);
            *e = (*e).max(end);
        }
    }
    for (&q, &t) in &last_end {
        leave.entry(t).or_default().push(q);
    }

    let mut k = 0;
    while k < cmds.len() {
        let t = cmds[k].time;
        let due: Vec<Micros> = leave.range(..=t).map(|(&t, _)| t).collect();
        for lt in due {
            for q in leave.remove(&lt).unwrap_or_default() {
                r.depart(q);
            }
        }
        let mut arrivals = Vec::new();
        while k < cmds.len() && cmds[k].time == t {
            let c = cmds[k];
            let text = c.to_string();
            match &c.kind {
                CommandKind::Create { qubit, at } => {
                    if let Some(w) = r.create(t, &text, *qubit as usize, *at) {
                        arrivals.push((w, text.clone()));
                    }
                }
                CommandKind::Move { qubit, from, to } => {
                    if let Some(w) = r.hop(t, &text, *qubit as usize, *from, *to) {
                        arrivals.push((w, text.clone()));
                    }
                }
                CommandKind::Op { opcode, instruction, at, operands } => match by_index.get(instruction) {
                    Some(&i) => r.operate(t, &text, i, opcode, *at, operands),
                    None => r.flag(t, &text, Rule::UnknownInstruction, format!("no instruction I{instruction}")),
                },
            }
            k += 1;
        }
        for (w, text) in arrivals {
            if r.count[w.index()] > f.config().well_capacity {
                let well = f.well(w);
                r.flag(t, &text, Rule::CapacityExceeded, format!("({},{}) holds {}", well.row, well.col, r.count[w.index()]));
            }
        }
    }
    for qs in leave.into_values() {
        for q in qs {
            r.depart(q);
        }
    }
    for i in 0..g.len() {
        if r.done[i].is_none() {
            r.flag(latency, "", Rule::MissingOp, format!("I{} never executed", g.node(i).index));
        }
    }
    let Replay { violations, .. } = r;
    EmulatorReport { ok: violations.is_empty(), total_latency: latency, violations }
}

impl Replay<'_> {
    fn flag(&mut self, time: Micros, command: &str, rule: Rule, detail: String) {
        self.violations.push(Violation { time, command: command.to_string(), rule, detail });
    }

    fn well(&mut self, t: Micros, text: &str, p: Pos) -> Option<WellId> {
        let w = self.f.well_at(p.0, p.1);
        if w.is_none() {
            self.flag(t, text, Rule::UnknownWell, format!("no well at ({},{})", p.0, p.1));
        }
        w
    }

    fn reserved(&self, w: WellId, from: Micros, to: Micros) -> bool {
        self.busy[w.index()].iter().any(|&(s, e)| s < to && from < e)
    }

    /// A qubit leaves or lands at `t` strictly inside an operation at `w`.
    fn interrupts(&self, w: WellId, t: Micros) -> bool {
        self.busy[w.index()].iter().any(|&(s, e)| s < t && t < e)
    }

    fn depart(&mut self, q: usize) {
        let Some(ion) = self.ions.get_mut(q) else { return };
        if ion.gone {
            return;
        }
        ion.gone = true;
        if let Some(w) = ion.at {
            self.count[w.index()] -= 1;
            let well = self.f.well(w);
            if self.g.qubit_kind(crate::qidg::QubitId(q as u32)) == QubitKind::Io && !well.is_port {
                let v = Violation {
                    time: ion.landed.max(ion.free),
                    command: String::new(),
                    rule: Rule::NotAtExit,
                    detail: format!("q{q} ends at ({},{}), not a port", well.row, well.col),
                };
                self.violations.push(v);
            }
        }
    }

    fn create(&mut self, t: Micros, text: &str, q: usize, p: Pos) -> Option<WellId> {
        if q >= self.ions.len() {
            self.flag(t, text, Rule::UnknownQubit, format!("q{q} is not declared"));
            return None;
        }
        let w = self.well(t, text, p)?;
        if self.ions[q].created {
            self.flag(t, text, Rule::DuplicateCreate, format!("q{q} already exists"));
            return None;
        }
        let well = *self.f.well(w);
        let fits = match self.g.qubit_kind(crate::qidg::QubitId(q as u32)) {
            QubitKind::Ancilla => well.kind == WellKind::Creation,
            QubitKind::Io => well.is_port,
        };
        if !fits {
            self.flag(t, text, Rule::WrongCreateWell, format!("({},{}) cannot create q{q}", well.row, well.col));
        }
        if self.interrupts(w, t) {
            self.flag(t, text, Rule::ReservedWell, "well is reserved".into());
        }
        self.touched[w.index()].push(t);
        self.ions[q] = Ion { at: Some(w), created: true, gone: false, landed: t, free: t };
        self.count[w.index()] += 1;
        Some(w)
    }

    fn hop(&mut self, t: Micros, text: &str, q: usize, from: Pos, to: Pos) -> Option<WellId> {
        if q >= self.ions.len() {
            self.flag(t, text, Rule::UnknownQubit, format!("q{q} is not declared"));
            return None;
        }
        let a = self.well(t, text, from)?;
        let b = self.well(t, text, to)?;
        let ion = self.ions[q].clone();
        if !ion.created || ion.gone {
            self.flag(t, text, Rule::NotCreated, format!("q{q} is not on the fabric"));
            return None;
        }
        if ion.at != Some(a) {
            self.flag(t, text, Rule::WrongSource, format!("q{q} is not at ({},{})", from.0, from.1));
        }
        if !self.f.are_adjacent(a, b) {
            self.flag(t, text, Rule::NonAdjacentMove, format!("({},{}) and ({},{}) share no channel", from.0, from.1, to.0, to.1));
        }
        if ion.landed > t {
            self.flag(t, text, Rule::MoveInFlight, format!("q{q} lands at {}", ion.landed));
        }
        if ion.free > t {
            self.flag(t, text, Rule::QubitBusy, format!("q{q} is in an operation until {}", ion.free));
        }
        for (w, at) in [(a, t), (b, t + self.step)] {
            if self.interrupts(w, at) {
                let well = self.f.well(w);
                let detail = format!("({},{}) is reserved at {at}", well.row, well.col);
                self.flag(t, text, Rule::ReservedWell, detail);
            }
            self.touched[w.index()].push(at);
        }
        let key = (a.min(b), a.max(b));
        let prior = self.traffic.entry(key).or_default();
        let clash: Vec<bool> = prior.iter().filter(|(s, _)| *s + self.step > t).map(|&(_, src)| src == a).collect();
        prior.push((t, a));
        if clash.iter().any(|same| !same) {
            self.flag(t, text, Rule::HalfDuplex, "channel is in use in the other direction".into());
        }
        if clash.iter().any(|&same| same) {
            self.flag(t, text, Rule::ChannelOverload, "channel already carries a qubit".into());
        }
        if let Some(w) = ion.at {
            self.count[w.index()] -= 1;
        }
        self.count[b.index()] += 1;
        let ion = &mut self.ions[q];
        ion.at = Some(b);
        ion.landed = t + self.step;
        Some(b)
    }

    fn operate(&mut self, t: Micros, text: &str, i: usize, opcode: &str, p: Pos, operands: &[u32]) {
        let Some(w) = self.well(t, text, p) else { return };
        let node = self.g.node(i).clone();
        if self.done[i].is_some() {
            self.flag(t, text, Rule::DuplicateOp, format!("I{} already executed", node.index));
            return;
        }
        if self.f.well(w).kind != WellKind::Interaction {
            self.flag(t, text, Rule::NotInteractionWell, format!("({},{}) is not an interaction well", p.0, p.1));
        }
        let expected: Vec<u32> = node.operands.iter().map(|q| q.0).collect();
        if node.opcode != opcode || expected != operands {
            self.flag(t, text, Rule::OperandMismatch, format!("I{} is {} on {:?}", node.index, node.opcode, expected));
        }
        let end = t + node.duration;
        if self.reserved(w, t, end) {
            self.flag(t, text, Rule::WellBusy, "another operation holds the well".into());
        }
        if self.touched[w.index()].iter().any(|&m| t < m && m < end) {
            self.flag(t, text, Rule::ReservedWell, "a qubit lands during the operation".into());
        }
        for &j in self.g.parents(i) {
            match self.done[j] {
                Some(e) if e <= t => {}
                _ => {
                    let detail = format!("parent I{} has not finished", self.g.node(j).index);
                    self.flag(t, text, Rule::DependencyOrder, detail);
                }
            }
        }
        for &q in &expected {
            let q = q as usize;
            let ion = self.ions[q].clone();
            if !ion.created || ion.gone || ion.at != Some(w) || ion.landed > t {
                self.flag(t, text, Rule::OperandNotPresent, format!("q{q} is not at ({},{})", p.0, p.1));
            }
            if ion.free > t {
                self.flag(t, text, Rule::QubitBusy, format!("q{q} is in an operation until {}", ion.free));
            }
            self.ions[q].free = end;
        }
        self.busy[w.index()].push((t, end));
        self.done[i] = Some(end);
    }
}
