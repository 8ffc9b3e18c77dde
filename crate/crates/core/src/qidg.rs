//! Instruction dependency graph.
//!
//! Nodes are native instructions in file order. Edges follow the per-qubit
//! access sequence: a write orders everything after it, consecutive reads do
//! not order each other. Reads of one qubit that end up unordered are
//! *siblings*: only one copy of a qubit exists, so they still may not share a
//! level, and the scheduler's preprocessing serializes them with auxiliary
//! edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{FabricConfig, Micros};
use crate::qasm::{DurationClass, Program, QubitDecl, QubitKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QubitId(pub u32);

impl QubitId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Set of dependency kinds carried by one edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeTags(u8);

impl EdgeTags {
    pub const RAW: EdgeTags = EdgeTags(1);
    pub const WAW: EdgeTags = EdgeTags(2);
    pub const WAR: EdgeTags = EdgeTags(4);
    pub const AUX: EdgeTags = EdgeTags(8);

    pub fn contains(self, other: EdgeTags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: EdgeTags) {
        self.0 |= other.0;
    }

    pub fn is_aux_only(self) -> bool {
        self == Self::AUX
    }
}

impl fmt::Display for EdgeTags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = [(Self::RAW, "RAW"), (Self::WAW, "WAW"), (Self::WAR, "WAR"), (Self::AUX, "AUX")];
        let parts: Vec<&str> = names.iter().filter(|(t, _)| self.contains(*t)).map(|(_, n)| *n).collect();
        f.write_str(&parts.join("|"))
    }
}

/// Which operand of a two-qubit instruction is the (read-only) control.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperandRoles {
    /// `CNOT c, t`
    #[default]
    ControlFirst,
    /// `CNOT t, c`
    TargetFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    /// 1-based position in the source program.
    pub index: usize,
    pub opcode: String,
    pub class: DurationClass,
    pub operands: Vec<QubitId>,
    pub duration: Micros,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QidgError {
    #[error("dependency graph contains a cycle through instruction {0}")]
    CycleDetected(usize),
}

#[derive(Debug, Clone)]
pub struct Qidg {
    qubits: Vec<QubitDecl>,
    nodes: Vec<Node>,
    edges: BTreeMap<(usize, usize), EdgeTags>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    /// Per qubit: node ids touching it, in program order, with write flags.
    accesses: Vec<Vec<(usize, bool)>>,
    siblings: Vec<BTreeSet<usize>>,
    asap: Vec<usize>,
    alap: Vec<usize>,
    mobility: Vec<f64>,
    m_sat: f64,
}

pub const DEFAULT_M_SAT: f64 = 1e6;

impl Qidg {
    /// Dependency edges only; call [`compute_siblings`](Self::compute_siblings)
    /// and [`levelize`](Self::levelize) before scheduling.
    pub fn build(program: &Program, timing: &FabricConfig) -> Self {
        Self::build_with_roles(program, timing, OperandRoles::ControlFirst)
    }

    pub fn build_with_roles(program: &Program, timing: &FabricConfig, roles: OperandRoles) -> Self {
        let nodes: Vec<Node> = program
            .instructions
            .iter()
            .map(|ins| Node {
                index: ins.index,
                opcode: ins.opcode.clone(),
                class: ins.class,
                operands: ins
                    .operands
                    .iter()
                    .map(|name| QubitId(program.qubit_index(name).expect("parser checked declarations") as u32))
                    .collect(),
                duration: match ins.class {
                    DurationClass::OneQubit => timing.one_qubit_delay,
                    DurationClass::TwoQubit => timing.two_qubit_delay,
                },
            })
            .collect();

        let mut accesses: Vec<Vec<(usize, bool)>> = vec![Vec::new(); program.qubits.len()];
        for (id, node) in nodes.iter().enumerate() {
            for (pos, q) in node.operands.iter().enumerate() {
                let writes = match (node.operands.len(), roles) {
                    (1, _) => true,
                    (_, OperandRoles::ControlFirst) => pos == 1,
                    (_, OperandRoles::TargetFirst) => pos == 0,
                };
                accesses[q.index()].push((id, writes));
            }
        }

        let n = nodes.len();
        let mut g = Self {
            qubits: program.qubits.clone(),
            nodes,
            edges: BTreeMap::new(),
            parents: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
            accesses,
            siblings: vec![BTreeSet::new(); n],
            asap: vec![0; n],
            alap: vec![0; n],
            mobility: vec![DEFAULT_M_SAT; n],
            m_sat: DEFAULT_M_SAT,
        };

        for q in 0..g.accesses.len() {
            let mut last_writer: Option<usize> = None;
            let mut readers: Vec<usize> = Vec::new();
            for k in 0..g.accesses[q].len() {
                let (id, writes) = g.accesses[q][k];
                if writes {
                    if readers.is_empty() {
                        if let Some(w) = last_writer {
                            g.add_edge(w, id, EdgeTags::WAW);
                        }
                    } else {
                        for &r in &readers {
                            g.add_edge(r, id, EdgeTags::WAR);
                        }
                    }
                    last_writer = Some(id);
                    readers.clear();
                } else {
                    if let Some(w) = last_writer {
                        g.add_edge(w, id, EdgeTags::RAW);
                    }
                    readers.push(id);
                }
            }
        }
        g
    }

    /// Parse-to-levelized convenience: edges, siblings, ASAP/ALAP.
    pub fn analyze(program: &Program, timing: &FabricConfig) -> Result<Self, QidgError> {
        let mut g = Self::build(program, timing);
        g.compute_siblings();
        g.levelize()?;
        Ok(g)
    }

    pub fn with_m_sat(mut self, m_sat: f64) -> Self {
        self.m_sat = m_sat;
        self
    }

    pub(crate) fn add_edge(&mut self, from: usize, to: usize, tag: EdgeTags) -> bool {
        assert_ne!(from, to, "self-dependency");
        let entry = self.edges.entry((from, to)).or_default();
        let fresh = *entry == EdgeTags::default();
        entry.insert(tag);
        if fresh {
            insert_sorted(&mut self.parents[to], from);
            insert_sorted(&mut self.children[from], to);
        }
        fresh
    }

    /// Sibling sets from scratch: unordered pairs within one run of reads of a qubit.
    pub fn compute_siblings(&mut self) {
        let reach = Reachability::new(self);
        for set in &mut self.siblings {
            set.clear();
        }
        for q in 0..self.accesses.len() {
            let mut run: Vec<usize> = Vec::new();
            let seq = self.accesses[q].clone();
            for (k, &(id, writes)) in seq.iter().enumerate() {
                if !writes {
                    run.push(id);
                }
                if writes || k + 1 == seq.len() {
                    for (a_pos, &a) in run.iter().enumerate() {
                        for &b in &run[a_pos + 1..] {
                            if !reach.ordered(a, b) {
                                self.siblings[a].insert(b);
                                self.siblings[b].insert(a);
                            }
                        }
                    }
                    run.clear();
                }
            }
        }
    }

    /// Topological order (Kahn, lowest id first among ready nodes).
    pub fn topo_order(&self) -> Result<Vec<usize>, QidgError> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &self.children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(QidgError::CycleDetected(self.nodes[stuck].index));
        }
        Ok(order)
    }

    /// Unit-level ASAP/ALAP against the current critical path, plus mobility.
    pub fn levelize(&mut self) -> Result<(), QidgError> {
        let order = self.topo_order()?;
        let n = self.nodes.len();
        let mut asap = vec![0usize; n];
        for &i in &order {
            asap[i] = self.parents[i].iter().map(|&p| asap[p] + 1).max().unwrap_or(0);
        }
        let mut height = vec![0usize; n];
        for &i in order.iter().rev() {
            height[i] = self.children[i].iter().map(|&c| height[c] + 1).max().unwrap_or(0);
        }
        let bound = asap.iter().max().map_or(0, |m| m + 1);
        self.alap = height.iter().map(|h| bound - 1 - h).collect();
        self.asap = asap;
        self.mobility = (0..n).map(|i| self.priority_of(self.alap[i] - self.asap[i])).collect();
        Ok(())
    }

    /// `1 / slack`, saturated for zero slack.
    pub fn priority_of(&self, slack: usize) -> f64 {
        if slack == 0 {
            self.m_sat
        } else {
            1.0 / slack as f64
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }
    pub fn qubits(&self) -> &[QubitDecl] {
        &self.qubits
    }
    pub fn qubit_kind(&self, q: QubitId) -> QubitKind {
        self.qubits[q.index()].kind
    }
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeTags)> + '_ {
        self.edges.iter().map(|(&(a, b), &t)| (a, b, t))
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn edge(&self, from: usize, to: usize) -> Option<EdgeTags> {
        self.edges.get(&(from, to)).copied()
    }
    pub fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }
    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }
    pub fn siblings(&self, id: usize) -> &BTreeSet<usize> {
        &self.siblings[id]
    }
    pub(crate) fn siblings_mut(&mut self) -> &mut Vec<BTreeSet<usize>> {
        &mut self.siblings
    }
    pub fn asap(&self, id: usize) -> usize {
        self.asap[id]
    }
    pub fn alap(&self, id: usize) -> usize {
        self.alap[id]
    }
    pub fn mobility(&self, id: usize) -> f64 {
        self.mobility[id]
    }
    pub fn m_sat(&self) -> f64 {
        self.m_sat
    }
    /// Critical path length in levels.
    pub fn depth(&self) -> usize {
        self.asap.iter().max().map_or(0, |m| m + 1)
    }
    /// Instructions touching `q`, in program order.
    pub fn accesses(&self, q: QubitId) -> impl Iterator<Item = usize> + '_ {
        self.accesses[q.index()].iter().map(|&(id, _)| id)
    }

    /// Deterministic Graphviz dump: nodes by index, edges by (from, to).
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph qidg {\n");
        for (id, node) in self.nodes.iter().enumerate() {
            let ops: Vec<String> = node.operands.iter().map(|q| self.qubits[q.index()].name.clone()).collect();
            let _ = writeln!(
                out,
                "  n{} [label=\"{}: {} {}\\nasap={} alap={}\"];",
                node.index,
                node.index,
                node.opcode,
                ops.join(","),
                self.asap[id],
                self.alap[id]
            );
        }
        for (&(a, b), tags) in &self.edges {
            let style = if tags.is_aux_only() { ", style=dashed" } else { "" };
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"{}\"{}];",
                self.nodes[a].index, self.nodes[b].index, tags, style
            );
        }
        for (a, set) in self.siblings.iter().enumerate() {
            for &b in set.iter().filter(|&&b| b > a) {
                let _ = writeln!(
                    out,
                    "  n{} -> n{} [dir=none, color=gray, constraint=false];",
                    self.nodes[a].index, self.nodes[b].index
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    if let Err(pos) = v.binary_search(&x) {
        v.insert(pos, x);
    }
}

/// Transitive-closure bitsets, kept current as edges are added.
pub(crate) struct Reachability {
    words: usize,
    /// `rows[i]` has bit `j` set iff a non-empty path `i -> j` exists.
    rows: Vec<Vec<u64>>,
}

impl Reachability {
    pub(crate) fn new(g: &Qidg) -> Self {
        let n = g.len();
        let words = n.div_ceil(64).max(1);
        let mut rows = vec![vec![0u64; words]; n];
        let order = g.topo_order().expect("reachability needs an acyclic graph");
        for &i in order.iter().rev() {
            let mut row = vec![0u64; words];
            for &c in g.children(i) {
                row[c / 64] |= 1 << (c % 64);
                for (dst, src) in row.iter_mut().zip(&rows[c]) {
                    *dst |= *src;
                }
            }
            rows[i] = row;
        }
        Self { words, rows }
    }

    pub(crate) fn reaches(&self, from: usize, to: usize) -> bool {
        self.rows[from][to / 64] & (1 << (to % 64)) != 0
    }

    pub(crate) fn ordered(&self, a: usize, b: usize) -> bool {
        self.reaches(a, b) || self.reaches(b, a)
    }

    /// Record a new edge `from -> to`.
    pub(crate) fn add_edge(&mut self, from: usize, to: usize) {
        let mut gained = self.rows[to].clone();
        gained[to / 64] |= 1 << (to % 64);
        for x in 0..self.rows.len() {
            if x == from || self.reaches(x, from) {
                for w in 0..self.words {
                    self.rows[x][w] |= gained[w];
                }
            }
        }
    }
}

/// Longest-path depth of every node from sources, by BFS layering. Test helper
/// kept here so other modules' tests can share it.
#[cfg(test)]
pub(crate) fn layered_depths(g: &Qidg) -> Vec<usize> {
    let n = g.len();
    let mut indeg: Vec<usize> = (0..n).map(|i| g.parents(i).len()).collect();
    let mut depth = vec![0usize; n];
    let mut q: std::collections::VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(i) = q.pop_front() {
        for &c in g.children(i) {
            depth[c] = depth[c].max(depth[i] + 1);
            indeg[c] -= 1;
            if indeg[c] == 0 {
                q.push_back(c);
            }
        }
    }
    depth
}
