//! Block-size exploration: per-operation latency profiles and the weighted
//! objective `n * L_r1 * D_r_avg + sum_o w_o * L_o(n)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FabricConfig, FlowConfig, Micros};
use crate::flow::map_text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizerError {
    #[error("no candidate size is feasible for every operation")]
    NoFeasibleSize,
    #[error("no candidate sizes given")]
    NoSizes,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Latency of one operation on one size, or why it could not be mapped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Latency(Micros),
    Infeasible(String),
}

impl Cell {
    pub fn latency(&self) -> Option<Micros> {
        match self {
            Self::Latency(l) => Some(*l),
            Self::Infeasible(_) => None,
        }
    }
}

/// `L_o(n)` for every profiled operation and size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpLatencyTable {
    pub cells: BTreeMap<String, BTreeMap<usize, Cell>>,
}

impl OpLatencyTable {
    pub fn set(&mut self, op: &str, n: usize, cell: Cell) {
        self.cells.entry(op.to_string()).or_default().insert(n, cell);
    }

    pub fn get(&self, op: &str, n: usize) -> Option<&Cell> {
        self.cells.get(op).and_then(|m| m.get(&n))
    }

    pub fn latency(&self, op: &str, n: usize) -> Option<Micros> {
        self.get(op, n).and_then(Cell::latency)
    }

    pub fn ops(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    /// Every operation in the table maps onto size `n`.
    pub fn feasible(&self, n: usize) -> bool {
        self.cells.values().all(|m| m.get(&n).is_some_and(|c| c.latency().is_some()))
    }

    /// `n,<op>...` with empty cells for infeasible entries.
    pub fn to_csv(&self, sizes: &[usize]) -> String {
        let mut s = String::from("n");
        for op in self.ops() {
            let _ = write!(s, ",{op}");
        }
        s.push('\n');
        for &n in sizes {
            let _ = write!(s, "{n}");
            for op in self.ops() {
                match self.latency(op, n) {
                    Some(l) => {
                        let _ = write!(s, ",{l}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Inputs of the size objective that come from the algorithm level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadModel {
    /// Occurrences of each operation on the critical path.
    pub weights: BTreeMap<String, f64>,
    /// Average inter-block routing distance, in adjacent-block hops.
    pub d_r_avg: f64,
    /// Routing latency between adjacent 1x1 blocks (us); derived from the
    /// fabric when absent.
    pub l_r1: Option<f64>,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        Self { weights: BTreeMap::new(), d_r_avg: 0.0, l_r1: None }
    }
}

impl WorkloadModel {
    /// The Toffoli accounting: 2 T, 2 Tdag, 6 CNOT, 1 H and 13 hops.
    pub fn toffoli() -> Self {
        let weights = [("T", 2.0), ("Tdag", 2.0), ("CNOT", 6.0), ("H", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self { weights, d_r_avg: 13.0, l_r1: None }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let w: WorkloadModel = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.d_r_avg >= 0.0) {
            return Err(ConfigError::NotPositive("d_r_avg"));
        }
        if self.weights.values().any(|w| !(*w >= 0.0)) {
            return Err(ConfigError::NotPositive("weights"));
        }
        if self.l_r1.is_some_and(|l| !(l >= 0.0)) {
            return Err(ConfigError::NotPositive("l_r1"));
        }
        Ok(())
    }

    pub fn l_r1_or(&self, fabric: &FabricConfig) -> f64 {
        self.l_r1.unwrap_or_else(|| default_l_r1(fabric) as f64)
    }
}

/// One template edge of hops at `move_delay` each.
pub fn default_l_r1(fabric: &FabricConfig) -> Micros {
    fabric.template_cols as Micros * fabric.move_delay
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeObjective {
    pub n: usize,
    pub feasible: bool,
    pub routing: f64,
    /// `w_o * L_o(n)` per weighted operation.
    pub op_terms: BTreeMap<String, f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub best: usize,
    pub objectives: Vec<SizeObjective>,
}

impl SizeReport {
    pub fn to_csv(&self) -> String {
        let ops: Vec<String> = self.objectives.first().map(|o| o.op_terms.keys().cloned().collect()).unwrap_or_default();
        let mut s = String::from("n,feasible,routing");
        for op in &ops {
            let _ = write!(s, ",{op}");
        }
        s.push_str(",objective\n");
        for o in &self.objectives {
            let _ = write!(s, "{},{},{}", o.n, o.feasible, o.routing);
            for op in &ops {
                let _ = write!(s, ",{}", o.op_terms.get(op).copied().unwrap_or(0.0));
            }
            match o.value {
                Some(v) => {
                    let _ = writeln!(s, ",{v}");
                }
                None => s.push_str(",\n"),
            }
        }
        s
    }
}

/// Smallest objective over feasible sizes; ties go to the smaller `n`.
pub fn best_size(table: &OpLatencyTable, w: &WorkloadModel, sizes: &[usize], l_r1: f64) -> Result<SizeReport, SizerError> {
    if sizes.is_empty() {
        return Err(SizerError::NoSizes);
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let objectives: Vec<SizeObjective> = sorted
        .iter()
        .map(|&n| {
            let routing = n as f64 * l_r1 * w.d_r_avg;
            let mut feasible = table.feasible(n);
            let mut op_terms = BTreeMap::new();
            for (op, &wo) in &w.weights {
                match table.latency(op, n) {
                    Some(l) => {
                        op_terms.insert(op.clone(), wo * l as f64);
                    }
                    None if wo == 0.0 => {
                        op_terms.insert(op.clone(), 0.0);
                    }
                    None => feasible = false,
                }
            }
            let value = feasible.then(|| routing + op_terms.values().sum::<f64>());
            SizeObjective { n, feasible, routing, op_terms, value }
        })
        .collect();
    let best = objectives
        .iter()
        .filter_map(|o| o.value.map(|v| (v, o.n)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, n)| n)
        .ok_or(SizerError::NoFeasibleSize)?;
    Ok(SizeReport { best, objectives })
}

/// Map every operation circuit onto every size. Runs are independent and
/// execute in parallel; results are keyed, so order does not matter.
pub fn profile_sizes(op_circuits: &BTreeMap<String, String>, sizes: &[usize], cfg: &FlowConfig) -> OpLatencyTable {
    let jobs: Vec<(&String, &String, usize)> =
        op_circuits.iter().flat_map(|(op, text)| sizes.iter().map(move |&n| (op, text, n))).collect();
    let cells: Vec<(String, usize, Cell)> = jobs
        .par_iter()
        .map(|&(op, text, n)| {
            let cell = match map_text(text, &cfg.clone().with_ulb_n(n)) {
                Ok(r) => Cell::Latency(r.best.report.total_latency),
                Err(e) => Cell::Infeasible(e.kind().to_string()),
            };
            (op.clone(), n, cell)
        })
        .collect();
    let mut table = OpLatencyTable::default();
    for (op, n, cell) in cells {
        table.set(&op, n, cell);
    }
    table
}

/// Latencies of the four operations used by the Toffoli decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToffoliLatencies {
    pub t: Micros,
    pub tdag: Micros,
    pub cnot: Micros,
    pub h: Micros,
}

impl ToffoliLatencies {
    pub fn of(&self, op: &str) -> Micros {
        match op {
            "T" => self.t,
            "Tdag" => self.tdag,
            "CNOT" => self.cnot,
            "H" => self.h,
            other => panic!("not a Toffoli operation: {other}"),
        }
    }

    pub fn from_table(table: &OpLatencyTable, n: usize) -> Option<Self> {
        Some(Self {
            t: table.latency("T", n)?,
            tdag: table.latency("Tdag", n)?,
            cnot: table.latency("CNOT", n)?,
            h: table.latency("H", n)?,
        })
    }
}

/// One row of the 15-operation Toffoli mapping on a 2x2 block mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ToffoliRow {
    pub slot: &'static str,
    pub op: &'static str,
    pub operands: &'static str,
    /// Block (1..=4) the operation runs in.
    pub block: u8,
    /// Blocks holding q0, q1, q2 before and after.
    pub before: [u8; 3],
    pub after: [u8; 3],
    /// Adjacent-block hops charged to the row.
    pub hops: u32,
    pub critical: bool,
}

const fn row(slot: &'static str, op: &'static str, operands: &'static str, block: u8, before: [u8; 3], after: [u8; 3], hops: u32, critical: bool) -> ToffoliRow {
    ToffoliRow { slot, op, operands, block, before, after, hops, critical }
}

pub const TOFFOLI_ROWS: [ToffoliRow; 15] = [
    row("1", "H", "q2", 3, [1, 2, 3], [1, 2, 3], 0, true),
    row("2", "CNOT", "q1,q2", 2, [1, 2, 3], [1, 2, 2], 2, true),
    row("3", "Tdag", "q2", 4, [1, 2, 2], [1, 2, 4], 1, true),
    row("4", "CNOT", "q0,q2", 1, [1, 2, 4], [1, 2, 1], 2, true),
    row("5", "T", "q2", 3, [1, 2, 1], [1, 2, 3], 1, true),
    row("6", "CNOT", "q1,q2", 2, [1, 2, 3], [1, 2, 2], 2, true),
    row("7.a", "Tdag", "q2", 4, [1, 2, 2], [1, 2, 4], 1, true),
    row("7.b", "T", "q1", 2, [1, 2, 2], [1, 2, 4], 0, false),
    row("8", "CNOT", "q0,q2", 4, [1, 2, 4], [4, 2, 4], 1, true),
    row("9.a", "T", "q2", 3, [4, 2, 4], [2, 2, 3], 1, false),
    row("9.b", "CNOT", "q0,q1", 4, [4, 2, 4], [2, 2, 3], 1, true),
    row("10.a", "H", "q2", 3, [2, 2, 3], [1, 2, 3], 0, false),
    row("10.b", "T", "q0", 1, [2, 2, 3], [1, 2, 3], 1, true),
    row("10.c", "Tdag", "q1", 2, [2, 2, 3], [1, 2, 3], 0, false),
    row("11", "CNOT", "q0,q1", 1, [1, 2, 3], [1, 1, 3], 1, true),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub row: ToffoliRow,
    /// `L_op(n) + hops * n * L_r1`.
    pub row_cost: Micros,
    /// The row's share of the critical path (zero off the path).
    pub critical_cost: Micros,
}

pub fn toffoli_ledger(lat: &ToffoliLatencies, n: u64, l_r1: Micros) -> Vec<LedgerEntry> {
    TOFFOLI_ROWS
        .iter()
        .map(|r| {
            let row_cost = lat.of(r.op) + r.hops as Micros * n * l_r1;
            LedgerEntry { row: *r, row_cost, critical_cost: if r.critical { row_cost } else { 0 } }
        })
        .collect()
}

/// Critical-path latency of the Toffoli mapping.
pub fn toffoli_cost(lat: &ToffoliLatencies, n: u64, l_r1: Micros) -> Micros {
    2 * lat.t + 2 * lat.tdag + 6 * lat.cnot + lat.h + 13 * n * l_r1
}
