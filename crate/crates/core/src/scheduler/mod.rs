//! Instruction scheduling: sibling serialization, force-directed level
//! assignment under a per-level cap, and the cap sweep.

mod fds;
mod oracle;
mod preprocess;
mod validate;

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SchedulerConfig;
use crate::qidg::{Qidg, QidgError};

pub use fds::{fds_schedule, list_schedule};
pub use oracle::{exact_oracle, exact_oracle_with, ORACLE_MAX_NODES};
pub use preprocess::preprocess;
pub use validate::{validate_schedule, ScheduleViolation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error(transparent)]
    Graph(#[from] QidgError),
    #[error("per-level cap must be at least 1")]
    ZeroCap,
    #[error("instruction {0}: pinned level conflicts with its dependencies")]
    BadPin(usize),
    #[error("no schedule within {0} levels")]
    Infeasible(usize),
    #[error("exact search limited to {limit} instructions (got {nodes})")]
    TooLarge { nodes: usize, limit: usize },
}

/// Per-instruction restrictions on top of the dependency edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LevelConstraints {
    /// Lowest level each instruction may take.
    pub floors: Vec<usize>,
    /// Instructions whose level is already decided.
    pub pinned: Vec<Option<usize>>,
}

impl LevelConstraints {
    pub fn none(n: usize) -> Self {
        Self { floors: vec![0; n], pinned: vec![None; n] }
    }

    pub fn with_floors(floors: Vec<usize>) -> Self {
        let n = floors.len();
        Self { floors, pinned: vec![None; n] }
    }

    pub(crate) fn floor(&self, i: usize) -> usize {
        self.floors.get(i).copied().unwrap_or(0)
    }

    pub(crate) fn pin(&self, i: usize) -> Option<usize> {
        self.pinned.get(i).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Level of each instruction, by node id.
    pub level: Vec<usize>,
    pub num_levels: usize,
    pub per_level_count: Vec<usize>,
    pub n_cap: usize,
    pub floors: Vec<usize>,
}

impl Schedule {
    pub fn from_levels(level: Vec<usize>, n_cap: usize, floors: Vec<usize>) -> Self {
        let num_levels = level.iter().max().map_or(0, |m| m + 1);
        let mut per_level_count = vec![0; num_levels];
        for &l in &level {
            per_level_count[l] += 1;
        }
        Self { level, num_levels, per_level_count, n_cap, floors }
    }

    pub fn max_per_level(&self) -> usize {
        self.per_level_count.iter().copied().max().unwrap_or(0)
    }

    /// Members of each level, ascending node id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_levels];
        for (i, &l) in self.level.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn to_table(&self, g: &Qidg) -> String {
        let mut out = String::from("instruction\topcode\tlevel\tn_cap\n");
        for (i, &l) in self.level.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", g.node(i).index, g.node(i).opcode, l, self.n_cap);
        }
        out
    }
}

/// Scheduling priority: lower mobility slack first, then lower ASAP, then lower index.
pub fn cmp_priority(g: &Qidg, a: usize, b: usize) -> Ordering {
    g.mobility(b)
        .total_cmp(&g.mobility(a))
        .then(g.asap(a).cmp(&g.asap(b)))
        .then(a.cmp(&b))
}

/// `min(n_max, widest ASAP level)`, at least 1.
pub fn n_ma(g: &Qidg, n_max: usize) -> usize {
    let mut width = vec![0usize; g.depth()];
    for i in 0..g.len() {
        width[g.asap(i)] += 1;
    }
    n_max.min(width.into_iter().max().unwrap_or(0)).max(1)
}

/// Cap for one sweep point: `ceil(alpha * n_ma)`.
pub fn cap_for(alpha: f64, n_ma: usize) -> usize {
    ((alpha * n_ma as f64) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub alpha: f64,
    pub n_m: usize,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumerated {
    pub candidates: Vec<Candidate>,
    /// Index of the fewest-levels candidate (ties: lowest peak concurrency, then sweep order).
    pub default_pick: usize,
}

impl Enumerated {
    pub fn default_schedule(&self) -> &Schedule {
        &self.candidates[self.default_pick].schedule
    }
}

/// Run FDS once per alpha. `n_max` is the global cap (interaction-well count
/// unless the config overrides it). `g` must already be preprocessed.
pub fn schedule_enumerated(
    g: &Qidg,
    cfg: &SchedulerConfig,
    n_max: usize,
    cons: &LevelConstraints,
) -> Result<Enumerated, SchedError> {
    let n_max = cfg.n_max.map_or(n_max, |m| m.min(n_max)).max(1);
    let nma = n_ma(g, n_max);
    let candidates: Vec<Candidate> = cfg
        .alpha_set
        .par_iter()
        .map(|&alpha| {
            let n_m = cap_for(alpha, nma);
            fds_schedule(g, n_m, cons).map(|schedule| Candidate { alpha, n_m, schedule })
        })
        .collect::<Result<_, _>>()?;
    let default_pick = (0..candidates.len())
        .min_by_key(|&k| (candidates[k].schedule.num_levels, candidates[k].schedule.max_per_level(), k))
        .unwrap_or(0);
    Ok(Enumerated { candidates, default_pick })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FabricConfig;
    use crate::qasm::parse;

    fn prepared(src: &str) -> Qidg {
        let mut g = Qidg::analyze(&parse(src).unwrap(), &FabricConfig::default()).unwrap();
        preprocess(&mut g).unwrap();
        g
    }

    #[test]
    fn caps_round_up() {
        assert_eq!(cap_for(1.0, 5), 5);
        assert_eq!(cap_for(0.8, 5), 4);
        assert_eq!(cap_for(0.2, 5), 1);
        assert_eq!(cap_for(0.2, 2), 1);
        assert_eq!(cap_for(0.6, 2), 2);
    }

    #[test]
    fn uncapped_sweep_is_uniform_when_cap_never_binds() {
        // widest ASAP level is 1, so every alpha yields cap 1 and the same schedule
        let g = prepared("QUBIT a, 0\nH a\nX a\nT a\n");
        let e = schedule_enumerated(&g, &SchedulerConfig::default(), 10, &LevelConstraints::none(g.len())).unwrap();
        for c in &e.candidates {
            assert_eq!(c.schedule, e.candidates[0].schedule);
        }
    }

    #[test]
    fn empty_graph_has_empty_schedule() {
        let g = prepared("QUBIT a, 0\n");
        let e = schedule_enumerated(&g, &SchedulerConfig::default(), 4, &LevelConstraints::none(0)).unwrap();
        assert_eq!(e.default_schedule().num_levels, 0);
        assert!(e.default_schedule().level.is_empty());
    }

    #[test]
    fn default_pick_prefers_fewer_levels() {
        let g = prepared("QUBIT a, 0\nQUBIT b, 0\nQUBIT c, 0\nQUBIT d, 0\nH a\nH b\nH c\nH d\n");
        let e = schedule_enumerated(&g, &SchedulerConfig::default(), 4, &LevelConstraints::none(g.len())).unwrap();
        assert_eq!(e.default_schedule().num_levels, 1);
        assert_eq!(e.candidates.last().unwrap().schedule.num_levels, 4);
    }

    #[test]
    fn table_lists_every_instruction() {
        let g = prepared("QUBIT a, 0\nH a\nX a\n");
        let s = fds_schedule(&g, 1, &LevelConstraints::none(2)).unwrap();
        let t = s.to_table(&g);
        assert!(t.contains("1\tH\t0\t1"));
        assert!(t.contains("2\tX\t1\t1"));
    }
}
