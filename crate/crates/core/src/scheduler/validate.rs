//! Schedule checker, written against the constraints rather than the scheduler.

use std::collections::HashMap;
use std::fmt;

use crate::qidg::Qidg;

use super::Schedule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    WrongLength { expected: usize, got: usize },
    LevelOutOfRange { instruction: usize, level: usize },
    Precedence { from: usize, to: usize },
    /// Two instructions touching the same qubit on one level.
    SharedQubit { a: usize, b: usize, level: usize },
    Capacity { level: usize, count: usize, cap: usize },
    BelowFloor { instruction: usize, level: usize, floor: usize },
    CountMismatch { level: usize },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongLength { expected, got } => write!(f, "schedule covers {got} instructions, graph has {expected}"),
            Self::LevelOutOfRange { instruction, level } => write!(f, "I{instruction} at level {level} beyond num_levels"),
            Self::Precedence { from, to } => write!(f, "I{from} must precede I{to}"),
            Self::SharedQubit { a, b, level } => write!(f, "I{a} and I{b} share a qubit on level {level}"),
            Self::Capacity { level, count, cap } => write!(f, "level {level} holds {count} > {cap}"),
            Self::BelowFloor { instruction, level, floor } => write!(f, "I{instruction} at {level} below floor {floor}"),
            Self::CountMismatch { level } => write!(f, "per-level count wrong at level {level}"),
        }
    }
}

/// Every constraint violation of `s` against `g` (empty means valid).
/// Instructions are reported by 1-based program index.
pub fn validate_schedule(g: &Qidg, s: &Schedule) -> Vec<ScheduleViolation> {
    let mut out = Vec::new();
    let n = g.len();
    if s.level.len() != n {
        out.push(ScheduleViolation::WrongLength { expected: n, got: s.level.len() });
        return out;
    }
    let idx = |i: usize| g.node(i).index;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for (i, &l) in s.level.iter().enumerate() {
        if l >= s.num_levels {
            out.push(ScheduleViolation::LevelOutOfRange { instruction: idx(i), level: l });
        }
        *counts.entry(l).or_default() += 1;
        let floor = s.floors.get(i).copied().unwrap_or(0);
        if l < floor {
            out.push(ScheduleViolation::BelowFloor { instruction: idx(i), level: l, floor });
        }
    }
    for (a, b, _) in g.edges() {
        if s.level[a] >= s.level[b] {
            out.push(ScheduleViolation::Precedence { from: idx(a), to: idx(b) });
        }
    }
    let mut seen: HashMap<(u32, usize), usize> = HashMap::new();
    for (i, node) in g.nodes().iter().enumerate() {
        for q in &node.operands {
            if let Some(&other) = seen.get(&(q.0, s.level[i])) {
                out.push(ScheduleViolation::SharedQubit { a: idx(other), b: idx(i), level: s.level[i] });
            } else {
                seen.insert((q.0, s.level[i]), i);
            }
        }
    }
    let mut levels: Vec<_> = counts.into_iter().collect();
    levels.sort_unstable();
    for (l, count) in levels {
        if count > s.n_cap {
            out.push(ScheduleViolation::Capacity { level: l, count, cap: s.n_cap });
        }
        if s.per_level_count.get(l) != Some(&count) {
            out.push(ScheduleViolation::CountMismatch { level: l });
        }
    }
    out
}
