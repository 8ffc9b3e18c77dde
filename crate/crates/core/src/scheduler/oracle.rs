//! Exhaustive minimum-level search for small graphs.

use std::collections::HashSet;

use crate::qidg::Qidg;

use super::{LevelConstraints, SchedError};

pub const ORACLE_MAX_NODES: usize = 16;

/// Fewest levels for `g` with at most `n_max` instructions per level, siblings
/// never sharing a level, and every edge strictly increasing in level.
pub fn exact_oracle(g: &Qidg, n_max: usize) -> Result<usize, SchedError> {
    exact_oracle_with(g, n_max, &LevelConstraints::none(g.len()))
}

/// As [`exact_oracle`], honouring floors (pins are ignored).
///
/// Breadth-first over sets of finished instructions. Each step fills a level
/// with an inclusion-maximal admissible set of ready instructions: pulling a
/// ready instruction into an earlier level never hurts, so non-maximal sets
/// can be skipped.
pub fn exact_oracle_with(g: &Qidg, n_max: usize, cons: &LevelConstraints) -> Result<usize, SchedError> {
    let n = g.len();
    if n > ORACLE_MAX_NODES {
        return Err(SchedError::TooLarge { nodes: n, limit: ORACLE_MAX_NODES });
    }
    if n_max == 0 {
        return Err(SchedError::ZeroCap);
    }
    g.topo_order()?;
    let full: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    let parents: Vec<u32> = (0..n).map(|i| g.parents(i).iter().fold(0, |m, &p| m | 1 << p)).collect();
    let sibs: Vec<u32> = (0..n).map(|i| g.siblings(i).iter().fold(0, |m, &p| m | 1 << p)).collect();

    let mut frontier: HashSet<u32> = HashSet::from([0]);
    let mut level = 0usize;
    while !frontier.contains(&full) {
        let mut next = HashSet::new();
        for &done in &frontier {
            let ready: Vec<usize> = (0..n)
                .filter(|&i| done & 1 << i == 0 && parents[i] & !done == 0 && cons.floor(i) <= level)
                .collect();
            if ready.is_empty() {
                next.insert(done);
                continue;
            }
            maximal_sets(&ready, &sibs, n_max, &mut |set| {
                next.insert(done | set);
            });
        }
        frontier = next;
        level += 1;
    }
    Ok(level)
}

fn maximal_sets(ready: &[usize], sibs: &[u32], cap: usize, emit: &mut impl FnMut(u32)) {
    fn rec(k: usize, ready: &[usize], sibs: &[u32], cap: usize, chosen: u32, size: usize, emit: &mut impl FnMut(u32)) {
        if k == ready.len() {
            let addable = ready
                .iter()
                .any(|&i| chosen & 1 << i == 0 && size < cap && sibs[i] & chosen == 0);
            if !addable && chosen != 0 {
                emit(chosen);
            }
            return;
        }
        let i = ready[k];
        if size < cap && sibs[i] & chosen == 0 {
            rec(k + 1, ready, sibs, cap, chosen | 1 << i, size + 1, emit);
        }
        rec(k + 1, ready, sibs, cap, chosen, size, emit);
    }
    rec(0, ready, sibs, cap, 0, 0, emit);
}
