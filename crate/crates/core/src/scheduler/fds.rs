//! Latency-constrained force-directed scheduling with a per-level cap.

use crate::qidg::Qidg;

use super::{cmp_priority, LevelConstraints, SchedError, Schedule};

const FORCE_QUANTUM: f64 = 1e-9;

/// Assign every instruction a level. Starts from the tightest horizon (critical
/// path with floors, or `n / n_m`) and widens it one level at a time whenever
/// some instruction has no legal level left.
pub fn fds_schedule(g: &Qidg, n_m: usize, cons: &LevelConstraints) -> Result<Schedule, SchedError> {
    if n_m == 0 {
        return Err(SchedError::ZeroCap);
    }
    let n = g.len();
    if n == 0 {
        return Ok(Schedule::from_levels(Vec::new(), n_m, Vec::new()));
    }
    let topo = g.topo_order()?;
    let earliest = earliest_levels(g, &topo, cons)?;
    let pinned_top = (0..n).filter_map(|i| cons.pin(i)).max().map_or(0, |m| m + 1);
    let crit = earliest.iter().max().unwrap() + 1;
    let mut horizon = crit.max(n.div_ceil(n_m)).max(pinned_top);
    let give_up = horizon + 8;
    while horizon <= give_up {
        let mut run = Run::new(g, &topo, n_m, cons, horizon);
        if let Some(levels) = run.solve() {
            return Ok(finish(g, levels, n_m, cons));
        }
        horizon += 1;
    }
    list_schedule(g, n_m, cons)
}

/// Deterministic list scheduler: fill each level with the highest-priority
/// ready instructions. Used as a fallback and as a baseline in tests.
pub fn list_schedule(g: &Qidg, n_m: usize, cons: &LevelConstraints) -> Result<Schedule, SchedError> {
    if n_m == 0 {
        return Err(SchedError::ZeroCap);
    }
    let n = g.len();
    let mut level: Vec<Option<usize>> = (0..n).map(|i| cons.pin(i)).collect();
    let mut count: Vec<usize> = Vec::new();
    for l in level.iter().flatten() {
        bump(&mut count, *l);
    }
    let mut left = level.iter().filter(|l| l.is_none()).count();
    let bound = n + (0..n).map(|i| cons.floor(i)).max().unwrap_or(0) + count.len() + 1;
    let mut l = 0;
    while left > 0 {
        if l > bound {
            return Err(SchedError::Infeasible(bound));
        }
        let mut ready: Vec<usize> = (0..n)
            .filter(|&i| {
                level[i].is_none()
                    && cons.floor(i) <= l
                    && g.parents(i).iter().all(|&p| level[p].is_some_and(|lp| lp < l))
            })
            .collect();
        ready.sort_by(|&a, &b| cmp_priority(g, a, b));
        let used = count.get(l).copied().unwrap_or(0);
        for &i in ready.iter().take(n_m.saturating_sub(used)) {
            level[i] = Some(l);
            bump(&mut count, l);
            left -= 1;
        }
        l += 1;
    }
    let level: Vec<usize> = level.into_iter().map(Option::unwrap).collect();
    for i in 0..n {
        if g.parents(i).iter().any(|&p| level[p] >= level[i]) {
            return Err(SchedError::BadPin(g.node(i).index));
        }
    }
    Ok(finish(g, level.into_iter().map(Some).collect(), n_m, cons))
}

fn bump(count: &mut Vec<usize>, l: usize) {
    if count.len() <= l {
        count.resize(l + 1, 0);
    }
    count[l] += 1;
}

fn finish(g: &Qidg, levels: Vec<Option<usize>>, n_m: usize, cons: &LevelConstraints) -> Schedule {
    let floors = (0..g.len()).map(|i| cons.floor(i)).collect();
    Schedule::from_levels(levels.into_iter().map(Option::unwrap).collect(), n_m, floors)
}

/// Uncapped earliest level of every instruction under floors and pins.
fn earliest_levels(g: &Qidg, topo: &[usize], cons: &LevelConstraints) -> Result<Vec<usize>, SchedError> {
    let mut e = vec![0usize; g.len()];
    for &i in topo {
        let from_parents = g.parents(i).iter().map(|&p| e[p] + 1).max().unwrap_or(0);
        e[i] = match cons.pin(i) {
            Some(l) if l < from_parents => return Err(SchedError::BadPin(g.node(i).index)),
            Some(l) => l,
            None => from_parents.max(cons.floor(i)),
        };
    }
    Ok(e)
}

struct Run<'a> {
    g: &'a Qidg,
    topo: &'a [usize],
    cap: usize,
    cons: &'a LevelConstraints,
    horizon: usize,
    limit: usize,
    level: Vec<Option<usize>>,
    count: Vec<usize>,
}

#[derive(Clone, Copy)]
struct Frame {
    lo: usize,
    hi: usize,
}

impl<'a> Run<'a> {
    fn new(g: &'a Qidg, topo: &'a [usize], cap: usize, cons: &'a LevelConstraints, horizon: usize) -> Self {
        let level: Vec<Option<usize>> = (0..g.len()).map(|i| cons.pin(i)).collect();
        let mut count = vec![0; horizon];
        for l in level.iter().flatten() {
            count[*l] += 1;
        }
        let limit = horizon + g.len();
        Self { g, topo, cap, cons, horizon, limit, level, count }
    }

    fn full(&self, l: usize) -> bool {
        self.count[l] >= self.cap
    }

    /// Feasible level ranges of unassigned instructions, or `None` if some range is empty.
    fn frames(&self) -> Option<Vec<Frame>> {
        let n = self.g.len();
        let mut lo = vec![0usize; n];
        for &i in self.topo {
            if let Some(l) = self.level[i] {
                lo[i] = l;
                continue;
            }
            let mut l = self.g.parents(i).iter().map(|&p| lo[p] + 1).max().unwrap_or(0).max(self.cons.floor(i));
            while l < self.horizon && self.full(l) {
                l += 1;
            }
            lo[i] = l;
        }
        let mut hi = vec![0isize; n];
        for &i in self.topo.iter().rev() {
            if let Some(l) = self.level[i] {
                hi[i] = l as isize;
                continue;
            }
            let mut h = self
                .g
                .children(i)
                .iter()
                .map(|&c| hi[c] - 1)
                .min()
                .unwrap_or(self.horizon as isize - 1)
                .min(self.horizon as isize - 1);
            while h >= 0 && self.full(h as usize) {
                h -= 1;
            }
            hi[i] = h;
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if self.level[i].is_none() && (lo[i] as isize) > hi[i] {
                return None;
            }
            out.push(Frame { lo: lo[i], hi: hi[i].max(0) as usize });
        }
        Some(out)
    }

    fn open_levels(&self, lo: usize, hi: usize) -> usize {
        (lo..=hi).filter(|&l| !self.full(l)).count()
    }

    /// Change in distribution-graph energy when an instruction's frame shrinks.
    fn frame_force(&self, dg: &[f64], old: Frame, new_lo: usize, new_hi: usize) -> Option<f64> {
        let old_open = self.open_levels(old.lo, old.hi) as f64;
        let new_open = if new_lo > new_hi { 0 } else { self.open_levels(new_lo, new_hi) };
        if new_open == 0 {
            return None;
        }
        let new_open = new_open as f64;
        let mut f = 0.0;
        for l in old.lo..=old.hi {
            if self.full(l) {
                continue;
            }
            let before = 1.0 / old_open;
            let after = if l >= new_lo && l <= new_hi { 1.0 / new_open } else { 0.0 };
            f += dg[l] * (after - before);
        }
        Some(f)
    }

    fn solve(&mut self) -> Option<Vec<Option<usize>>> {
        let n = self.g.len();
        loop {
            if self.level.iter().all(Option::is_some) {
                return Some(self.level.clone());
            }
            let frames = match self.frames() {
                Some(f) => f,
                None => {
                    // widen by one level and re-spread; if that cannot help,
                    // the instruction is boxed in by assigned neighbours
                    if self.horizon >= self.limit {
                        return None;
                    }
                    self.horizon += 1;
                    self.count.push(0);
                    continue;
                }
            };
            let mut dg: Vec<f64> = self.count.iter().map(|&c| c as f64).collect();
            for i in 0..n {
                if self.level[i].is_some() {
                    continue;
                }
                let fr = frames[i];
                let p = 1.0 / self.open_levels(fr.lo, fr.hi) as f64;
                for l in fr.lo..=fr.hi {
                    if !self.full(l) {
                        dg[l] += p;
                    }
                }
            }

            let mut candidates: Vec<(i64, usize, usize, usize)> = Vec::new();
            let mut order: Vec<usize> = (0..n).filter(|&i| self.level[i].is_none()).collect();
            order.sort_by(|&a, &b| cmp_priority(self.g, a, b));
            for (rank, &i) in order.iter().enumerate() {
                let fr = frames[i];
                let p = 1.0 / self.open_levels(fr.lo, fr.hi) as f64;
                let mean: f64 = (fr.lo..=fr.hi).filter(|&l| !self.full(l)).map(|l| dg[l] * p).sum();
                'levels: for l in fr.lo..=fr.hi {
                    if self.full(l) {
                        continue;
                    }
                    let mut force = dg[l] - mean;
                    for &c in self.g.children(i) {
                        if self.level[c].is_some() {
                            continue;
                        }
                        let old = frames[c];
                        let mut lo = old.lo.max(l + 1);
                        while lo <= old.hi && self.full(lo) {
                            lo += 1;
                        }
                        match self.frame_force(&dg, old, lo, old.hi) {
                            Some(f) => force += f,
                            None => continue 'levels,
                        }
                    }
                    for &p in self.g.parents(i) {
                        if self.level[p].is_some() {
                            continue;
                        }
                        let old = frames[p];
                        let hi = old.hi.min(l.saturating_sub(1));
                        if l == 0 {
                            continue 'levels;
                        }
                        match self.frame_force(&dg, old, old.lo, hi) {
                            Some(f) => force += f,
                            None => continue 'levels,
                        }
                    }
                    let key = (force / FORCE_QUANTUM).round() as i64;
                    candidates.push((key, rank, l, i));
                }
            }
            // cheapest force first; the first one that leaves a completable state wins
            candidates.sort_unstable();
            let pick = candidates.iter().find(|&&(_, _, l, i)| self.completable_with(i, l)).copied();
            match pick {
                Some((_, _, l, i)) => {
                    self.level[i] = Some(l);
                    self.count[l] += 1;
                }
                None => {
                    if self.horizon >= self.limit {
                        return None;
                    }
                    self.horizon += 1;
                    self.count.push(0);
                }
            }
        }
    }

    /// Tentatively place `i` at `l` and check that every open instruction still
    /// has a level and that no window of levels is oversubscribed.
    fn completable_with(&mut self, i: usize, l: usize) -> bool {
        self.level[i] = Some(l);
        self.count[l] += 1;
        let ok = self.frames().is_some_and(|f| self.windows_fit(&f));
        self.level[i] = None;
        self.count[l] -= 1;
        ok
    }

    /// Interval Hall condition: instructions confined to `[a, b]` fit in its free slots.
    fn windows_fit(&self, frames: &[Frame]) -> bool {
        let h = self.horizon;
        let mut by_span = vec![vec![0usize; h]; h];
        for (i, f) in frames.iter().enumerate() {
            if self.level[i].is_none() {
                by_span[f.lo][f.hi] += 1;
            }
        }
        let free: Vec<usize> = self.count.iter().map(|&c| self.cap.saturating_sub(c)).collect();
        // inside[b] = instructions with lo >= a and hi == b, accumulated as a decreases
        let mut inside = vec![0usize; h];
        for a in (0..h).rev() {
            for b in a..h {
                inside[b] += by_span[a][b];
            }
            let (mut need, mut room) = (0, 0);
            for b in a..h {
                need += inside[b];
                room += free[b];
                if need > room {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FabricConfig;
    use crate::qasm::{parse, STEANE_ZERO_PREP};
    use crate::scheduler::{exact_oracle, preprocess, validate_schedule};

    fn prepared(src: &str) -> Qidg {
        let mut g = Qidg::analyze(&parse(src).unwrap(), &FabricConfig::default()).unwrap();
        preprocess(&mut g).unwrap();
        g
    }

    #[test]
    fn chain_takes_one_level_each() {
        let g = prepared("QUBIT a, 0\nH a\nX a\nT a\nS a\n");
        for cap in 1..4 {
            let s = fds_schedule(&g, cap, &LevelConstraints::none(4)).unwrap();
            assert_eq!(s.level, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn four_independent_with_cap_two() {
        let g = prepared("QUBIT a, 0\nQUBIT b, 0\nQUBIT c, 0\nQUBIT d, 0\nH a\nH b\nH c\nH d\n");
        let s = fds_schedule(&g, 2, &LevelConstraints::none(4)).unwrap();
        assert_eq!(s.num_levels, 2);
        assert_eq!(s.per_level_count, vec![2, 2]);
        assert_eq!(exact_oracle(&g, 2).unwrap(), 2);
    }

    #[test]
    fn steane_matches_oracle() {
        let g = prepared(STEANE_ZERO_PREP);
        for cap in 1..=5 {
            let s = fds_schedule(&g, cap, &LevelConstraints::none(g.len())).unwrap();
            assert!(validate_schedule(&g, &s).is_empty());
            assert_eq!(s.num_levels, exact_oracle(&g, cap).unwrap(), "cap {cap}");
        }
    }

    #[test]
    fn floors_push_levels_up() {
        let g = prepared("QUBIT a, 0\nQUBIT b, 0\nH a\nH b\nX a\n");
        let s = fds_schedule(&g, 2, &LevelConstraints::with_floors(vec![0, 3, 0])).unwrap();
        assert_eq!(s.level[1], 3);
        assert!(validate_schedule(&g, &s).is_empty());
    }

    #[test]
    fn pins_are_respected() {
        let g = prepared("QUBIT a, 0\nQUBIT b, 0\nH a\nH b\nX a\nX b\n");
        let cons = LevelConstraints { floors: vec![0, 2, 0, 0], pinned: vec![Some(0), None, None, None] };
        let s = fds_schedule(&g, 1, &cons).unwrap();
        assert_eq!(s.level[0], 0);
        assert!(s.level[1] >= 2);
        assert!(validate_schedule(&g, &s).is_empty());
        let bad = LevelConstraints { floors: vec![0; 4], pinned: vec![Some(1), None, Some(0), None] };
        assert!(matches!(fds_schedule(&g, 1, &bad), Err(SchedError::BadPin(_))));
    }

    #[test]
    fn list_schedule_is_valid() {
        let g = prepared(STEANE_ZERO_PREP);
        for cap in 1..=4 {
            let s = list_schedule(&g, cap, &LevelConstraints::none(g.len())).unwrap();
            assert!(validate_schedule(&g, &s).is_empty());
        }
    }

    #[test]
    fn zero_cap_rejected() {
        let g = prepared("QUBIT a, 0\nH a\n");
        assert_eq!(fds_schedule(&g, 0, &LevelConstraints::none(1)), Err(SchedError::ZeroCap));
    }

    #[test]
    fn deterministic() {
        let g = prepared(STEANE_ZERO_PREP);
        let a = fds_schedule(&g, 3, &LevelConstraints::none(g.len())).unwrap();
        let b = fds_schedule(&g, 3, &LevelConstraints::none(g.len())).unwrap();
        assert_eq!(a, b);
    }
}
