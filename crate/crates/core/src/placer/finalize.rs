//! Final assignment of one level's instructions to interaction wells.

use crate::fabric::{FabricGraph, WellId};

use super::quadratic::Point;

pub fn well_point(f: &FabricGraph, w: WellId) -> Point {
    let well = f.well(w);
    Point::new(well.col as f64, well.row as f64)
}

/// Greedy: all (instruction, well) pairs by Manhattan distance, each taken if
/// both sides are still free. Ties go to the earlier instruction in `items`,
/// then the lower well id. Returns one well per item.
pub fn finalize_level(items: &[Point], wells: &[(WellId, Point)]) -> Vec<WellId> {
    assert!(items.len() <= wells.len(), "more instructions than interaction wells on one level");
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(items.len() * wells.len());
    for (i, p) in items.iter().enumerate() {
        for (k, (_, q)) in wells.iter().enumerate() {
            pairs.push((p.manhattan(*q), i, k));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(wells[a.2].0.cmp(&wells[b.2].0)));
    let mut out: Vec<Option<WellId>> = vec![None; items.len()];
    let mut taken = vec![false; wells.len()];
    let mut left = items.len();
    for (_, i, k) in pairs {
        if left == 0 {
            break;
        }
        if out[i].is_none() && !taken[k] {
            out[i] = Some(wells[k].0);
            taken[k] = true;
            left -= 1;
        }
    }
    out.into_iter().map(Option::unwrap).collect()
}
