//! Per-level rough legalization: spread the instructions of one level so no
//! bin holds more of them than it has interaction wells.

use crate::fabric::FabricGraph;

use super::quadratic::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// A rectangular array of bins with per-bin capacities.
pub trait BinGrid {
    /// `(rows, cols)`.
    fn shape(&self) -> (usize, usize);
    fn capacity(&self, row: usize, col: usize) -> usize;
    fn region(&self, row: usize, col: usize) -> Rect;
    fn bin_of(&self, p: Point) -> (usize, usize);
}

/// Equal-sized bins.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBins {
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
    caps: Vec<usize>,
}

impl UniformBins {
    pub fn new(rows: usize, cols: usize, width: f64, height: f64, caps: Vec<usize>) -> Self {
        assert_eq!(caps.len(), rows * cols);
        Self { rows, cols, width, height, caps }
    }

    /// One bin per template, holding that template's interaction wells.
    pub fn from_fabric(f: &FabricGraph) -> Self {
        let cfg = f.config();
        let n = cfg.ulb_n;
        let mut caps = vec![0; n * n];
        for &w in f.interaction_wells() {
            let (r, c) = f.tile_of(w);
            caps[r * n + c] += 1;
        }
        Self::new(n, n, cfg.template_cols as f64, cfg.template_rows as f64, caps)
    }
}

impl BinGrid for UniformBins {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn capacity(&self, row: usize, col: usize) -> usize {
        self.caps[row * self.cols + col]
    }
    fn region(&self, row: usize, col: usize) -> Rect {
        Rect {
            x0: col as f64 * self.width,
            x1: (col + 1) as f64 * self.width,
            y0: row as f64 * self.height,
            y1: (row + 1) as f64 * self.height,
        }
    }
    fn bin_of(&self, p: Point) -> (usize, usize) {
        let c = (p.x / self.width).floor().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = (p.y / self.height).floor().clamp(0.0, (self.rows - 1) as f64) as usize;
        (r, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("{count} instructions exceed the {capacity} interaction wells")]
pub struct Overcapacity {
    pub count: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy)]
struct Window {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

/// Spread `points` (all from one level) until every bin is within capacity.
/// Points in bins that are already legal and outside every expanded window
/// keep their coordinates.
pub fn rough_legalize(points: &[Point], bins: &impl BinGrid) -> Result<Vec<Point>, Overcapacity> {
    let (rows, cols) = bins.shape();
    let capacity: usize = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| bins.capacity(r, c)).sum();
    if points.len() > capacity {
        return Err(Overcapacity { count: points.len(), capacity });
    }
    let mut pts = points.to_vec();
    loop {
        let mut count = vec![0usize; rows * cols];
        for p in &pts {
            let (r, c) = bins.bin_of(*p);
            count[r * cols + c] += 1;
        }
        let Some(over) = (0..rows * cols).find(|&k| count[k] > bins.capacity(k / cols, k % cols)) else {
            return Ok(pts);
        };
        let (r, c) = (over / cols, over % cols);
        let mut w = Window { r0: r, r1: r + 1, c0: c, c1: c + 1 };
        loop {
            let inside = members(&pts, bins, w);
            if window_capacity(bins, w) >= inside.len() {
                spread(&mut pts, bins, w, inside);
                break;
            }
            w = Window { r0: w.r0.saturating_sub(1), r1: (w.r1 + 1).min(rows), c0: w.c0.saturating_sub(1), c1: (w.c1 + 1).min(cols) };
        }
    }
}

fn members(pts: &[Point], bins: &impl BinGrid, w: Window) -> Vec<usize> {
    (0..pts.len())
        .filter(|&i| {
            let (r, c) = bins.bin_of(pts[i]);
            (w.r0..w.r1).contains(&r) && (w.c0..w.c1).contains(&c)
        })
        .collect()
}

fn window_capacity(bins: &impl BinGrid, w: Window) -> usize {
    (w.r0..w.r1).flat_map(|r| (w.c0..w.c1).map(move |c| (r, c))).map(|(r, c)| bins.capacity(r, c)).sum()
}

/// Capacity-proportional recursive bisection, order-preserving along each cut.
fn spread(pts: &mut [Point], bins: &impl BinGrid, w: Window, mut idx: Vec<usize>) {
    if w.r1 - w.r0 == 1 && w.c1 - w.c0 == 1 {
        let reg = bins.region(w.r0, w.c0);
        let eps = 1e-6;
        for i in idx {
            pts[i].x = pts[i].x.clamp(reg.x0, reg.x1 - eps);
            pts[i].y = pts[i].y.clamp(reg.y0, reg.y1 - eps);
        }
        return;
    }
    let by_x = w.c1 - w.c0 >= w.r1 - w.r0;
    let (lo, hi) = if by_x {
        let m = (w.c0 + w.c1) / 2;
        (Window { c1: m, ..w }, Window { c0: m, ..w })
    } else {
        let m = (w.r0 + w.r1) / 2;
        (Window { r1: m, ..w }, Window { r0: m, ..w })
    };
    let (cap_lo, cap_hi) = (window_capacity(bins, lo), window_capacity(bins, hi));
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (pts[a], pts[b]);
        let (ka, kb) = if by_x { ((pa.x, pa.y), (pb.x, pb.y)) } else { ((pa.y, pa.x), (pb.y, pb.x)) };
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    let n = idx.len();
    let total = (cap_lo + cap_hi).max(1);
    let share = ((n * cap_lo) as f64 / total as f64).round() as usize;
    let k = share.clamp(n.saturating_sub(cap_hi), cap_lo.min(n));
    let right = idx.split_off(k);
    // points crossing the cut are pulled to its near side
    if by_x {
        let cut = bins.region(lo.r0, lo.c1 - 1).x1;
        for &i in &idx {
            pts[i].x = pts[i].x.min(cut - 1e-6);
        }
        for &i in &right {
            pts[i].x = pts[i].x.max(cut);
        }
    } else {
        let cut = bins.region(lo.r1 - 1, lo.c0).y1;
        for &i in &idx {
            pts[i].y = pts[i].y.min(cut - 1e-6);
        }
        for &i in &right {
            pts[i].y = pts[i].y.max(cut);
        }
    }
    spread(pts, bins, lo, idx);
    spread(pts, bins, hi, right);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occupancy(pts: &[Point], bins: &UniformBins) -> Vec<usize> {
        let (rows, cols) = bins.shape();
        let mut count = vec![0; rows * cols];
        for p in pts {
            let (r, c) = bins.bin_of(*p);
            count[r * cols + c] += 1;
        }
        count
    }

    #[test]
    fn eight_in_a_four_bin_row() {
        let bins = UniformBins::new(1, 4, 10.0, 10.0, vec![2; 4]);
        // all in bin 0, distinct x so order is well defined
        let pts: Vec<Point> = (0..8).map(|k| Point::new(1.0 + k as f64 * 0.5, 5.0)).collect();
        let out = rough_legalize(&pts, &bins).unwrap();
        assert_eq!(occupancy(&out, &bins), vec![2, 2, 2, 2]);
        for w in out.windows(2) {
            assert!(w[0].x <= w[1].x);
        }
    }

    #[test]
    fn two_on_one_single_capacity_bin_separate() {
        let bins = UniformBins::new(1, 3, 10.0, 10.0, vec![1; 3]);
        let pts = vec![Point::new(15.0, 5.0), Point::new(15.5, 5.0)];
        let out = rough_legalize(&pts, &bins).unwrap();
        let occ = occupancy(&out, &bins);
        assert!(occ.iter().all(|&c| c <= 1));
        let (b0, b1) = (bins.bin_of(out[0]).1, bins.bin_of(out[1]).1);
        assert_eq!(b0.abs_diff(b1), 1);
    }

    #[test]
    fn legal_input_is_untouched() {
        let bins = UniformBins::new(2, 2, 10.0, 10.0, vec![1; 4]);
        let pts = vec![Point::new(1.0, 1.0), Point::new(12.0, 3.0), Point::new(4.0, 17.0)];
        assert_eq!(rough_legalize(&pts, &bins).unwrap(), pts);
    }

    #[test]
    fn overcapacity_reported() {
        let bins = UniformBins::new(1, 2, 10.0, 10.0, vec![1, 1]);
        let pts = vec![Point::default(); 3];
        assert_eq!(rough_legalize(&pts, &bins), Err(Overcapacity { count: 3, capacity: 2 }));
    }

    #[test]
    fn zero_capacity_bins_are_skipped() {
        let bins = UniformBins::new(1, 3, 10.0, 10.0, vec![0, 2, 0]);
        let pts = vec![Point::new(1.0, 1.0), Point::new(25.0, 1.0)];
        let out = rough_legalize(&pts, &bins).unwrap();
        assert_eq!(occupancy(&out, &bins), vec![0, 2, 0]);
    }
}
