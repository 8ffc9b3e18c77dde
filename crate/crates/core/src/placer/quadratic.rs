//! Weighted quadratic wirelength: net list, sparse normal equations, and a
//! preconditioned conjugate-gradient solve per axis.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    /// Column coordinate.
    pub x: f64,
    /// Row coordinate.
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, o: Point) -> f64 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }

    pub fn dist2(self, o: Point) -> f64 {
        (self.x - o.x).powi(2) + (self.y - o.y).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pin {
    /// Index into the free-variable vector.
    Free(usize),
    Fixed(Point),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Net {
    pub a: Pin,
    pub b: Pin,
    pub weight: f64,
}

/// Two-pin nets over `num_free` movable points.
#[derive(Debug, Clone, Default)]
pub struct NetList {
    pub num_free: usize,
    pub nets: Vec<Net>,
}

impl NetList {
    pub fn new(num_free: usize) -> Self {
        Self { num_free, nets: Vec::new() }
    }

    pub fn connect(&mut self, a: Pin, b: Pin, weight: f64) {
        if weight > 0.0 && !matches!((a, b), (Pin::Fixed(_), Pin::Fixed(_))) {
            self.nets.push(Net { a, b, weight });
        }
    }

    /// `sum w * |p_a - p_b|^2`.
    pub fn objective(&self, free: &[Point]) -> f64 {
        let at = |p: Pin| match p {
            Pin::Free(i) => free[i],
            Pin::Fixed(q) => q,
        };
        self.nets.iter().map(|n| n.weight * at(n.a).dist2(at(n.b))).sum()
    }

    /// Free points whose connected component touches no fixed pin.
    pub fn floating(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.num_free).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut grounded = vec![false; self.num_free];
        for n in &self.nets {
            match (n.a, n.b) {
                (Pin::Free(i), Pin::Free(j)) => {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
                (Pin::Free(i), Pin::Fixed(_)) | (Pin::Fixed(_), Pin::Free(i)) => grounded[i] = true,
                _ => {}
            }
        }
        let mut root_grounded = vec![false; self.num_free];
        for i in 0..self.num_free {
            if grounded[i] {
                let r = find(&mut parent, i);
                root_grounded[r] = true;
            }
        }
        (0..self.num_free).filter(|&i| !root_grounded[find(&mut parent, i)]).collect()
    }

    /// Free components that touch no fixed pin get a weak pull toward `center`
    /// so the system stays positive definite.
    pub fn anchor_floating(&mut self, center: Point, weight: f64) {
        for i in self.floating() {
            self.nets.push(Net { a: Pin::Free(i), b: Pin::Fixed(center), weight });
        }
    }
}

/// Symmetric positive-definite system `A p = b` shared by both axes.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    diag: Vec<f64>,
    /// Off-diagonal entries per row, `(col, value)`.
    off: Vec<Vec<(usize, f64)>>,
    bx: Vec<f64>,
    by: Vec<f64>,
    singular: bool,
}

impl QuadraticSystem {
    pub fn build(nets: &NetList) -> Self {
        let n = nets.num_free;
        let mut diag = vec![0.0; n];
        let mut off: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
        for net in &nets.nets {
            let w = net.weight;
            match (net.a, net.b) {
                (Pin::Free(i), Pin::Free(j)) if i != j => {
                    diag[i] += w;
                    diag[j] += w;
                    off[i].push((j, -w));
                    off[j].push((i, -w));
                }
                (Pin::Free(_), Pin::Free(_)) => {}
                (Pin::Free(i), Pin::Fixed(p)) | (Pin::Fixed(p), Pin::Free(i)) => {
                    diag[i] += w;
                    bx[i] += w * p.x;
                    by[i] += w * p.y;
                }
                (Pin::Fixed(_), Pin::Fixed(_)) => {}
            }
        }
        for row in &mut off {
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            *row = merged;
        }
        let singular = !nets.floating().is_empty();
        Self { diag, off, bx, by, singular }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn mul(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..v.len() {
            let mut s = self.diag[i] * v[i];
            for &(j, a) in &self.off[i] {
                s += a * v[j];
            }
            out[i] = s;
        }
    }

    /// Jacobi-preconditioned CG to relative residual `tol`.
    fn cg(&self, b: &[f64], x: &mut [f64], tol: f64) -> Result<usize, SolveError> {
        let n = b.len();
        if self.singular || self.diag.iter().any(|&d| d <= 0.0) {
            return Err(SolveError::Singular);
        }
        // Coordinates are in well units, so an absolute floor of one is safe.
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let mut r = vec![0.0; n];
        self.mul(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = (0..n).map(|i| r[i] / self.diag[i]).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        let max_iter = 10 * n + 100;
        for it in 0..max_iter {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol * bnorm {
                return Ok(it);
            }
            self.mul(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(SolveError::Singular);
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(SolveError::NoConvergence)
    }

    /// Minimize the net objective starting from `init`.
    pub fn solve(&self, init: &[Point], tol: f64) -> Result<Vec<Point>, SolveError> {
        let mut xs: Vec<f64> = init.iter().map(|p| p.x).collect();
        let mut ys: Vec<f64> = init.iter().map(|p| p.y).collect();
        let (rx, ry) = rayon::join(|| self.cg(&self.bx, &mut xs, tol), || self.cg(&self.by, &mut ys, tol));
        rx?;
        ry?;
        Ok(xs.into_iter().zip(ys).map(|(x, y)| Point { x, y }).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("placement system is singular (a free instruction has no attachment)")]
    Singular,
    #[error("conjugate gradient did not converge")]
    NoConvergence,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(nets: &NetList) -> Vec<Point> {
        QuadraticSystem::build(nets).solve(&vec![Point::default(); nets.num_free], 1e-12).unwrap()
    }

    #[test]
    fn midpoint_of_two_fixed_parents() {
        let mut nets = NetList::new(1);
        nets.connect(Pin::Free(0), Pin::Fixed(Point::new(0.0, 0.0)), 1.0);
        nets.connect(Pin::Free(0), Pin::Fixed(Point::new(10.0, 0.0)), 1.0);
        let p = solve(&nets);
        assert!((p[0].x - 5.0).abs() < 1e-9 && p[0].y.abs() < 1e-9);
    }

    #[test]
    fn weighted_mean() {
        let mut nets = NetList::new(1);
        nets.connect(Pin::Free(0), Pin::Fixed(Point::new(0.0, 0.0)), 3.0);
        nets.connect(Pin::Free(0), Pin::Fixed(Point::new(8.0, 0.0)), 1.0);
        assert!((solve(&nets)[0].x - 2.0).abs() < 1e-9);
    }

    #[test]
    fn chain_between_fixed_ends_is_evenly_spaced() {
        let mut nets = NetList::new(3);
        nets.connect(Pin::Fixed(Point::new(0.0, 0.0)), Pin::Free(0), 1.0);
        nets.connect(Pin::Free(0), Pin::Free(1), 1.0);
        nets.connect(Pin::Free(1), Pin::Free(2), 1.0);
        nets.connect(Pin::Free(2), Pin::Fixed(Point::new(8.0, 4.0)), 1.0);
        let p = solve(&nets);
        for (k, q) in p.iter().enumerate() {
            assert!((q.x - 2.0 * (k + 1) as f64).abs() < 1e-9);
            assert!((q.y - (k + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn floating_component_needs_anchor() {
        let mut nets = NetList::new(2);
        nets.connect(Pin::Free(0), Pin::Free(1), 1.0);
        assert!(QuadraticSystem::build(&nets).solve(&[Point::default(); 2], 1e-9).is_err());
        nets.anchor_floating(Point::new(5.0, 5.0), 1e-3);
        let p = solve(&nets);
        assert!((p[0].x - 5.0).abs() < 1e-6 && (p[1].y - 5.0).abs() < 1e-6);
    }

    #[test]
    fn anchoring_skips_grounded_components() {
        let mut nets = NetList::new(2);
        nets.connect(Pin::Free(0), Pin::Free(1), 1.0);
        nets.connect(Pin::Free(1), Pin::Fixed(Point::new(1.0, 1.0)), 1.0);
        let before = nets.nets.len();
        nets.anchor_floating(Point::new(5.0, 5.0), 1e-3);
        assert_eq!(nets.nets.len(), before);
    }
}
