//! Static 3-d tree for exact nearest-neighbor queries.

use nalgebra::Point3;

/// Balanced kd-tree over a fixed point set. Queries return the nearest
/// point; among equidistant points the lowest index wins.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    // Implicit tree: `order[mid]` is the node of the slice `[lo, hi)`.
    order: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> KdTree {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0);
        KdTree {
            points: points.to_vec(),
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// `(index, squared distance)` of the nearest point, `None` if empty.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(q, 0, self.points.len(), &mut best);
        Some((best.1 as usize, best.0))
    }

    fn search(&self, q: &Point3<f64>, lo: usize, hi: usize, best: &mut (f64, u32)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let d2 = (p - q).norm_squared();
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.0 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(points: &[Point3<f64>], order: &mut [u32], axes: &mut [u8], _depth: usize) {
    if order.len() <= 1 {
        if let Some(a) = axes.first_mut() {
            *a = 0;
        }
        return;
    }
    // Split on the axis of largest spread.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (laxes, raxes) = axes.split_at_mut(mid);
    build(points, left, laxes, _depth + 1);
    build(points, &mut rest[1..], &mut raxes[1..], _depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3<f64>> = (0..500)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..500 {
            let q = Point3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(tree.nearest(&q).unwrap(), brute(&pts, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // Duplicates and a lattice full of equidistant candidates.
        let mut pts = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                pts.push(Point3::new(i as f64, j as f64, 0.0));
            }
        }
        pts.push(Point3::new(1.0, 1.0, 0.0));
        let tree = KdTree::new(&pts);
        let q = Point3::new(1.5, 1.5, 0.0);
        assert_eq!(tree.nearest(&q).unwrap().0, brute(&pts, &q).0);
        assert_eq!(tree.nearest(&Point3::new(1.0, 1.0, 0.0)).unwrap(), (5, 0.0));
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest(&Point3::origin()).is_none());
    }
}
