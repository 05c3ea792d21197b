//! Static 3-d tree with exact k-nearest-neighbour queries.

use nalgebra::Vector3;

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Permutation of point indices laid out as an implicit balanced tree:
    /// the node of `[lo, hi)` is at `(lo + hi) / 2`.
    order: Vec<usize>,
    axes: Vec<u8>,
}

/// A neighbour: index into the build slice and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            order: (0..n).collect(),
            axes: vec![0; n],
            points,
        };
        tree.split(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    fn split(&mut self, lo: usize, hi: usize) {
        if hi - lo <= 1 {
            return;
        }
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.split(lo, mid);
        self.split(mid + 1, hi);
    }

    /// The `k` nearest points, sorted by distance then index.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(query, k, 0, self.points.len(), &mut best);
        }
        best
    }

    fn worst(best: &[Neighbor], k: usize) -> f64 {
        if best.len() < k {
            f64::INFINITY
        } else {
            best[best.len() - 1].dist2
        }
    }

    fn search(&self, q: &Vector3<f64>, k: usize, lo: usize, hi: usize, best: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let cand = Neighbor {
            index: idx,
            dist2: (p - q).norm_squared(),
        };
        let pos = best.partition_point(|n| {
            n.dist2 < cand.dist2 || (n.dist2 == cand.dist2 && n.index < cand.index)
        });
        if pos < k {
            best.insert(pos, cand);
            best.truncate(k);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, near.0, near.1, best);
        if diff * diff <= Self::worst(best, k) {
            self.search(q, k, far.0, far.1, best);
        }
    }
}
