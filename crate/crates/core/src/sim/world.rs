//! Triangle worlds with a bounding-volume hierarchy for ray casting and
//! nearest-facet queries.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v: [Vector3<f64>; 3],
}

impl Triangle {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Self {
        Triangle { v: [a, b, c] }
    }

    pub fn normal(&self) -> Vector3<f64> {
        (self.v[1] - self.v[0]).cross(&(self.v[2] - self.v[0]))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.normal().norm()
    }

    fn centroid(&self) -> Vector3<f64> {
        (self.v[0] + self.v[1] + self.v[2]) / 3.0
    }

    /// Moller-Trumbore; distance along `dir` (unit) of the hit, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let e1 = self.v[1] - self.v[0];
        let e2 = self.v[2] - self.v[0];
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v[0];
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > 1e-9).then_some(t)
    }

    /// Closest point on the triangle to `p` (Ericson, Real-Time Collision
    /// Detection, 5.1.5).
    pub fn closest_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let [a, b, c] = self.v;
        let ab = b - a;
        let ac = c - a;
        let ap = p - a;
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        if d1 <= 0.0 && d2 <= 0.0 {
            return a;
        }
        let bp = p - b;
        let d3 = ab.dot(&bp);
        let d4 = ac.dot(&bp);
        if d3 >= 0.0 && d4 <= d3 {
            return b;
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            return a + ab * (d1 / (d1 - d3));
        }
        let cp = p - c;
        let d5 = ab.dot(&cp);
        let d6 = ac.dot(&cp);
        if d6 >= 0.0 && d5 <= d6 {
            return c;
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            return a + ac * (d2 / (d2 - d6));
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
        }
        let denom = 1.0 / (va + vb + vc);
        a + ab * (vb * denom) + ac * (vc * denom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Slab test; entry distance if the ray meets the box before `limit`.
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, limit: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = limit;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0 * inf keeps the previous bound
            t0 = if lo > t0 { lo } else { t0 };
            t1 = if hi < t1 { hi } else { t1 };
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vector3::zeros());
        d.norm_squared()
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

const LEAF_SIZE: usize = 4;

/// Facet soup with a static median-split BVH, rebuilt on every edit.
#[derive(Debug, Clone, Default)]
pub struct World {
    triangles: Vec<Triangle>,
    order: Vec<usize>,
    nodes: Vec<(Aabb, Node)>,
}

impl World {
    pub fn new(triangles: Vec<Triangle>) -> Result<Self> {
        for t in &triangles {
            if t.v.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFinite("world facet"));
            }
            if t.area() <= 1e-12 {
                return Err(Error::InvalidArgument("degenerate world facet".into()));
            }
        }
        let mut w = World {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        if !w.triangles.is_empty() {
            w.build(0, w.triangles.len());
        }
        Ok(w)
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut centroids = Aabb::empty();
        for &i in &self.order[start..end] {
            for v in &self.triangles[i].v {
                bounds.grow(v);
            }
            centroids.grow(&self.triangles[i].centroid());
        }
        let id = self.nodes.len();
        self.nodes.push((bounds, Node::Leaf { start, end }));
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (centroids.max - centroids.min).imax();
        let mid = (start + end) / 2;
        let tris = &self.triangles;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            tris[a].centroid()[axis]
                .total_cmp(&tris[b].centroid()[axis])
                .then(a.cmp(&b))
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].1 = Node::Inner { left, right };
        id
    }

    /// Nearest facet hit along the unit direction `dir` within `max_range`.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best = max_range;
        let mut found = false;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let (bounds, node) = &self.nodes[n];
            if bounds.hit(origin, &inv, best).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if let Some(t) = self.triangles[i].intersect(origin, dir) {
                            if t <= best {
                                best = t;
                                found = true;
                            }
                        }
                    }
                }
                Node::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        found.then_some(best)
    }

    /// Euclidean distance from `p` to the nearest facet (infinite if empty).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let (bounds, node) = &self.nodes[n];
            if bounds.dist2(p) >= best {
                continue;
            }
            match *node {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d = (self.triangles[i].closest_point(p) - p).norm_squared();
                        best = best.min(d);
                    }
                }
                Node::Inner { left, right } => {
                    let dl = self.nodes[left].0.dist2(p);
                    let dr = self.nodes[right].0.dist2(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Accumulates facets of analytic primitives.
#[derive(Debug, Clone, Default)]
pub struct WorldBuilder {
    triangles: Vec<Triangle>,
}

impl WorldBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triangle(mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Self {
        self.triangles.push(Triangle::new(a, b, c));
        self
    }

    /// Quad `a b c d` in winding order, split along `a c`.
    pub fn quad(self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>) -> Self {
        self.triangle(a, b, c).triangle(a, c, d)
    }

    /// Square patch of half-width `half` centred at `center` with normal `n`.
    pub fn plane(self, center: Vector3<f64>, n: Vector3<f64>, half: f64) -> Self {
        let n = n.normalize();
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = n.cross(&seed).normalize() * half;
        let v = n.cross(&u);
        self.quad(center - u - v, center + u - v, center + u + v, center - u + v)
    }

    /// Axis-aligned box surface between `min` and `max`.
    pub fn cuboid(self, min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let c = |i: usize| {
            Vector3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        self.quad(c(0), c(2), c(3), c(1))
            .quad(c(4), c(5), c(7), c(6))
            .quad(c(0), c(1), c(5), c(4))
            .quad(c(2), c(6), c(7), c(3))
            .quad(c(0), c(4), c(6), c(2))
            .quad(c(1), c(3), c(7), c(5))
    }

    /// Latitude-longitude tessellated sphere.
    pub fn sphere(mut self, center: Vector3<f64>, radius: f64, segments: usize) -> Self {
        let segments = segments.max(3);
        let stacks = segments / 2 + 1;
        let point = |i: usize, j: usize| {
            let theta = std::f64::consts::PI * i as f64 / stacks as f64;
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            center
                + radius
                    * Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
        };
        for i in 0..stacks {
            for j in 0..segments {
                let (a, b) = (point(i, j), point(i + 1, j));
                let (c, d) = (point(i + 1, j + 1), point(i, j + 1));
                if i > 0 {
                    self.triangles.push(Triangle::new(a, b, d));
                }
                if i + 1 < stacks {
                    self.triangles.push(Triangle::new(b, c, d));
                }
            }
        }
        self
    }

    pub fn build(self) -> Result<World> {
        World::new(self.triangles)
    }
}

/// A single square wall `x = distance`, 100 m across.
pub fn plane_world(distance: f64) -> Result<World> {
    WorldBuilder::new()
        .plane(Vector3::new(distance, 0.0, 0.0), -Vector3::x(), 50.0)
        .build()
}

/// Closed 10 m x 8 m x 3 m room with its floor at `z = 0`, seen from inside,
/// plus two blocks that break its symmetry.
pub fn room_world() -> Result<World> {
    WorldBuilder::new()
        .cuboid(Vector3::new(-5.0, -4.0, 0.0), Vector3::new(5.0, 4.0, 3.0))
        .cuboid(Vector3::new(1.5, 0.8, 0.0), Vector3::new(2.7, 2.0, 1.2))
        .cuboid(Vector3::new(-3.2, -2.6, 0.0), Vector3::new(-2.6, -2.0, 2.0))
        .build()
}

/// Hallway circuit around a central block: ground, outer walls, the block,
/// and pillars that give the scan matcher corners all the way round.
pub fn loop_world() -> Result<World> {
    let mut b = WorldBuilder::new()
        .quad(
            Vector3::new(-14.0, -10.0, 0.0),
            Vector3::new(14.0, -10.0, 0.0),
            Vector3::new(14.0, 10.0, 0.0),
            Vector3::new(-14.0, 10.0, 0.0),
        )
        // outer walls
        .cuboid(Vector3::new(-13.0, -9.0, 0.0), Vector3::new(-12.6, 9.0, 3.0))
        .cuboid(Vector3::new(12.6, -9.0, 0.0), Vector3::new(13.0, 9.0, 3.0))
        .cuboid(Vector3::new(-12.6, -9.0, 0.0), Vector3::new(12.6, -8.6, 3.0))
        .cuboid(Vector3::new(-12.6, 8.6, 0.0), Vector3::new(12.6, 9.0, 3.0))
        // central block
        .cuboid(Vector3::new(-4.5, -2.0, 0.0), Vector3::new(4.5, 2.0, 2.5));
    let pillars = [
        (-10.5, -7.0),
        (-6.0, -7.2),
        (-1.0, -7.0),
        (4.0, -7.3),
        (9.0, -7.0),
        (11.0, -3.0),
        (10.8, 2.5),
        (9.5, 7.0),
        (5.0, 7.2),
        (0.5, 7.0),
        (-5.0, 7.3),
        (-9.5, 7.0),
        (-11.0, 3.0),
        (-10.8, -2.0),
    ];
    for (k, &(x, y)) in pillars.iter().enumerate() {
        let h = 0.2 + 0.05 * (k % 3) as f64;
        let top = 1.6 + 0.3 * (k % 4) as f64;
        b = b.cuboid(Vector3::new(x - h, y - h, 0.0), Vector3::new(x + h, y + h, top));
    }
    b.build()
}
