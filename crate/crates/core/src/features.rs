//! Scan-line smoothness, edge/planar feature selection and motion
//! compensation of LiDAR frames.

use nalgebra::Vector3;

use crate::error::Result;
use crate::exec::Exec;
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub position: Vector3<f64>,
    pub ring: u32,
    /// Emission time as a fraction of the scan period.
    pub rel_time: f64,
}

impl ScanPoint {
    pub fn new(position: Vector3<f64>, ring: u32, rel_time: f64) -> Self {
        ScanPoint {
            position,
            ring,
            rel_time,
        }
    }
}

/// A scan stamped at its end time. Points are grouped by ring and ordered by
/// azimuth within a ring.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarFrame {
    pub stamp: f64,
    pub points: Vec<ScanPoint>,
}

impl LidarFrame {
    pub fn new(stamp: f64, points: Vec<ScanPoint>) -> Self {
        LidarFrame { stamp, points }
    }

    /// Contiguous runs of points sharing a ring index.
    pub fn rings(&self) -> Vec<&[ScanPoint]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.points.len() {
            if i == self.points.len() || self.points[i].ring != self.points[start].ring {
                if i > start {
                    out.push(&self.points[start..i]);
                }
                start = i;
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub edges: Vec<ScanPoint>,
    pub planar: Vec<ScanPoint>,
}

impl FeatureSet {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planar.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> FeatureSet {
        let tf = |p: &ScanPoint| ScanPoint {
            position: pose.transform(&p.position),
            ..*p
        };
        FeatureSet {
            edges: self.edges.iter().map(tf).collect(),
            planar: self.planar.iter().map(tf).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub window: usize,
    pub sectors: usize,
    pub edges_per_sector: usize,
    pub planar_per_sector: usize,
    pub edge_threshold: f64,
    pub planar_threshold: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub exec: Exec,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 5,
            sectors: 6,
            edges_per_sector: 2,
            planar_per_sector: 4,
            edge_threshold: 0.1,
            planar_threshold: 0.1,
            min_range: 1.0,
            max_range: 100.0,
            exec: Exec::default(),
        }
    }
}

/// LOAM smoothness `|sum_j (x_i - x_j)| / (2 w |x_i|)` over the `w`
/// neighbours on each side. `None` marks boundary and degenerate points.
pub fn compute_curvature(ring: &[ScanPoint], window: usize) -> Vec<Option<f64>> {
    let n = ring.len();
    let mut out = vec![None; n];
    if window == 0 || n < 2 * window + 1 {
        return out;
    }
    for i in window..n - window {
        let xi = ring[i].position;
        let range = xi.norm();
        if range <= f64::EPSILON {
            continue;
        }
        let mut sum = Vector3::zeros();
        let mut spread = 0.0;
        for j in i - window..=i + window {
            if j != i {
                let d = xi - ring[j].position;
                sum += d;
                spread += d.norm();
            }
        }
        if spread == 0.0 {
            continue;
        }
        out[i] = Some(sum.norm() / (2.0 * window as f64 * range));
    }
    out
}

fn ring_features(ring: &[ScanPoint], cfg: &FeatureConfig) -> (Vec<ScanPoint>, Vec<ScanPoint>) {
    let pts: Vec<ScanPoint> = ring
        .iter()
        .copied()
        .filter(|p| {
            let r = p.position.norm();
            r >= cfg.min_range && r <= cfg.max_range
        })
        .collect();
    let n = pts.len();
    let curv = compute_curvature(&pts, cfg.window);
    let mut blocked = vec![false; n];

    // Depth discontinuities: the far side of an occlusion boundary is not a
    // real edge.
    let w = cfg.window;
    for i in 0..n.saturating_sub(1) {
        let (ri, rj) = (pts[i].position.norm(), pts[i + 1].position.norm());
        let gap = (pts[i + 1].position - pts[i].position).norm();
        if gap > 0.1 * ri.min(rj) {
            if ri > rj {
                blocked[i.saturating_sub(w)..=i].fill(true);
            } else {
                blocked[i + 1..(i + 2 + w).min(n)].fill(true);
            }
        }
    }

    let mut edges = Vec::new();
    let mut planar = Vec::new();
    if n < 2 * w + 1 || cfg.sectors == 0 {
        return (edges, planar);
    }
    let (lo, hi) = (w, n - w);
    let mut picked = vec![false; n];
    let mut is_edge = vec![false; n];
    let mut is_planar = vec![false; n];
    let mut corner = vec![Vector3::zeros(); n];
    for s in 0..cfg.sectors {
        let a = lo + (hi - lo) * s / cfg.sectors;
        let b = lo + (hi - lo) * (s + 1) / cfg.sectors;
        let mut order: Vec<(usize, f64)> = (a..b)
            .filter(|&i| !blocked[i])
            .filter_map(|i| curv[i].map(|c| (i, c)))
            .collect();
        order.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));

        let suppress = |i: usize, picked: &mut Vec<bool>| {
            picked[i.saturating_sub(w)..(i + w + 1).min(n)].fill(true);
        };
        let mut count = 0;
        for &(i, c) in order.iter().rev() {
            if count >= cfg.edges_per_sector || c <= cfg.edge_threshold {
                break;
            }
            if picked[i] {
                continue;
            }
            // only creases with both faces visible are kept; silhouette
            // points cannot be located better than a whole sample step
            if let Some(x) = refine_corner(&pts, i, w) {
                corner[i] = x;
                is_edge[i] = true;
                suppress(i, &mut picked);
                count += 1;
            }
        }
        let mut count = 0;
        for &(i, c) in order.iter() {
            if count >= cfg.planar_per_sector || c >= cfg.planar_threshold {
                break;
            }
            if !picked[i] {
                is_planar[i] = true;
                suppress(i, &mut picked);
                count += 1;
            }
        }
    }
    for i in 0..n {
        if is_edge[i] {
            edges.push(ScanPoint {
                position: corner[i],
                ..pts[i]
            });
        } else if is_planar[i] {
            planar.push(pts[i]);
        }
    }
    (edges, planar)
}

/// Sub-sample corner location for the edge point `i`: the closest approach
/// of the lines through the `w` neighbours on either side. The sampled
/// point itself lies up to half an azimuth step from the crease, on a side
/// that depends on the viewpoint; the intersection does not. `None` when
/// either side is not straight, the sides are nearly parallel, or the
/// result lands farther than one sample step from the point.
fn refine_corner(pts: &[ScanPoint], i: usize, w: usize) -> Option<Vector3<f64>> {
    if w < 2 || i < w || i + w >= pts.len() {
        return None;
    }
    // both neighbours must continue their side's sampling: a larger step
    // means a depth jump, and the "corner" would float in free space
    let spacing = |range: std::ops::Range<usize>| {
        pts[range.clone()]
            .windows(2)
            .map(|p| (p[1].position - p[0].position).norm())
            .fold(0.0, f64::max)
    };
    let limit = 3.0 * spacing(i - w..i).max(spacing(i + 1..i + w + 1));
    let x_i = pts[i].position;
    let step = (x_i - pts[i - 1].position)
        .norm()
        .max((pts[i + 1].position - x_i).norm());
    if step > limit {
        return None;
    }
    let side = |range: std::ops::Range<usize>| {
        let v: Vec<Vector3<f64>> = pts[range].iter().map(|p| p.position).collect();
        let (c, d) = crate::registration::fit_line(&v)?;
        // a side that wraps around another corner is not a line
        let bend = v.iter().map(|p| (p - c).cross(&d).norm()).fold(0.0, f64::max);
        (bend <= step).then_some((c, d))
    };
    let (a, u) = side(i - w..i)?;
    let (c, v) = side(i + 1..i + w + 1)?;
    let uv = u.dot(&v);
    let denom = 1.0 - uv * uv;
    if denom < 1e-3 {
        return None;
    }
    let r = a - c;
    let (ru, rv) = (r.dot(&u), r.dot(&v));
    let s = (uv * rv - ru) / denom;
    let t = (rv - uv * ru) / denom;
    let (p, q) = (a + s * u, c + t * v);
    let x = 0.5 * (p + q);
    ((p - q).norm() <= step && (x - x_i).norm() <= step).then_some(x)
}

/// Selects edge (sharp) and planar (smooth) points per ring and sector.
pub fn extract_features(frame: &LidarFrame, cfg: &FeatureConfig) -> FeatureSet {
    let rings = frame.rings();
    let per_ring = cfg.exec.map(&rings, |r| ring_features(r, cfg));
    let mut out = FeatureSet::default();
    for (e, p) in per_ring {
        out.edges.extend(e);
        out.planar.extend(p);
    }
    out
}

/// Re-expresses every point in the sensor frame at the scan end time:
/// `p' = T(t_end)^-1 * T(t_point) * p`. `motion` maps absolute time to sensor
/// pose and must cover `[stamp - period, stamp]`.
pub fn deskew<F>(frame: &LidarFrame, scan_period: f64, motion: F, exec: Exec) -> Result<LidarFrame>
where
    F: Fn(f64) -> Result<Pose> + Sync + Send,
{
    let end_inv = motion(frame.stamp)?.inverse();
    let moved = exec.map(&frame.points, |p| -> Result<ScanPoint> {
        let t = frame.stamp - scan_period * (1.0 - p.rel_time);
        let rel = end_inv * motion(t)?;
        Ok(ScanPoint::new(rel.transform(&p.position), p.ring, 1.0))
    });
    let points = moved.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LidarFrame::new(frame.stamp, points))
}
