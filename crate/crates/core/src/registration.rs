//! Edge/plane feature registration against a local map.
//!
//! Pose increments are left-multiplied, `T <- exp(dxi) * T`, so the Jacobian
//! of a world point `x = T p` is `[I, -x^]` under the `[rho, phi]` ordering.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, RowVector6, SymmetricEigen, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{FeatureSet, ScanPoint};
use crate::geometry::{hat3, Pose, Twist};
use crate::kdtree::KdTree;

/// Point-to-line distance `|(x - a) x (x - b)| / |a - b|`.
pub fn edge_residual(x: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64> {
    let len = (a - b).norm();
    if len <= 1e-6 {
        return Err(Error::Degenerate("coincident line anchors"));
    }
    Ok((x - a).cross(&(x - b)).norm() / len)
}

/// Signed point-to-plane distance for coefficients `(pa, pb, pc, pd)`.
pub fn plane_residual(x: &Vector3<f64>, coeffs: &[f64; 4]) -> Result<f64> {
    let n = Vector3::new(coeffs[0], coeffs[1], coeffs[2]);
    let norm = n.norm();
    if norm <= f64::EPSILON {
        return Err(Error::Degenerate("zero plane normal"));
    }
    Ok((n.dot(x) + coeffs[3]) / norm)
}

/// Smallest accepted ratio of the second to the first principal variance of
/// plane support; thinner supports (points along one scan ring) leave the
/// normal poorly determined.
pub const PLANE_SPREAD_RATIO: f64 = 1e-2;

/// Least-squares plane through `points`, normalized so the normal has unit
/// length. Rejected when the points are (nearly) collinear or any point lies
/// farther than `max_deviation` from the fit.
pub fn fit_plane(points: &[Vector3<f64>], max_deviation: f64) -> Result<[f64; 4]> {
    if points.len() < 3 {
        return Err(Error::Degenerate("plane fit needs three points"));
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid, large) = (
        eig.eigenvalues[idx[0]],
        eig.eigenvalues[idx[1]],
        eig.eigenvalues[idx[2]],
    );
    if !(large > 0.0) || mid <= PLANE_SPREAD_RATIO * large {
        return Err(Error::Degenerate("collinear plane support"));
    }
    debug_assert!(small <= mid);
    let mut n: Vector3<f64> = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    // deterministic sign: largest component positive
    if n[n.iamax()] < 0.0 {
        n = -n;
    }
    let coeffs = [n.x, n.y, n.z, -n.dot(&centroid)];
    for p in points {
        if (n.dot(p) + coeffs[3]).abs() > max_deviation {
            return Err(Error::Degenerate("plane support not flat"));
        }
    }
    Ok(coeffs)
}

/// Edge feature `source` (sensor frame) matched to the world line `a`-`b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCorrespondence {
    pub source: Vector3<f64>,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

/// Planar feature `source` (sensor frame) matched to a world plane with unit
/// normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCorrespondence {
    pub source: Vector3<f64>,
    pub coeffs: [f64; 4],
}

impl EdgeCorrespondence {
    pub fn evaluate(&self, pose: &Pose) -> (f64, RowVector6<f64>) {
        let x = pose.transform(&self.source);
        let ab = self.b - self.a;
        let len = ab.norm();
        let c = (x - self.a).cross(&(x - self.b));
        let cn = c.norm();
        let r = cn / len;
        if cn <= 1e-15 {
            return (r, RowVector6::zeros());
        }
        // d c / d x = (b - a)^
        let grad = (c / cn).transpose() * hat3(&ab) / len;
        (r, point_jacobian(&grad, &x))
    }
}

impl PlaneCorrespondence {
    pub fn evaluate(&self, pose: &Pose) -> (f64, RowVector6<f64>) {
        let x = pose.transform(&self.source);
        let n = Vector3::new(self.coeffs[0], self.coeffs[1], self.coeffs[2]);
        (n.dot(&x) + self.coeffs[3], point_jacobian(&n.transpose(), &x))
    }
}

/// Chains a residual gradient w.r.t. the world point through `[I, -x^]`.
fn point_jacobian(grad: &nalgebra::RowVector3<f64>, x: &Vector3<f64>) -> RowVector6<f64> {
    let mut j = RowVector6::zeros();
    j.fixed_columns_mut::<3>(0).copy_from(grad);
    j.fixed_columns_mut::<3>(3).copy_from(&(-grad * hat3(x)));
    j
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub edges: Vec<EdgeCorrespondence>,
    pub planes: Vec<PlaneCorrespondence>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn evaluate_all(&self, pose: &Pose, exec: Exec) -> Vec<(f64, RowVector6<f64>)> {
        let mut out = exec.map(&self.edges, |c| c.evaluate(pose));
        out.extend(exec.map(&self.planes, |c| c.evaluate(pose)));
        out
    }

    /// Stacked residuals, edges first.
    pub fn residuals(&self, pose: &Pose) -> DVector<f64> {
        let v = self.evaluate_all(pose, Exec::Sequential);
        DVector::from_iterator(v.len(), v.iter().map(|e| e.0))
    }

    /// Stacked analytic Jacobian w.r.t. a left pose increment.
    pub fn jacobian(&self, pose: &Pose) -> DMatrix<f64> {
        let v = self.evaluate_all(pose, Exec::Sequential);
        let mut j = DMatrix::zeros(v.len(), 6);
        for (i, (_, row)) in v.iter().enumerate() {
            j.row_mut(i).copy_from(row);
        }
        j
    }
}

/// World-frame feature points indexed for nearest-neighbour search.
#[derive(Debug, Clone, Default)]
pub struct FeatureMap {
    edges: Vec<ScanPoint>,
    planar: Vec<ScanPoint>,
    edge_index: KdTree,
    planar_index: KdTree,
}

impl FeatureMap {
    pub fn new(edges: Vec<ScanPoint>, planar: Vec<ScanPoint>) -> Self {
        let edge_index = KdTree::build(edges.iter().map(|p| p.position).collect());
        let planar_index = KdTree::build(planar.iter().map(|p| p.position).collect());
        FeatureMap {
            edges,
            planar,
            edge_index,
            planar_index,
        }
    }

    pub fn from_features(f: &FeatureSet) -> Self {
        Self::new(f.edges.clone(), f.planar.clone())
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planar.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn planar_count(&self) -> usize {
        self.planar.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub huber: f64,
    pub max_match_distance: f64,
    pub plane_neighbors: usize,
    pub plane_max_deviation: f64,
    pub edge_candidates: usize,
    /// Correspondences whose residual at the current estimate exceeds this
    /// are dropped (e.g. points matched across a corner onto the wrong face).
    pub max_residual: f64,
    /// Smallest accepted ratio of min to max eigenvalue of `J^T J`.
    pub degeneracy_ratio: f64,
    pub step_tolerance: f64,
    pub exec: Exec,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iterations: 30,
            initial_damping: 1e-4,
            huber: 0.1,
            max_match_distance: 1.0,
            plane_neighbors: 5,
            plane_max_deviation: 0.2,
            edge_candidates: 5,
            max_residual: 0.1,
            degeneracy_ratio: 1e-6,
            step_tolerance: 1e-6,
            exec: Exec::default(),
        }
    }
}

/// Principal direction of at least three points, when they are clearly
/// elongated (largest variance above three times the second).
pub fn fit_line(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, large) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if !(large > 0.0 && large > LINE_ELONGATION * mid) {
        return None;
    }
    let mut d: Vector3<f64> = eig.eigenvectors.column(idx[2]).into_owned().normalize();
    if d[d.iamax()] < 0.0 {
        d = -d;
    }
    Some((centroid, d))
}

/// Smallest accepted ratio of the first to second principal variance of an
/// edge line's support.
pub const LINE_ELONGATION: f64 = 3.0;

fn match_edge(p: &ScanPoint, map: &FeatureMap, guess: &Pose, cfg: &RegistrationConfig) -> Option<EdgeCorrespondence> {
    let x = guess.transform(&p.position);
    let max2 = cfg.max_match_distance * cfg.max_match_distance;
    let near: Vec<Vector3<f64>> = map
        .edge_index
        .nearest(&x, cfg.edge_candidates.max(3))
        .into_iter()
        .filter(|n| n.dist2 <= max2)
        .map(|n| map.edges[n.index].position)
        .collect();
    // the line through the support centroid along its principal direction
    let (c, d) = fit_line(&near)?;
    if (x - c).cross(&d).norm() > cfg.max_residual {
        return None;
    }
    Some(EdgeCorrespondence {
        source: p.position,
        a: c + 0.1 * d,
        b: c - 0.1 * d,
    })
}

fn match_plane(p: &ScanPoint, map: &FeatureMap, guess: &Pose, cfg: &RegistrationConfig) -> Option<PlaneCorrespondence> {
    let x = guess.transform(&p.position);
    let near = map.planar_index.nearest(&x, cfg.plane_neighbors);
    if near.len() < cfg.plane_neighbors.max(3)
        || near.iter().any(|n| n.dist2 > cfg.max_match_distance * cfg.max_match_distance)
    {
        return None;
    }
    let pts: Vec<Vector3<f64>> = near.iter().map(|n| map.planar[n.index].position).collect();
    let coeffs = fit_plane(&pts, cfg.plane_max_deviation).ok()?;
    if (Vector3::new(coeffs[0], coeffs[1], coeffs[2]).dot(&x) + coeffs[3]).abs() > cfg.max_residual {
        return None;
    }
    Some(PlaneCorrespondence {
        source: p.position,
        coeffs,
    })
}

/// Matches every feature (transformed by `guess`) against the map.
pub fn find_correspondences(
    features: &FeatureSet,
    map: &FeatureMap,
    guess: &Pose,
    cfg: &RegistrationConfig,
) -> Correspondences {
    let edges = if map.edge_index.is_empty() {
        Vec::new()
    } else {
        cfg.exec
            .map(&features.edges, |p| match_edge(p, map, guess, cfg))
            .into_iter()
            .flatten()
            .collect()
    };
    let planes = if map.planar_index.is_empty() {
        Vec::new()
    } else {
        cfg.exec
            .map(&features.planar, |p| match_plane(p, map, guess, cfg))
            .into_iter()
            .flatten()
            .collect()
    };
    Correspondences { edges, planes }
}

fn huber(r: f64, k: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= k {
        (0.5 * r * r, 1.0)
    } else {
        (k * (a - 0.5 * k), k / a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub iterations: usize,
    /// Sum of squared residuals at the returned pose.
    pub cost: f64,
    pub converged: bool,
    /// `J^T J` was rank deficient at some iteration.
    pub degenerate: bool,
    pub matches: usize,
    /// Robust cost before and after every accepted step, evaluated with that
    /// iteration's correspondences.
    pub steps: Vec<(f64, f64)>,
}

struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    cost: f64,
}

fn normal_equations(corr: &Correspondences, pose: &Pose, cfg: &RegistrationConfig) -> Normal {
    let terms = corr.evaluate_all(pose, cfg.exec);
    let mut n = Normal {
        h: Matrix6::zeros(),
        g: Vector6::zeros(),
        cost: 0.0,
    };
    for (r, j) in terms {
        let (rho, w) = huber(r, cfg.huber);
        n.h += w * j.transpose() * j;
        n.g += w * j.transpose() * r;
        n.cost += rho;
    }
    n
}

fn robust_cost(corr: &Correspondences, pose: &Pose, cfg: &RegistrationConfig) -> f64 {
    corr.evaluate_all(pose, cfg.exec)
        .iter()
        .map(|(r, _)| huber(*r, cfg.huber).0)
        .sum()
}

/// Levenberg-damped Gauss-Newton on the Huber-weighted edge and plane
/// residuals, re-matching correspondences at every iteration.
pub fn gauss_newton_align(
    features: &FeatureSet,
    map: &FeatureMap,
    initial: &Pose,
    cfg: &RegistrationConfig,
) -> RegistrationResult {
    let mut pose = *initial;
    let mut lambda = cfg.initial_damping;
    let mut result = RegistrationResult {
        pose,
        iterations: 0,
        cost: 0.0,
        converged: false,
        degenerate: false,
        matches: 0,
        steps: Vec::new(),
    };
    let mut corr = Correspondences::default();
    for iter in 0..cfg.max_iterations {
        result.iterations = iter + 1;
        corr = find_correspondences(features, map, &pose, cfg);
        if corr.len() < 6 {
            break;
        }
        let ne = normal_equations(&corr, &pose, cfg);
        let eig = ne.h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo < cfg.degeneracy_ratio * hi {
            result.degenerate = true;
            break;
        }
        let mut accepted = None;
        while lambda < 1e10 {
            let damped = ne.h + Matrix6::identity() * lambda;
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-ne.g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = pose.retract(&Twist::from_vector(&step));
            let cost = robust_cost(&corr, &candidate, cfg);
            if cost <= ne.cost {
                accepted = Some((step, candidate, cost));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            if step.norm() < cfg.step_tolerance {
                // numerically at the minimum for these correspondences
                accepted = Some((Vector6::zeros(), pose, ne.cost));
                break;
            }
            lambda *= 10.0;
        }
        let Some((step, candidate, cost)) = accepted else {
            result.converged = true;
            break;
        };
        result.steps.push((ne.cost, cost));
        pose = candidate;
        if step.norm() < cfg.step_tolerance {
            result.converged = true;
            break;
        }
    }
    if !result.converged && !result.degenerate && corr.len() >= 6 && result.iterations == cfg.max_iterations {
        log::debug!("registration hit the iteration cap");
    }
    result.pose = pose;
    result.matches = corr.len();
    result.cost = corr.residuals(&pose).norm_squared();
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as Gauss};

    #[test]
    fn edge_residual_cases() {
        let a = Vector3::zeros();
        let b = Vector3::x();
        assert_eq!(edge_residual(&Vector3::new(3.0, 0.0, 0.0), &a, &b).unwrap(), 0.0);
        assert_relative_eq!(edge_residual(&Vector3::new(0.5, 1.0, 0.0), &a, &b).unwrap(), 1.0);
        assert!(edge_residual(&Vector3::y(), &a, &a).is_err());
    }

    #[test]
    fn edge_residual_matches_line_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut r = || Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        for _ in 0..50 {
            let (x, a, b) = (r(), r(), r());
            // dense sweep of the line parameter, refined twice around the best
            let dist = |s: f64| (x - (a + (b - a) * s)).norm();
            let (mut lo, mut hi) = (-20.0, 20.0);
            let mut best = f64::INFINITY;
            for _ in 0..4 {
                let n = 20_000;
                let mut arg = lo;
                for k in 0..=n {
                    let s = lo + (hi - lo) * k as f64 / n as f64;
                    let d = dist(s);
                    if d < best {
                        best = d;
                        arg = s;
                    }
                }
                let w = (hi - lo) / n as f64;
                lo = arg - 2.0 * w;
                hi = arg + 2.0 * w;
            }
            assert!((edge_residual(&x, &a, &b).unwrap() - best).abs() < 1e-6);
        }
    }

    #[test]
    fn plane_residual_cases() {
        assert_eq!(plane_residual(&Vector3::z(), &[0.0, 0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(plane_residual(&Vector3::new(4.0, 2.0, 0.0), &[0.0, 0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(plane_residual(&Vector3::z(), &[0.0, 0.0, 2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(plane_residual(&-Vector3::z(), &[0.0, 0.0, 1.0, 0.0]).unwrap(), -1.0);
        assert!(plane_residual(&Vector3::z(), &[0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn fit_plane_cases() {
        let square = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let c = fit_plane(&square, 0.2).unwrap();
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2].abs() - 1.0).abs() < 1e-12);
        assert!(c[3].abs() < 1e-12);

        let collinear = [Vector3::zeros(), Vector3::x(), 2.0 * Vector3::x()];
        assert!(fit_plane(&collinear, 0.2).is_err());

        let bent = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        assert!(fit_plane(&bent, 0.2).is_err());
    }

    #[test]
    fn fit_plane_noisy_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let noise = Gauss::new(0.0, 0.01).unwrap();
        let pts: Vec<_> = (0..50)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0 + noise.sample(&mut rng)))
            .collect();
        let c = fit_plane(&pts, 0.2).unwrap();
        assert!((c[3] + c[2]).abs() < 0.02);
    }

    fn room_map() -> (FeatureMap, FeatureSet) {
        // planar samples on three orthogonal planes, edges along two creases
        let mut planar = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (u, v) = (i as f64 * 0.25 - 2.5, j as f64 * 0.25 - 2.5);
                planar.push(ScanPoint::new(Vector3::new(u, v, -1.0), 0, 1.0));
                planar.push(ScanPoint::new(Vector3::new(4.0, u, v), 1, 1.0));
                planar.push(ScanPoint::new(Vector3::new(u, 3.0, v), 2, 1.0));
            }
        }
        let mut edges = Vec::new();
        for k in 0..40 {
            let s = k as f64 * 0.1 - 2.0;
            edges.push(ScanPoint::new(Vector3::new(4.0, 3.0, s), (k % 4) as u32, 1.0));
            edges.push(ScanPoint::new(Vector3::new(s, 3.0, -1.0), (k % 4) as u32, 1.0));
        }
        let features = FeatureSet {
            edges: edges.iter().step_by(3).copied().collect(),
            planar: planar.iter().step_by(7).copied().collect(),
        };
        (FeatureMap::new(edges, planar), features)
    }

    #[test]
    fn self_match_has_zero_residual() {
        let (map, features) = room_map();
        let corr = find_correspondences(&features, &map, &Pose::identity(), &RegistrationConfig::default());
        assert_eq!(corr.planes.len(), features.planar.len());
        assert!(corr.residuals(&Pose::identity()).amax() < 1e-6);
    }

    #[test]
    fn residual_gate_drops_far_matches() {
        let (map, _) = room_map();
        // 0.15 m above the floor: within neighbour reach, beyond the gate
        let lifted = FeatureSet {
            edges: Vec::new(),
            planar: vec![ScanPoint::new(Vector3::new(0.1, 0.1, -0.85), 0, 1.0)],
        };
        let cfg = RegistrationConfig::default();
        assert!(find_correspondences(&lifted, &map, &Pose::identity(), &cfg).is_empty());
        let loose = RegistrationConfig { max_residual: 0.2, ..cfg };
        assert_eq!(find_correspondences(&lifted, &map, &Pose::identity(), &loose).planes.len(), 1);
    }

    #[test]
    fn empty_map_gives_no_matches() {
        let (_, features) = room_map();
        let corr = find_correspondences(&features, &FeatureMap::default(), &Pose::identity(), &RegistrationConfig::default());
        assert!(corr.is_empty());
    }

    #[test]
    fn align_from_truth_converges_immediately() {
        let (map, features) = room_map();
        let r = gauss_newton_align(&features, &map, &Pose::identity(), &RegistrationConfig::default());
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.pose.translation.norm() < 1e-6);
    }

    #[test]
    fn align_recovers_small_offset() {
        let (map, features) = room_map();
        let truth = Pose::new(Rotation::exp(&Vector3::new(0.0, 0.0, 0.02)), Vector3::new(0.1, -0.05, 0.03));
        // features observed from `truth`: express them in that sensor frame
        let local = features.transformed(&truth.inverse());
        let r = gauss_newton_align(&local, &map, &Pose::identity(), &RegistrationConfig::default());
        assert!(r.converged, "{r:?}");
        assert!((r.pose.translation - truth.translation).norm() < 1e-3);
        assert!((r.pose.rotation.inverse() * truth.rotation).angle() < 1e-3);
        for (before, after) in &r.steps {
            assert!(after <= before);
        }
    }

    #[test]
    fn single_plane_is_degenerate() {
        let planar: Vec<_> = (0..400)
            .map(|k| ScanPoint::new(Vector3::new((k % 20) as f64 * 0.2, (k / 20) as f64 * 0.2, 0.0), 0, 1.0))
            .collect();
        let map = FeatureMap::new(vec![], planar.clone());
        let features = FeatureSet {
            edges: vec![],
            planar: planar.iter().step_by(5).copied().collect(),
        };
        let r = gauss_newton_align(&features, &map, &Pose::identity(), &RegistrationConfig::default());
        assert!(!r.converged);
        assert!(r.degenerate);
    }

    #[test]
    fn stacked_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let mut v = |s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
            let pose = Pose::new(Rotation::exp(&v(1.0)), v(3.0));
            let corr = Correspondences {
                edges: (0..5).map(|_| EdgeCorrespondence { source: v(5.0), a: v(5.0), b: v(5.0) }).collect(),
                planes: (0..5)
                    .map(|_| {
                        let n = v(1.0).normalize();
                        PlaneCorrespondence { source: v(5.0), coeffs: [n.x, n.y, n.z, 0.7] }
                    })
                    .collect(),
            };
            let j = corr.jacobian(&pose);
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let fd = (corr.residuals(&pose.retract(&Twist::from_vector(&d)))
                    - corr.residuals(&pose.retract(&Twist::from_vector(&-d))))
                    / (2.0 * h);
                let col = j.column(k);
                assert!((&fd - col).norm() <= 1e-5 * fd.norm().max(1.0));
            }
        }
    }
}
