//! Keyframe pose graph on SE(3).
//!
//! Edge error `e_ij = log(T_ij^-1 T_i^-1 T_j)`, left-multiplied increments
//! `T <- exp(dxi) T`, and first-order Jacobians
//! `A_ij = -J_r^-1(e) Ad(T_j^-1)`, `B_ij = J_r^-1(e) Ad(T_j^-1)`.
//!
//! The normal equations are kept dense: sliding windows and loop-closure
//! graphs here hold at most a few hundred keyframes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6, Vector3};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{adjoint, right_jacobian_inv_approx, se3_log, Pose, Rotation, Twist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub pose: Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Pose,
    pub information: Matrix6<f64>,
}

impl GraphEdge {
    pub fn new(from: usize, to: usize, measurement: Pose, information: Matrix6<f64>) -> Self {
        GraphEdge {
            from,
            to,
            measurement,
            information,
        }
    }
}

/// Dense normal equations `H dx = b` over the free nodes, in `ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianSystem {
    pub ids: Vec<usize>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl HessianSystem {
    pub fn zeros(ids: Vec<usize>) -> Self {
        let n = 6 * ids.len();
        HessianSystem {
            ids,
            h: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
        }
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn block(&self, i: usize, j: usize) -> Option<Matrix6<f64>> {
        let (a, b) = (self.position(i)?, self.position(j)?);
        Some(self.h.fixed_view::<6, 6>(6 * a, 6 * b).into_owned())
    }

    pub fn solve(&self, damping: f64) -> Result<DVector<f64>> {
        let n = self.h.nrows();
        let damped = &self.h + DMatrix::identity(n, n) * damping;
        if let Some(c) = damped.clone().cholesky() {
            return Ok(c.solve(&self.b));
        }
        damped.lu().solve(&self.b).ok_or(Error::Singular)
    }
}

/// Information from marginalized nodes, as a quadratic on the retained ones
/// linearized at `linearization`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPrior {
    pub ids: Vec<usize>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub linearization: Vec<Pose>,
}

impl MarginalPrior {
    /// Left-perturbation offsets of the current poses from the linearization
    /// point, stacked in `ids` order.
    fn offset(&self, graph: &PoseGraph) -> Result<DVector<f64>> {
        let mut dx = DVector::zeros(6 * self.ids.len());
        for (k, (&id, lin)) in self.ids.iter().zip(&self.linearization).enumerate() {
            let pose = graph.pose(id)?;
            let d = (pose * lin.inverse()).log_unchecked().to_vector();
            dx.fixed_rows_mut::<6>(6 * k).copy_from(&d);
        }
        Ok(dx)
    }
}

pub fn edge_error(measurement: &Pose, from: &Pose, to: &Pose) -> Result<Twist> {
    se3_log(&(measurement.inverse() * from.inverse() * *to))
}

pub fn edge_jacobians(e: &Twist, to: &Pose) -> (Matrix6<f64>, Matrix6<f64>) {
    let b = right_jacobian_inv_approx(e) * adjoint(&to.inverse());
    (-b, b)
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    nodes: BTreeMap<usize, GraphNode>,
    edges: Vec<GraphEdge>,
    prior: Option<MarginalPrior>,
    pub exec: Exec,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: usize, pose: Pose, fixed: bool) -> Result<()> {
        if self.nodes.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate node id {id}")));
        }
        self.nodes.insert(id, GraphNode { id, pose, fixed });
        Ok(())
    }

    pub fn add_edge(&mut self, edge: GraphEdge) -> Result<()> {
        if edge.from == edge.to {
            return Err(Error::InvalidArgument("self edge".into()));
        }
        for id in [edge.from, edge.to] {
            if !self.nodes.contains_key(&id) {
                return Err(Error::UnknownNode(id));
            }
        }
        let info = &edge.information;
        if (info - info.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument("information matrix not symmetric".into()));
        }
        self.edges.push(edge);
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node(&self, id: usize) -> Result<&GraphNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn pose(&self, id: usize) -> Result<Pose> {
        Ok(self.node(id)?.pose)
    }

    pub fn set_pose(&mut self, id: usize, pose: Pose) -> Result<()> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))?.pose = pose;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn prior(&self) -> Option<&MarginalPrior> {
        self.prior.as_ref()
    }

    pub fn free_ids(&self) -> Vec<usize> {
        self.nodes.values().filter(|n| !n.fixed).map(|n| n.id).collect()
    }

    /// Sum of `e^T Omega e` over edges plus the marginal prior's quadratic.
    pub fn cost(&self) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.edges {
            let err = edge_error(&e.measurement, &self.pose(e.from)?, &self.pose(e.to)?)?.to_vector();
            total += (err.transpose() * e.information * err)[0];
        }
        if let Some(p) = &self.prior {
            let dx = p.offset(self)?;
            total += (dx.transpose() * &p.h * &dx)[0] - 2.0 * p.b.dot(&dx);
        }
        Ok(total)
    }

    fn accumulate(&self, sys: &mut HessianSystem, edges: &[&GraphEdge]) -> Result<()> {
        let terms = self.exec.map(edges, |e| -> Result<_> {
            let (ti, tj) = (self.pose(e.from)?, self.pose(e.to)?);
            let err = edge_error(&e.measurement, &ti, &tj)?;
            let (a, b) = edge_jacobians(&err, &tj);
            Ok((e.from, e.to, a, b, err.to_vector(), e.information))
        });
        for t in terms {
            let (i, j, a, b, err, info) = t?;
            let blocks = [(sys.position(i), a), (sys.position(j), b)];
            for (pr, jr) in &blocks {
                let Some(pr) = pr else { continue };
                let grad = -(jr.transpose() * info * err);
                let mut seg = sys.b.fixed_rows_mut::<6>(6 * pr);
                seg += grad;
                for (pc, jc) in &blocks {
                    let Some(pc) = pc else { continue };
                    let mut blk = sys.h.fixed_view_mut::<6, 6>(6 * pr, 6 * pc);
                    blk += jr.transpose() * info * jc;
                }
            }
        }
        Ok(())
    }

    fn add_prior(&self, sys: &mut HessianSystem, prior: &MarginalPrior) -> Result<()> {
        let dx = prior.offset(self)?;
        let rhs = &prior.b - &prior.h * dx;
        for (a, &ia) in prior.ids.iter().enumerate() {
            let Some(pa) = sys.position(ia) else { continue };
            let mut seg = sys.b.fixed_rows_mut::<6>(6 * pa);
            seg += rhs.fixed_rows::<6>(6 * a);
            for (c, &ic) in prior.ids.iter().enumerate() {
                let Some(pc) = sys.position(ic) else { continue };
                let mut blk = sys.h.fixed_view_mut::<6, 6>(6 * pa, 6 * pc);
                blk += prior.h.fixed_view::<6, 6>(6 * a, 6 * c);
            }
        }
        Ok(())
    }

    /// Normal equations over all free nodes, including the marginal prior.
    pub fn assemble(&self) -> Result<HessianSystem> {
        if !self.nodes.values().any(|n| n.fixed) {
            return Err(Error::Gauge);
        }
        let mut sys = HessianSystem::zeros(self.free_ids());
        let edges: Vec<&GraphEdge> = self.edges.iter().collect();
        self.accumulate(&mut sys, &edges)?;
        if let Some(p) = &self.prior {
            self.add_prior(&mut sys, p)?;
        }
        Ok(sys)
    }

    /// Removes `id` and folds its edges together with any existing prior into
    /// a new marginal prior over the remaining free nodes they touch.
    pub fn marginalize_node(&mut self, id: usize) -> Result<()> {
        let node = *self.node(id)?;
        let incident: Vec<&GraphEdge> = self
            .edges
            .iter()
            .filter(|e| e.from == id || e.to == id)
            .collect();
        let mut involved = BTreeSet::new();
        for e in &incident {
            involved.insert(e.from);
            involved.insert(e.to);
        }
        if let Some(p) = &self.prior {
            involved.extend(p.ids.iter().copied());
        }
        involved.insert(id);
        let ids: Vec<usize> = involved
            .into_iter()
            .filter(|i| !self.nodes[i].fixed)
            .collect();

        let new_prior = if node.fixed {
            None
        } else {
            let mut sys = HessianSystem::zeros(ids);
            self.accumulate(&mut sys, &incident)?;
            if let Some(p) = &self.prior {
                self.add_prior(&mut sys, p)?;
            }
            let mut prior = marginalize(&sys, &[id])?;
            prior.linearization = prior
                .ids
                .iter()
                .map(|i| self.pose(*i))
                .collect::<Result<_>>()?;
            Some(prior)
        };
        self.edges.retain(|e| e.from != id && e.to != id);
        self.nodes.remove(&id);
        if new_prior.is_some() {
            self.prior = new_prior;
        }
        Ok(())
    }
}

/// Schur complement: eliminates `marginal` ids from `system`.
pub fn marginalize(system: &HessianSystem, marginal: &[usize]) -> Result<MarginalPrior> {
    let mut m_idx = Vec::new();
    for id in marginal {
        let p = system.position(*id).ok_or(Error::UnknownNode(*id))?;
        m_idx.extend(6 * p..6 * p + 6);
    }
    let kept: Vec<usize> = system
        .ids
        .iter()
        .copied()
        .filter(|i| !marginal.contains(i))
        .collect();
    let r_idx: Vec<usize> = kept
        .iter()
        .flat_map(|id| {
            let p = system.position(*id).unwrap();
            6 * p..6 * p + 6
        })
        .collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| system.h[(rows[r], cols[c])])
    };
    let mut h_mm = pick(&m_idx, &m_idx);
    let h_rm = pick(&r_idx, &m_idx);
    let h_rr = pick(&r_idx, &r_idx);
    let b_m = DVector::from_iterator(m_idx.len(), m_idx.iter().map(|&i| system.b[i]));
    let b_r = DVector::from_iterator(r_idx.len(), r_idx.iter().map(|&i| system.b[i]));

    let min_eig = h_mm.clone().symmetric_eigenvalues().min();
    if min_eig < 1e-12 {
        let n = h_mm.nrows();
        h_mm += DMatrix::identity(n, n) * 1e-9;
    }
    let chol = h_mm.cholesky().ok_or(Error::Singular)?;
    let h_mm_inv_h_mr = chol.solve(&h_rm.transpose());
    let h_mm_inv_b_m = chol.solve(&b_m);
    let mut h = h_rr - &h_rm * h_mm_inv_h_mr;
    h = (&h + h.transpose()) * 0.5;
    let b = b_r - &h_rm * h_mm_inv_b_m;
    Ok(MarginalPrior {
        linearization: vec![Pose::identity(); kept.len()],
        ids: kept,
        h,
        b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub tolerance: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iterations: 20,
            initial_damping: 1e-6,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    /// Accepted non-zero updates.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
}

/// Damped Gauss-Newton over the free nodes. Fixed nodes are never written.
pub fn optimize(graph: &mut PoseGraph, cfg: &OptimizeConfig) -> Result<OptimizeReport> {
    let initial_cost = graph.cost()?;
    let mut report = OptimizeReport {
        iterations: 0,
        initial_cost,
        final_cost: initial_cost,
        costs: vec![initial_cost],
        converged: false,
        diverged: false,
    };
    let mut lambda = cfg.initial_damping;
    let mut cost = initial_cost;
    for _ in 0..cfg.max_iterations {
        let sys = graph.assemble()?;
        if sys.ids.is_empty() {
            report.converged = true;
            break;
        }
        let mut accepted = false;
        let mut small = false;
        while lambda < 1e8 {
            let dx = sys.solve(lambda)?;
            if dx.amax() < cfg.tolerance {
                small = true;
                break;
            }
            let mut trial = graph.clone();
            for (k, id) in sys.ids.iter().enumerate() {
                let d = Twist::from_vector(&dx.fixed_rows::<6>(6 * k).into_owned());
                let p = trial.pose(*id)?;
                trial.set_pose(*id, p.retract(&d))?;
            }
            let trial_cost = trial.cost()?;
            if trial_cost <= cost {
                *graph = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if small || !accepted {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        report.costs.push(cost);
        if cost > 10.0 * initial_cost.max(f64::MIN_POSITIVE) {
            report.diverged = true;
            break;
        }
    }
    report.final_cost = cost;
    Ok(report)
}

/// `VERTEX id tx ty tz qx qy qz qw` / `EDGE i j tx ty tz qx qy qz qw` text.
pub fn write_dump(graph: &PoseGraph) -> String {
    let mut s = String::new();
    let pose_fields = |p: &Pose| {
        let (t, r) = (p.translation, p.rotation);
        format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, r.x(), r.y(), r.z(), r.w())
    };
    for n in graph.nodes() {
        let _ = writeln!(s, "VERTEX {} {}", n.id, pose_fields(&n.pose));
    }
    for e in graph.edges() {
        let _ = writeln!(s, "EDGE {} {} {}", e.from, e.to, pose_fields(&e.measurement));
    }
    s
}

/// Parses [`write_dump`] output. Edges get identity information and the
/// lowest vertex id is fixed.
pub fn read_dump(text: &str) -> Result<PoseGraph> {
    let mut g = PoseGraph::new();
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse("<graph>", ln + 1, msg);
        let nums = |xs: &[&str]| -> Result<Vec<f64>> {
            xs.iter()
                .map(|x| x.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        let pose = |v: &[f64]| {
            Pose::new(
                Rotation::from_wxyz(v[6], v[3], v[4], v[5]),
                Vector3::new(v[0], v[1], v[2]),
            )
        };
        match (fields[0], fields.len()) {
            ("VERTEX", 9) => {
                let id = fields[1].parse().map_err(|_| bad("bad id"))?;
                let v = nums(&fields[2..])?;
                g.add_node(id, pose(&v), false)?;
            }
            ("EDGE", 10) => {
                let i = fields[1].parse().map_err(|_| bad("bad id"))?;
                let j = fields[2].parse().map_err(|_| bad("bad id"))?;
                let v = nums(&fields[3..])?;
                edges.push(GraphEdge::new(i, j, pose(&v), Matrix6::identity()));
            }
            _ => return Err(bad("expected VERTEX or EDGE record")),
        }
    }
    if let Some(first) = g.nodes.values_mut().next() {
        first.fixed = true;
    }
    for e in edges {
        g.add_edge(e)?;
    }
    Ok(g)
}
