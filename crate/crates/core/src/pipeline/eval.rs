//! Trajectory error, mesh accuracy and the detail/time efficiency factors.

use nalgebra::{Matrix3, Vector3};

use super::io::TrajectoryEstimate;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{Pose, Rotation};
use crate::sim::World;
use crate::tsdf::TriangleMesh;

/// Stamp association tolerance, seconds.
pub const ATE_STAMP_TOLERANCE: f64 = 0.01;

/// Estimate/ground-truth position pairs by nearest stamp.
pub fn associate(estimate: &TrajectoryEstimate, truth: &TrajectoryEstimate) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    estimate
        .stamps
        .iter()
        .zip(&estimate.poses)
        .filter_map(|(t, p)| {
            truth
                .nearest(*t, ATE_STAMP_TOLERANCE)
                .map(|(_, g)| (p.translation, g.translation))
        })
        .collect()
}

/// Least-squares rotation and translation mapping `src` onto `dst`
/// (Kabsch/Umeyama without scale).
pub fn rigid_alignment(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let cs = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let cd = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    (r, cd - r * cs)
}

fn associated_pairs(estimate: &TrajectoryEstimate, truth: &TrajectoryEstimate) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let pairs = associate(estimate, truth);
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ATE needs at least 2 associated stamps, found {}",
            pairs.len()
        )));
    }
    Ok(pairs)
}

/// The rigid transform taking the estimate's frame onto the ground truth's
/// (the estimate's gauge is its first pose, not the world origin).
pub fn trajectory_alignment(estimate: &TrajectoryEstimate, truth: &TrajectoryEstimate) -> Result<Pose> {
    let (r, t) = rigid_alignment(&associated_pairs(estimate, truth)?);
    Ok(Pose::new(Rotation::from_matrix(&r), t))
}

/// RMSE of translational differences over stamp-associated poses,
/// optionally after rigid alignment of the estimate onto the ground truth.
pub fn compute_ate(estimate: &TrajectoryEstimate, truth: &TrajectoryEstimate, align: bool) -> Result<f64> {
    let pairs = associated_pairs(estimate, truth)?;
    let (r, t) = if align {
        rigid_alignment(&pairs)
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let sum: f64 = pairs.iter().map(|(e, g)| (r * e + t - g).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// The mesh moved by `pose` (vertices and normals).
pub fn transform_mesh(mesh: &TriangleMesh, pose: &Pose) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| pose.transform(v)).collect(),
        normals: mesh.normals.iter().map(|n| pose.rotation.rotate(n)).collect(),
        triangles: mesh.triangles.clone(),
    }
}

/// Ratios of a finer setting `a` over a coarser setting `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyFactors {
    pub d_increase: f64,
    pub t_increase: f64,
    pub e: f64,
}

impl EfficiencyFactors {
    /// More detail per unit of extra time: the finer setting pays off.
    pub fn is_beneficial(&self) -> bool {
        self.e > 1.0
    }
}

pub fn efficiency_factors(detail_a: f64, detail_b: f64, time_a: f64, time_b: f64) -> Result<EfficiencyFactors> {
    if [detail_a, detail_b, time_a, time_b].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("efficiency factors need positive finite inputs".into()));
    }
    let d_increase = detail_a / detail_b;
    let t_increase = time_a / time_b;
    Ok(EfficiencyFactors {
        d_increase,
        t_increase,
        e: d_increase / t_increase,
    })
}

/// One measured setting (e.g. a Poisson octree depth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetailSample {
    pub level: f64,
    pub detail: f64,
    pub time: f64,
}

/// Factors between consecutive rows and the preferred level: the finest
/// level reached while every step so far stayed beneficial.
pub fn efficiency_table(rows: &[DetailSample]) -> Result<(Vec<EfficiencyFactors>, f64)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty detail table".into()))?;
    let mut preferred = first.level;
    let mut beneficial = true;
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let f = efficiency_factors(w[1].detail, w[0].detail, w[1].time, w[0].time)?;
        beneficial &= f.is_beneficial();
        if beneficial {
            preferred = w[1].level;
        }
        out.push(f);
    }
    Ok((out, preferred))
}

/// Parses `level,detail,time` CSV (header required).
pub fn parse_detail_table(text: &str, path: &std::path::Path) -> Result<Vec<DetailSample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "level,detail,time" => {}
        _ => return Err(Error::parse(path, 1, "expected header `level,detail,time`")),
    }
    lines
        .map(|(n, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, n + 1, "bad number"))?;
            match v.as_slice() {
                [level, detail, time] => Ok(DetailSample {
                    level: *level,
                    detail: *detail,
                    time: *time,
                }),
                _ => Err(Error::parse(path, n + 1, "expected 3 fields")),
            }
        })
        .collect()
}

/// One-sided Hausdorff distance from the mesh (vertices and face centroids)
/// to the world facets.
pub fn mesh_to_world_distance(mesh: &TriangleMesh, world: &World, exec: Exec) -> f64 {
    let centroids: Vec<Vector3<f64>> = mesh
        .triangles
        .iter()
        .map(|t| (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0)
        .collect();
    let samples: Vec<Vector3<f64>> = mesh.vertices.iter().copied().chain(centroids).collect();
    exec.map(&samples, |p| world.distance(p)).into_iter().fold(0.0, f64::max)
}
