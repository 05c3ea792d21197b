//! TSDF fusion of posed keyframe clouds and mesh output.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use nalgebra::Vector3;

use super::config::ReconstructionConfig;
use super::io::{read_lscan, read_scan_manifest, TrajectoryEstimate};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::LidarFrame;
use crate::geometry::Pose;
use crate::tsdf::{extract_mesh, fuse_submaps, write_ply, Submap, TriangleMesh, VoxelGrid};

/// Stamp tolerance when pairing clouds with trajectory poses, seconds.
const STAMP_TOLERANCE: f64 = 0.01;

/// Fuses world-frame clouds into a TSDF and extracts its zero set. Each
/// cloud's sensor origin is the trajectory pose at its stamp. With
/// `submap_size > 0` consecutive clouds are integrated into submaps
/// expressed in their first keyframe's frame and resampled into the world
/// grid at those anchors.
pub fn run_reconstruction(
    trajectory: &TrajectoryEstimate,
    clouds: &[LidarFrame],
    cfg: &ReconstructionConfig,
    exec: Exec,
) -> Result<TriangleMesh> {
    if trajectory.is_empty() {
        return Err(Error::Pipeline("empty trajectory".into()));
    }
    let mut tsdf = cfg.tsdf;
    tsdf.exec = exec;
    tsdf.validate()?;
    if clouds.is_empty() {
        warn!("no clouds to integrate; the mesh is empty");
        return Ok(TriangleMesh::default());
    }
    let posed = clouds
        .iter()
        .map(|c| {
            let (_, pose) = trajectory.nearest(c.stamp, STAMP_TOLERANCE).ok_or_else(|| {
                Error::Pipeline(format!("trajectory has no pose near cloud stamp {}", c.stamp))
            })?;
            Ok((pose, c.points.iter().map(|p| p.position).collect::<Vec<Vector3<f64>>>()))
        })
        .collect::<Result<Vec<(Pose, Vec<Vector3<f64>>)>>>()?;

    let grid = if cfg.submap_size == 0 {
        let mut grid = VoxelGrid::new(tsdf)?;
        for (pose, points) in &posed {
            let stats = grid.integrate_cloud(points, &pose.translation);
            log::debug!("integrated {} points, skipped {}", stats.integrated, stats.skipped);
        }
        grid
    } else {
        let mut submaps = Vec::new();
        for (s, chunk) in posed.chunks(cfg.submap_size).enumerate() {
            let anchor = chunk[0].0;
            let to_anchor = anchor.inverse();
            let mut grid = VoxelGrid::new(tsdf)?;
            for (pose, points) in chunk {
                let local: Vec<_> = points.iter().map(|p| to_anchor.transform(p)).collect();
                grid.integrate_cloud(&local, &to_anchor.transform(&pose.translation));
            }
            let first = s * cfg.submap_size;
            submaps.push(Submap {
                anchor,
                grid,
                keyframes: (first..first + chunk.len()).collect(),
            });
        }
        let anchors: Vec<Pose> = submaps.iter().map(|s| s.anchor).collect();
        fuse_submaps(tsdf, &submaps, &anchors)?
    };
    let mesh = extract_mesh(&grid);
    info!(
        "{} observed voxels, mesh with {} vertices and {} triangles",
        grid.observed_count(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(mesh)
}

/// Loads `trajectory.tum` and the `clouds/` archive written by odometry.
pub fn load_odometry_output(dir: &Path) -> Result<(TrajectoryEstimate, Vec<LidarFrame>)> {
    let trajectory = TrajectoryEstimate::read_tum(&dir.join("trajectory.tum"))?;
    let clouds_dir = dir.join("clouds");
    let entries = read_scan_manifest(&clouds_dir.join("scans.csv"))?;
    let clouds = entries
        .iter()
        .map(|e| {
            let mut f = read_lscan(&clouds_dir.join(&e.file))?;
            f.stamp = e.stamp;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((trajectory, clouds))
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, cfg: &ReconstructionConfig) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_ply(mesh, cfg.mesh_format, &mut w)?;
    Ok(())
}
