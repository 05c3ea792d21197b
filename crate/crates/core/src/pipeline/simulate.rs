//! Scenario presets and dataset generation.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use log::info;
use nalgebra::Vector3;

use super::config::{RunConfig, SimConfig, TrajectoryKind, WorldKind};
use super::io::{scan_file_name, write_imu_csv, write_lscan, write_scan_manifest, ScanEntry, TrajectoryEstimate};
use crate::error::Result;
use crate::features::LidarFrame;
use crate::geometry::{Pose, Rotation};
use crate::imu::{GravityModel, ImuBias, ImuSample};
use crate::sim::{self, Trajectory, World};
use crate::tsdf::{write_ply, PlyFormat, TriangleMesh};

pub fn build_world(kind: WorldKind) -> Result<World> {
    match kind {
        WorldKind::Loop => sim::loop_world(),
        WorldKind::Room => sim::room_world(),
        WorldKind::Plane => sim::plane_world(5.0),
    }
}

/// The analytic sensor path; it outlasts the last sweep slightly so that
/// the IMU stream covers every scan.
pub fn build_trajectory(cfg: &SimConfig) -> Result<Trajectory> {
    let duration = cfg.scans as f64 * cfg.sensor.scan_period + 0.05;
    let circuit = |start: Vector3<f64>, length: f64, width: f64, radius: f64| {
        let half = 0.5 * length - radius;
        let ramp = (2.0 * half / cfg.speed).min(1.0);
        Trajectory::rounded_rectangle(
            Pose::new(Rotation::identity(), start),
            length,
            width,
            radius,
            cfg.speed,
            0.5,
            ramp,
            duration,
        )
    };
    match cfg.trajectory {
        // perimeter 2 (17 + 10.6) - (8 - 2 pi) 2.5 = 50.9 m
        TrajectoryKind::Loop => circuit(Vector3::new(0.0, -5.3, 1.0), 17.0, 10.6, 2.5),
        TrajectoryKind::Room => circuit(Vector3::new(0.0, -0.8, 1.5), 2.6, 1.6, 0.6),
        TrajectoryKind::Static => Ok(Trajectory::new(Pose::from_translation(Vector3::new(0.0, 0.0, 1.0))).hold(duration)),
    }
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub world: World,
    pub frames: Vec<LidarFrame>,
    pub imu: Vec<ImuSample>,
    /// Exact sensor poses at the scan stamps.
    pub ground_truth: TrajectoryEstimate,
}

/// Seed of the IMU noise stream; scans use their own index.
const IMU_STREAM: u64 = u64::MAX;

pub fn simulate(cfg: &RunConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let world = build_world(cfg.sim.world)?;
    let traj = build_trajectory(&cfg.sim)?;
    let spec = cfg.sim.sensor;
    let frames = (0..cfg.sim.scans)
        .map(|k| {
            let start = k as f64 * spec.scan_period;
            sim::raycast_scan(&world, &traj, start, &spec, sim::derive_seed(cfg.seed, k as u64), cfg.exec)
        })
        .collect::<Result<Vec<_>>>()?;
    let imu = sim::synthesize_imu(
        &traj,
        spec.imu_rate,
        &ImuBias::default(),
        &GravityModel::default(),
        &cfg.sim.imu_noise,
        sim::derive_seed(cfg.seed, IMU_STREAM),
    )?;
    let stamps: Vec<f64> = frames.iter().map(|f| f.stamp).collect();
    let poses = sim::ground_truth_poses(&traj, &stamps)?;
    let ground_truth = TrajectoryEstimate::new(stamps, poses)?;
    info!(
        "simulated {} scans ({} points), {} IMU samples",
        frames.len(),
        frames.iter().map(LidarFrame::len).sum::<usize>(),
        imu.len()
    );
    Ok(SimulatedDataset {
        world,
        frames,
        imu,
        ground_truth,
    })
}

/// World facets as a mesh (three vertices per facet, face normals).
pub fn world_mesh(world: &World) -> TriangleMesh {
    let mut mesh = TriangleMesh::default();
    for (k, tri) in world.triangles().iter().enumerate() {
        let n = tri.normal();
        for v in tri.v {
            mesh.vertices.push(v);
            mesh.normals.push(n);
        }
        mesh.triangles.push([3 * k, 3 * k + 1, 3 * k + 2]);
    }
    mesh
}

/// Writes `scans/`, `scans.csv`, `imu.csv`, `groundtruth.tum`, `world.ply`
/// and the effective `config.txt` into `dir`.
pub fn write_dataset(dir: &Path, data: &SimulatedDataset, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir.join("scans"))?;
    let mut entries = Vec::with_capacity(data.frames.len());
    for (k, frame) in data.frames.iter().enumerate() {
        let file = format!("scans/{}", scan_file_name(k));
        write_lscan(&dir.join(&file), frame)?;
        entries.push(ScanEntry {
            index: k,
            stamp: frame.stamp,
            file,
        });
    }
    write_scan_manifest(&dir.join("scans.csv"), &entries)?;
    write_imu_csv(&dir.join("imu.csv"), &data.imu)?;
    data.ground_truth.write_tum(&dir.join("groundtruth.tum"))?;
    let ply = BufWriter::new(fs::File::create(dir.join("world.ply"))?);
    write_ply(&world_mesh(&data.world), PlyFormat::Ascii, ply)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

/// Reads `world.ply` back into a ray-castable world.
pub fn read_world(path: &Path) -> Result<World> {
    let mesh = crate::tsdf::read_ply(std::io::BufReader::new(fs::File::open(path)?))?;
    let tris = mesh
        .triangles
        .iter()
        .map(|t| sim::Triangle::new(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]))
        .collect();
    World::new(tris)
}
