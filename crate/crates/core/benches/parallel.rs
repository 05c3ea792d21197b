//! Sequential versus parallel execution of the data-parallel kernels.
//!
//! Without the `parallel` feature both policies run the sequential code, so
//! `cargo bench --no-default-features` measures the fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use liorecon::features::{deskew, extract_features, LidarFrame};
use liorecon::pipeline::config::{RunConfig, TrajectoryKind, WorldKind};
use liorecon::pipeline::simulate::{build_trajectory, build_world};
use liorecon::registration::{find_correspondences, FeatureMap};
use liorecon::sim::{raycast_scan, Trajectory, World};
use liorecon::tsdf::{TsdfConfig, VoxelGrid};
use liorecon::Exec;
use std::hint::black_box;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

struct Scene {
    cfg: RunConfig,
    world: World,
    trajectory: Trajectory,
    frame: LidarFrame,
}

fn scene() -> Scene {
    let mut cfg = RunConfig::default();
    cfg.sim.world = WorldKind::Room;
    cfg.sim.trajectory = TrajectoryKind::Room;
    cfg.sim.speed = 0.8;
    let world = build_world(cfg.sim.world).unwrap();
    let trajectory = build_trajectory(&cfg.sim).unwrap();
    let frame = raycast_scan(&world, &trajectory, 0.5, &cfg.sim.sensor, 1, Exec::Sequential).unwrap();
    Scene {
        cfg,
        world,
        trajectory,
        frame,
    }
}

fn kernels(c: &mut Criterion) {
    let s = scene();
    let period = s.cfg.sim.sensor.scan_period;

    let mut g = c.benchmark_group("raycast_scan");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| raycast_scan(&s.world, &s.trajectory, 0.5, &s.cfg.sim.sensor, 1, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("deskew");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| deskew(&s.frame, period, |t| s.trajectory.pose(t), exec).unwrap())
        });
    }
    g.finish();

    let features = extract_features(&s.frame, &s.cfg.features);
    let map = FeatureMap::from_features(&features);
    let mut g = c.benchmark_group("find_correspondences");
    for (name, exec) in POLICIES {
        let mut reg = s.cfg.registration;
        reg.exec = exec;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| find_correspondences(black_box(&features), &map, &Default::default(), &reg))
        });
    }
    g.finish();

    let points: Vec<_> = s.frame.points.iter().map(|p| p.position).collect();
    let origin = nalgebra::Vector3::zeros();
    let mut g = c.benchmark_group("integrate_cloud");
    g.sample_size(20);
    for (name, exec) in POLICIES {
        let cfg = TsdfConfig {
            voxel_size: 0.05,
            exec,
            ..TsdfConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut grid = VoxelGrid::new(cfg).unwrap();
                grid.integrate_cloud(&points, &origin)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
