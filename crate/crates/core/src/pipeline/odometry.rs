//! The LiDAR-inertial odometry loop and the batch loop-closure stage.
//!
//! Per scan: IMU propagation from the last estimate, deskew through the
//! propagated motion, feature extraction, registration against the local map
//! of recent keyframes, keyframe decision, and a sliding-window pose-graph
//! update with registration and preintegration edges. After the last scan a
//! loop-closure pass registers late keyframes against the map around early
//! ones and re-optimizes the graph of all keyframes.

use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use nalgebra::{Matrix6, UnitQuaternion, Vector3};

use super::config::RunConfig;
use super::io::{write_scan_archive, Dataset, TrajectoryEstimate};
use crate::error::{Error, Result};
use crate::features::{deskew, extract_features, FeatureConfig, FeatureSet, LidarFrame, ScanPoint};
use crate::geometry::{Pose, Rotation};
use crate::imu::{self, apply_delta, preintegrate, GravityModel, ImuBias, ImuSample, NavState, Propagation};
use crate::posegraph::{optimize, write_dump, GraphEdge, PoseGraph};
use crate::registration::{gauss_newton_align, FeatureMap, RegistrationResult};

/// Random access to a scan sequence.
pub trait ScanSource {
    fn len(&self) -> usize;
    fn frame(&self, k: usize) -> Result<LidarFrame>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ScanSource for [LidarFrame] {
    fn len(&self) -> usize {
        <[LidarFrame]>::len(self)
    }
    fn frame(&self, k: usize) -> Result<LidarFrame> {
        Ok(self[k].clone())
    }
}

impl ScanSource for Dataset {
    fn len(&self) -> usize {
        self.scans.len()
    }
    fn frame(&self, k: usize) -> Result<LidarFrame> {
        Dataset::frame(self, k)
    }
}

#[derive(Debug, Clone)]
struct Keyframe {
    stamp: f64,
    pose: Pose,
    /// Registration estimate at insertion, before any graph update.
    raw: Pose,
    velocity: Vector3<f64>,
    /// Deskewed cloud in the keyframe's sensor frame.
    cloud: LidarFrame,
    query: FeatureSet,
    map: FeatureSet,
}

#[derive(Debug, Clone)]
pub struct OdometryResult {
    /// Keyframe poses as first estimated by registration.
    pub odometry: TrajectoryEstimate,
    /// Keyframe poses after window optimization and loop closure.
    pub trajectory: TrajectoryEstimate,
    /// Deskewed keyframe clouds in the world frame, at `trajectory` poses.
    pub clouds: Vec<LidarFrame>,
    /// Graph over all keyframes, as finally optimized.
    pub graph: PoseGraph,
    pub skipped: usize,
    pub loop_edges: usize,
}

/// Roll and pitch from the mean specific force while at rest; yaw is zero.
fn gravity_aligned(imu: &[ImuSample], t0: f64) -> Rotation {
    let window: Vec<_> = imu.iter().filter(|s| s.t >= t0 && s.t <= t0 + 0.2).collect();
    if window.is_empty() {
        return Rotation::identity();
    }
    let mean = window.iter().map(|s| s.accel).sum::<Vector3<f64>>() / window.len() as f64;
    UnitQuaternion::rotation_between(&mean, &Vector3::z())
        .map(Rotation::from_unit)
        .unwrap_or_else(Rotation::identity)
}

fn local_map(keyframes: &[Keyframe]) -> FeatureMap {
    let mut edges: Vec<ScanPoint> = Vec::new();
    let mut planar: Vec<ScanPoint> = Vec::new();
    for kf in keyframes {
        let f = kf.map.transformed(&kf.pose);
        edges.extend(f.edges);
        planar.extend(f.planar);
    }
    FeatureMap::new(edges, planar)
}

fn information(matches: usize) -> Matrix6<f64> {
    Matrix6::identity() * matches as f64
}

struct Gate<'a> {
    cfg: &'a RunConfig,
}

impl Gate<'_> {
    /// Accepts a registration that is well conditioned, well supported and
    /// close to its initial guess.
    fn accept(&self, guess: &Pose, r: &RegistrationResult) -> bool {
        let o = &self.cfg.odometry;
        let jump = guess.inverse() * r.pose;
        !r.degenerate
            && r.matches >= o.min_matches
            && jump.translation.norm() <= o.max_jump
            && jump.rotation.angle() <= o.max_jump_angle.to_radians()
    }
}

/// Runs odometry over `scans` with the IMU stream `imu`.
pub fn run_odometry<S: ScanSource + ?Sized>(scans: &S, imu: &[ImuSample], cfg: &RunConfig) -> Result<OdometryResult> {
    let mut cfg = *cfg;
    cfg.validate()?;
    cfg.propagate_exec();
    let gate = Gate { cfg: &cfg };
    let period = cfg.sim.sensor.scan_period;
    let gravity = GravityModel::default();
    let bias = ImuBias::default();
    let map_features = FeatureConfig {
        edges_per_sector: cfg.odometry.map_edges_per_sector,
        planar_per_sector: cfg.odometry.map_planar_per_sector,
        ..cfg.features
    };
    imu::check_stream(imu)?;

    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut window = PoseGraph::new();
    window.exec = cfg.exec;
    let mut all_edges: Vec<GraphEdge> = Vec::new();
    let mut map = FeatureMap::default();
    let mut nav = NavState::default();
    let mut t_nav = f64::NAN;
    let mut skips = 0usize;
    let mut skipped = 0usize;

    for k in 0..scans.len() {
        let frame = scans.frame(k)?;
        let t = frame.stamp;
        if t_nav.is_nan() {
            t_nav = t - period;
            nav.pose = Pose::new(gravity_aligned(imu, t_nav), Vector3::zeros());
        }
        let mut skip = |why: &str| -> Result<()> {
            skips += 1;
            skipped += 1;
            warn!("scan {k} at {t:.3}: {why}; skipped");
            if skips > cfg.odometry.max_skips {
                return Err(Error::Pipeline(format!(
                    "more than {} consecutive scans skipped",
                    cfg.odometry.max_skips
                )));
            }
            Ok(())
        };
        let samples = match imu::interval(imu, t_nav, t) {
            Ok(s) if s.len() >= 2 => s,
            _ => {
                skip("no IMU coverage")?;
                continue;
            }
        };
        let prop = Propagation::new(&nav, samples.clone(), bias, gravity)?;
        let predicted = prop.last();
        // point times are reconstructed from the stamp; absorb rounding at the ends
        let desk = deskew(&frame, period, |tau| prop.pose_at(tau.clamp(prop.start(), prop.end())), cfg.exec)?;
        let query = extract_features(&desk, &cfg.features);
        let mapf = extract_features(&desk, &map_features);

        let Some(last) = keyframes.last() else {
            window.add_node(0, predicted.pose, true)?;
            keyframes.push(Keyframe {
                stamp: t,
                pose: predicted.pose,
                raw: predicted.pose,
                velocity: predicted.velocity,
                cloud: desk,
                query,
                map: mapf,
            });
            map = local_map(&keyframes);
            nav = predicted;
            t_nav = t;
            continue;
        };

        let result = gauss_newton_align(&query, &map, &predicted.pose, &cfg.registration);
        if !gate.accept(&predicted.pose, &result) {
            // IMU-only propagation through this scan
            nav = predicted;
            t_nav = t;
            skip(&format!(
                "registration rejected (matches {}, degenerate {})",
                result.matches, result.degenerate
            ))?;
            continue;
        }
        skips = 0;

        // complementary velocity update: IMU prediction nudged towards the
        // velocity implied by the registered displacement
        let delta = preintegrate(&samples, &bias)?;
        let dt = delta.dt;
        let r = nav.pose.rotation;
        let v_start = (result.pose.translation - nav.pose.translation - 0.5 * gravity.g * dt * dt - r.rotate(&delta.alpha)) / dt;
        let v_registered = v_start + gravity.g * dt + r.rotate(&delta.beta);
        let velocity = predicted.velocity + cfg.odometry.velocity_gain * (v_registered - predicted.velocity);
        nav = NavState::new(result.pose, velocity);
        t_nav = t;

        let rel = last.pose.inverse() * result.pose;
        let is_keyframe = rel.translation.norm() > cfg.graph.keyframe_distance
            || rel.rotation.angle() > cfg.graph.keyframe_angle.to_radians();
        if !is_keyframe {
            continue;
        }
        let id = keyframes.len();
        let prev = id - 1;
        window.add_node(id, result.pose, false)?;
        // the scan was registered against the whole local map, so it is
        // constrained relative to every keyframe in it, not just the last
        let first = keyframes.len().saturating_sub(cfg.odometry.map_keyframes);
        let mut edges: Vec<GraphEdge> = (first..id)
            .map(|i| GraphEdge::new(i, id, keyframes[i].pose.inverse() * result.pose, information(result.matches)))
            .collect();
        if let Ok(span) = imu::interval(imu, last.stamp, t) {
            let from = NavState::new(last.pose, last.velocity);
            let to = apply_delta(&from, &preintegrate(&span, &bias)?, &gravity);
            edges.push(GraphEdge::new(prev, id, last.pose.inverse() * to.pose, Matrix6::identity()));
        }
        for e in edges {
            window.add_edge(e)?;
            all_edges.push(e);
        }
        keyframes.push(Keyframe {
            stamp: t,
            pose: result.pose,
            raw: result.pose,
            velocity,
            cloud: desk,
            query,
            map: mapf,
        });
        let report = optimize(&mut window, &cfg.graph.optimize)?;
        debug!(
            "keyframe {id} (scan {k}): {} matches, graph cost {:.3e} -> {:.3e}",
            result.matches, report.initial_cost, report.final_cost
        );
        for node in window.nodes() {
            keyframes[node.id].pose = node.pose;
        }
        nav.pose = keyframes[id].pose;
        while window.free_ids().len() > cfg.graph.window {
            let oldest = window.free_ids()[0];
            window.marginalize_node(oldest)?;
        }
        let from = keyframes.len().saturating_sub(cfg.odometry.map_keyframes);
        map = local_map(&keyframes[from..]);
    }
    if keyframes.is_empty() {
        return Err(Error::Pipeline("no scan could be processed".into()));
    }
    info!("{} keyframes from {} scans, {skipped} skipped", keyframes.len(), scans.len());

    let odometry = TrajectoryEstimate::new(
        keyframes.iter().map(|k| k.stamp).collect(),
        keyframes.iter().map(|k| k.raw).collect(),
    )?;
    let (graph, loop_edges) = close_loops(&mut keyframes, &all_edges, &cfg)?;
    let trajectory = TrajectoryEstimate::new(
        keyframes.iter().map(|k| k.stamp).collect(),
        keyframes.iter().map(|k| k.pose).collect(),
    )?;
    let clouds = keyframes
        .iter()
        .map(|kf| {
            let points = kf
                .cloud
                .points
                .iter()
                .map(|p| ScanPoint::new(kf.pose.transform(&p.position), p.ring, p.rel_time))
                .collect();
            LidarFrame::new(kf.stamp, points)
        })
        .collect();
    Ok(OdometryResult {
        odometry,
        trajectory,
        clouds,
        graph,
        skipped,
        loop_edges,
    })
}

/// Builds the graph of all keyframes, adds verified loop edges and
/// optimizes it. Keyframe poses are updated in place.
fn close_loops(keyframes: &mut [Keyframe], edges: &[GraphEdge], cfg: &RunConfig) -> Result<(PoseGraph, usize)> {
    let mut graph = PoseGraph::new();
    graph.exec = cfg.exec;
    for (id, kf) in keyframes.iter().enumerate() {
        graph.add_node(id, kf.pose, id == 0)?;
    }
    for e in edges {
        graph.add_edge(*e)?;
    }
    let l = &cfg.loop_closure;
    let mut loops = 0;
    if l.enabled {
        let gate = Gate { cfg };
        for j in 0..keyframes.len() {
            let pj = keyframes[j].pose.translation;
            let candidate = (0..j.saturating_sub(l.min_gap.saturating_sub(1)))
                .filter(|&i| j - i >= l.min_gap)
                .map(|i| (i, (keyframes[i].pose.translation - pj).norm()))
                .filter(|(_, d)| *d < l.radius)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((i, _)) = candidate else { continue };
            let lo = i.saturating_sub(l.map_neighbors);
            let hi = (i + l.map_neighbors + 1).min(j - l.min_gap + 1).max(i + 1);
            let map = local_map(&keyframes[lo..hi]);
            let guess = keyframes[j].pose;
            let r = gauss_newton_align(&keyframes[j].query, &map, &guess, &cfg.registration);
            let rms = (r.cost / r.matches.max(1) as f64).sqrt();
            if !(gate.accept(&guess, &r) && r.converged && rms <= l.max_rms) {
                debug!("loop {i} -> {j} rejected: matches {}, rms {rms:.4}", r.matches);
                continue;
            }
            let measurement = keyframes[i].pose.inverse() * r.pose;
            graph.add_edge(GraphEdge::new(i, j, measurement, information(r.matches)))?;
            loops += 1;
            info!("loop closure {i} -> {j}: {} matches, rms {rms:.4} m", r.matches);
        }
    }
    if loops > 0 {
        let mut opt = cfg.graph.optimize;
        opt.max_iterations = opt.max_iterations.max(50);
        let report = optimize(&mut graph, &opt)?;
        info!("global graph cost {:.3e} -> {:.3e}", report.initial_cost, report.final_cost);
        for node in graph.nodes() {
            keyframes[node.id].pose = node.pose;
        }
    }
    Ok((graph, loops))
}

/// Writes `odometry.tum`, `trajectory.tum`, `graph.txt` and the world-frame
/// keyframe clouds under `clouds/`.
pub fn write_odometry(dir: &Path, result: &OdometryResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    result.odometry.write_tum(&dir.join("odometry.tum"))?;
    result.trajectory.write_tum(&dir.join("trajectory.tum"))?;
    fs::write(dir.join("graph.txt"), write_dump(&result.graph))?;
    let frames: Vec<(usize, LidarFrame)> = result.clouds.iter().cloned().enumerate().collect();
    write_scan_archive(&dir.join("clouds"), &frames)
}
