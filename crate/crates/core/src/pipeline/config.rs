//! Flat `key = value` run configuration. Every key has a default; unknown
//! keys and out-of-range values are rejected at load time.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::FeatureConfig;
use crate::posegraph::OptimizeConfig;
use crate::registration::RegistrationConfig;
use crate::sim::{ImuNoise, SensorSpec};
use crate::tsdf::{PlyFormat, TsdfConfig, WeightMode};

/// Simulated environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    /// Walled courtyard with a central block and pillars.
    Loop,
    /// 10 x 8 x 3 m room with two boxes.
    Room,
    /// A single wall 5 m ahead of the origin.
    Plane,
}

/// Simulated sensor motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Rounded-rectangle circuit of about 50 m through the loop world.
    Loop,
    /// Small rounded-rectangle circuit inside the room.
    Room,
    /// Sensor at rest.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub world: WorldKind,
    pub trajectory: TrajectoryKind,
    pub scans: usize,
    pub speed: f64,
    pub sensor: SensorSpec,
    pub imu_noise: ImuNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryConfig {
    /// Keyframes whose features form the local registration map.
    pub map_keyframes: usize,
    /// Denser per-sector quotas for features that go into the map.
    pub map_edges_per_sector: usize,
    pub map_planar_per_sector: usize,
    /// Minimum correspondences for a registration to be trusted.
    pub min_matches: usize,
    /// Largest accepted translation / rotation (deg) away from the IMU guess.
    pub max_jump: f64,
    pub max_jump_angle: f64,
    /// Abort after more than this many consecutive skipped scans.
    pub max_skips: usize,
    /// Weight of the registration-implied velocity against the IMU
    /// prediction (1 trusts registration fully).
    pub velocity_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Free keyframes kept in the sliding window.
    pub window: usize,
    pub keyframe_distance: f64,
    /// Degrees.
    pub keyframe_angle: f64,
    pub optimize: OptimizeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub enabled: bool,
    /// Search radius between keyframe positions, meters.
    pub radius: f64,
    /// Minimum keyframe index gap between loop candidates.
    pub min_gap: usize,
    /// Keyframes on each side of the candidate used as its local map.
    pub map_neighbors: usize,
    /// Largest accepted residual RMS of the loop registration, meters.
    pub max_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub tsdf: TsdfConfig,
    /// Keyframes per submap; 0 integrates straight into one world grid.
    pub submap_size: usize,
    pub mesh_format: PlyFormat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub exec: Exec,
    pub sim: SimConfig,
    pub features: FeatureConfig,
    pub registration: RegistrationConfig,
    pub odometry: OdometryConfig,
    pub graph: GraphConfig,
    pub loop_closure: LoopConfig,
    pub reconstruction: ReconstructionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            exec: Exec::default(),
            sim: SimConfig {
                world: WorldKind::Loop,
                trajectory: TrajectoryKind::Loop,
                scans: 200,
                speed: 2.8,
                sensor: SensorSpec {
                    noise: 0.01,
                    ..SensorSpec::default()
                },
                imu_noise: ImuNoise::realistic(),
            },
            features: FeatureConfig::default(),
            registration: RegistrationConfig::default(),
            odometry: OdometryConfig {
                map_keyframes: 10,
                map_edges_per_sector: 4,
                map_planar_per_sector: 20,
                min_matches: 30,
                max_jump: 1.0,
                max_jump_angle: 30.0,
                max_skips: 10,
                velocity_gain: 0.2,
            },
            graph: GraphConfig {
                window: 30,
                keyframe_distance: 1.0,
                keyframe_angle: 10.0,
                optimize: OptimizeConfig::default(),
            },
            loop_closure: LoopConfig {
                enabled: true,
                radius: 3.0,
                min_gap: 15,
                map_neighbors: 2,
                max_rms: 0.05,
            },
            reconstruction: ReconstructionConfig {
                tsdf: TsdfConfig::default(),
                submap_size: 0,
                mesh_format: PlyFormat::Ascii,
            },
        }
    }
}

/// A value type that can appear on the right of `=`.
trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
numeric_value!(f64, usize, u64, bool);

macro_rules! enum_value {
    ($t:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
            fn render(&self) -> String {
                $(if *self == $variant { return $name.to_string(); })*
                unreachable!()
            }
        }
    };
}
enum_value!(Exec { "parallel" => Exec::Parallel, "sequential" => Exec::Sequential });
enum_value!(WeightMode { "constant" => WeightMode::Constant, "quadratic" => WeightMode::Quadratic });
enum_value!(PlyFormat { "ascii" => PlyFormat::Ascii, "binary" => PlyFormat::BinaryLittleEndian });
enum_value!(WorldKind { "loop" => WorldKind::Loop, "room" => WorldKind::Room, "plane" => WorldKind::Plane });
enum_value!(TrajectoryKind {
    "loop" => TrajectoryKind::Loop,
    "room" => TrajectoryKind::Room,
    "static" => TrajectoryKind::Static,
});

/// Declares every key once: its field, its documentation, and the
/// generated `set` / `render` / `KEYS` tables.
macro_rules! keys {
    ($($key:literal => $($field:ident).+, $doc:literal;)*) => {
        /// `(key, description)` for every accepted key, in file order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        impl RunConfig {
            /// Assigns one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = Value::parse(value)
                            .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            fn render_key(&self, key: &str) -> String {
                match key {
                    $($key => Value::render(&self.$($field).+),)*
                    _ => unreachable!(),
                }
            }
        }
    };
}

keys! {
    "seed" => seed, "base seed for every random stream";
    "exec" => exec, "parallel | sequential execution of the data-parallel loops";
    "sim.world" => sim.world, "loop | room | plane";
    "sim.trajectory" => sim.trajectory, "loop | room | static";
    "sim.scans" => sim.scans, "number of simulated sweeps";
    "sim.speed" => sim.speed, "cruise speed of the circuit trajectories, m/s";
    "sim.rings" => sim.sensor.rings, "LiDAR rings";
    "sim.points_per_ring" => sim.sensor.points_per_ring, "azimuth samples per ring and sweep";
    "sim.vertical_fov" => sim.sensor.vertical_fov, "vertical field of view, degrees";
    "sim.max_range" => sim.sensor.max_range, "LiDAR max range, m";
    "sim.scan_period" => sim.sensor.scan_period, "sweep duration, s";
    "sim.range_noise" => sim.sensor.noise, "range noise sigma, m";
    "sim.imu_rate" => sim.sensor.imu_rate, "IMU sample rate, Hz";
    "sim.accel_noise" => sim.imu_noise.accel, "accelerometer noise sigma per sample, m/s^2";
    "sim.gyro_noise" => sim.imu_noise.gyro, "gyroscope noise sigma per sample, rad/s";
    "feature.window" => features.window, "curvature half-window, points";
    "feature.sectors" => features.sectors, "sectors per ring";
    "feature.edges_per_sector" => features.edges_per_sector, "edge features per sector (query)";
    "feature.planar_per_sector" => features.planar_per_sector, "planar features per sector (query)";
    "feature.edge_threshold" => features.edge_threshold, "minimum curvature of an edge point";
    "feature.planar_threshold" => features.planar_threshold, "maximum curvature of a planar point";
    "feature.min_range" => features.min_range, "points closer than this are dropped, m";
    "feature.max_range" => features.max_range, "points farther than this are dropped, m";
    "map.edges_per_sector" => odometry.map_edges_per_sector, "edge features per sector (map)";
    "map.planar_per_sector" => odometry.map_planar_per_sector, "planar features per sector (map)";
    "map.keyframes" => odometry.map_keyframes, "keyframes in the local registration map";
    "reg.max_iterations" => registration.max_iterations, "Gauss-Newton iteration cap";
    "reg.initial_damping" => registration.initial_damping, "initial Levenberg damping";
    "reg.huber" => registration.huber, "Huber threshold, m";
    "reg.max_match_distance" => registration.max_match_distance, "correspondence gate, m";
    "reg.plane_neighbors" => registration.plane_neighbors, "neighbours per plane fit";
    "reg.plane_max_deviation" => registration.plane_max_deviation, "plane fit rejection threshold, m";
    "reg.edge_candidates" => registration.edge_candidates, "neighbours searched per edge match";
    "reg.max_residual" => registration.max_residual, "drop correspondences with a larger residual at the current estimate, m";
    "reg.degeneracy_ratio" => registration.degeneracy_ratio, "min/max eigenvalue ratio below which J^T J is degenerate";
    "reg.step_tolerance" => registration.step_tolerance, "convergence threshold on the step norm";
    "odometry.min_matches" => odometry.min_matches, "correspondences required to accept a registration";
    "odometry.max_jump" => odometry.max_jump, "largest accepted correction of the IMU guess, m";
    "odometry.max_jump_angle" => odometry.max_jump_angle, "largest accepted correction of the IMU guess, degrees";
    "odometry.max_skips" => odometry.max_skips, "abort after more consecutive skipped scans";
    "odometry.velocity_gain" => odometry.velocity_gain, "0..1 weight of registration-implied velocity over the IMU prediction";
    "graph.window" => graph.window, "free keyframes in the sliding window";
    "graph.keyframe_distance" => graph.keyframe_distance, "new keyframe after this translation, m";
    "graph.keyframe_angle" => graph.keyframe_angle, "new keyframe after this rotation, degrees";
    "graph.max_iterations" => graph.optimize.max_iterations, "pose-graph Gauss-Newton iteration cap";
    "graph.tolerance" => graph.optimize.tolerance, "pose-graph convergence threshold on max |dx|";
    "loop.enabled" => loop_closure.enabled, "run the loop-closure stage";
    "loop.radius" => loop_closure.radius, "loop candidate search radius, m";
    "loop.min_gap" => loop_closure.min_gap, "minimum keyframe index gap of a loop";
    "loop.map_neighbors" => loop_closure.map_neighbors, "keyframes each side of the candidate in its map";
    "loop.max_rms" => loop_closure.max_rms, "largest accepted loop registration RMS, m";
    "tsdf.voxel_size" => reconstruction.tsdf.voxel_size, "voxel edge length, m";
    "tsdf.truncation" => reconstruction.tsdf.truncation, "truncation distance, m (at least two voxels)";
    "tsdf.max_weight" => reconstruction.tsdf.max_weight, "per-voxel weight cap";
    "tsdf.weight_mode" => reconstruction.tsdf.mode, "constant | quadratic";
    "tsdf.submap_size" => reconstruction.submap_size, "keyframes per submap, 0 disables submaps";
    "mesh.format" => reconstruction.mesh_format, "ascii | binary";
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(path, n + 1, "expected `key = value`"));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }

    /// Every key with its current value, one per line, preceded by its
    /// description. Parsing the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{key} = {}", self.render_key(key));
        }
        s
    }

    /// Copies the run-wide execution policy into every stage config.
    pub fn propagate_exec(&mut self) {
        self.features.exec = self.exec;
        self.registration.exec = self.exec;
        self.reconstruction.tsdf.exec = self.exec;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} out of range")));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        self.sim.sensor.validate().map_err(|_| Error::Config("sensor parameters out of range".into()))?;
        self.reconstruction
            .tsdf
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.sim.scans == 0 {
            return bad("sim.scans");
        }
        if !positive(self.sim.speed) {
            return bad("sim.speed");
        }
        if !(self.sim.imu_noise.accel >= 0.0 && self.sim.imu_noise.gyro >= 0.0) {
            return bad("sim IMU noise");
        }
        let f = &self.features;
        if f.window == 0 || f.sectors == 0 || !(f.min_range >= 0.0 && f.max_range > f.min_range) {
            return bad("feature parameters");
        }
        if !(f.edge_threshold >= f.planar_threshold && f.planar_threshold >= 0.0) {
            return bad("feature thresholds");
        }
        let r = &self.registration;
        if r.max_iterations == 0
            || !positive(r.huber)
            || !positive(r.max_match_distance)
            || r.plane_neighbors < 3
            || r.edge_candidates < 2
            || !(r.initial_damping >= 0.0)
            || !(r.degeneracy_ratio >= 0.0)
        {
            return bad("registration parameters");
        }
        let o = &self.odometry;
        if o.map_keyframes == 0 || !(0.0..=1.0).contains(&o.velocity_gain) || !positive(o.max_jump) || !positive(o.max_jump_angle) {
            return bad("odometry parameters");
        }
        let g = &self.graph;
        if g.window == 0 || !positive(g.keyframe_distance) || !positive(g.keyframe_angle) {
            return bad("graph parameters");
        }
        let l = &self.loop_closure;
        if !positive(l.radius) || !positive(l.max_rms) {
            return bad("loop parameters");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        assert_eq!(RunConfig::from_text(&text, Path::new("c")).unwrap(), cfg);
        assert_eq!(text.lines().filter(|l| l.contains(" = ")).count(), KEYS.len());
    }

    #[test]
    fn parses_values_and_comments() {
        let text = "# comment\nseed = 42\nexec = sequential  # inline\ntsdf.weight_mode = quadratic\nsim.world = room\nmesh.format = binary\n";
        let cfg = RunConfig::from_text(text, Path::new("c")).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.exec, Exec::Sequential);
        assert_eq!(cfg.reconstruction.tsdf.mode, WeightMode::Quadratic);
        assert_eq!(cfg.sim.world, WorldKind::Room);
        assert_eq!(cfg.reconstruction.mesh_format, PlyFormat::BinaryLittleEndian);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "colour = red",
            "seed = -1",
            "exec = fast",
            "tsdf.voxel_size = 0",
            "tsdf.truncation = 0.1",
            "sim.scans = 0",
            "missing equals",
        ] {
            let err = RunConfig::from_text(text, Path::new("c")).unwrap_err();
            assert!(matches!(err, Error::Parse { .. } | Error::Config(_)), "{text}: {err}");
        }
    }
}
