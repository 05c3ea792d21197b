//! Ground-truth simulator: triangle worlds, analytic trajectories, ray-cast
//! LiDAR scans with per-beam timing, and IMU synthesis from the trajectory's
//! exact derivatives.

mod trajectory;
mod world;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use trajectory::{KinState, Segment, Trajectory};
pub use world::{loop_world, plane_world, room_world, Triangle, World, WorldBuilder};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{LidarFrame, ScanPoint};
use crate::geometry::Pose;
use crate::imu::{GravityModel, ImuBias, ImuSample};

/// Spinning multi-ring LiDAR. Rings are spread evenly over the vertical
/// field of view; every ring fires at each of `points_per_ring` azimuths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub rings: usize,
    pub points_per_ring: usize,
    /// Total vertical field of view, degrees, centred on the horizon.
    pub vertical_fov: f64,
    pub max_range: f64,
    pub scan_period: f64,
    /// Range noise standard deviation, meters.
    pub noise: f64,
    pub imu_rate: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            rings: 16,
            points_per_ring: 720,
            vertical_fov: 30.0,
            max_range: 100.0,
            scan_period: 0.1,
            noise: 0.0,
            imu_rate: 200.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.vertical_fov, self.max_range, self.scan_period, self.imu_rate];
        if self.rings == 0
            || self.points_per_ring < 2
            || positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(self.noise >= 0.0 && self.noise.is_finite())
        {
            return Err(Error::InvalidArgument("sensor spec".into()));
        }
        Ok(())
    }

    /// Unit beam direction in the sensor frame.
    pub fn beam(&self, ring: usize, azimuth_index: usize) -> Vector3<f64> {
        let fov = self.vertical_fov.to_radians();
        let el = if self.rings == 1 {
            0.0
        } else {
            -0.5 * fov + fov * ring as f64 / (self.rings - 1) as f64
        };
        let az = -std::f64::consts::PI
            + std::f64::consts::TAU * azimuth_index as f64 / self.points_per_ring as f64;
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    /// Emission time of an azimuth index as a fraction of the period.
    pub fn rel_time(&self, azimuth_index: usize) -> f64 {
        azimuth_index as f64 / (self.points_per_ring - 1) as f64
    }
}

/// White-noise standard deviations per IMU sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuNoise {
    pub accel: f64,
    pub gyro: f64,
}

impl ImuNoise {
    /// Consumer-grade MEMS levels at 200 Hz.
    pub fn realistic() -> Self {
        ImuNoise {
            accel: 0.03,
            gyro: 0.003,
        }
    }
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// Casts one sweep starting at `start`. Each azimuth column is fired from
/// the sensor pose at its own emission time; points are stored in that
/// (moving) sensor frame, grouped by ring and ordered by azimuth. Misses and
/// returns beyond `max_range` are dropped. The frame is stamped at the end of
/// the sweep. Noise draws come from one ChaCha stream per ring, so the result
/// depends only on `seed`.
pub fn raycast_scan(
    world: &World,
    trajectory: &Trajectory,
    start: f64,
    spec: &SensorSpec,
    seed: u64,
    exec: Exec,
) -> Result<LidarFrame> {
    spec.validate()?;
    let end = start + spec.scan_period;
    let poses = (0..spec.points_per_ring)
        .map(|k| trajectory.pose(start + spec.scan_period * spec.rel_time(k)))
        .collect::<Result<Vec<_>>>()?;
    let noise = normal(spec.noise);
    let rings = exec.map_range(spec.rings, |ring| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ring as u64);
        let mut out = Vec::with_capacity(spec.points_per_ring);
        for (k, pose) in poses.iter().enumerate() {
            let dir = spec.beam(ring, k);
            let eps = noise.map_or(0.0, |n| n.sample(&mut rng));
            let world_dir = pose.rotation.rotate(&dir);
            if let Some(range) = world.raycast(&pose.translation, &world_dir, spec.max_range) {
                let measured = range + eps;
                if measured > 0.0 && measured <= spec.max_range {
                    out.push(ScanPoint::new(dir * measured, ring as u32, spec.rel_time(k)));
                }
            }
        }
        out
    });
    Ok(LidarFrame::new(end, rings.into_iter().flatten().collect()))
}

/// IMU samples at `k / rate` covering the whole trajectory:
/// `accel = R^T (a_world - g) + b_a + n_a`, `gyro = omega_body + b_g + n_g`.
/// A sample that falls on a piece boundary reports the mean of the two
/// one-sided limits, so trapezoidal integration across an acceleration or
/// rate step stays unbiased.
pub fn synthesize_imu(
    trajectory: &Trajectory,
    rate: f64,
    bias: &ImuBias,
    gravity: &GravityModel,
    noise: &ImuNoise,
    seed: u64,
) -> Result<Vec<ImuSample>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument("imu rate must be positive".into()));
    }
    let n = (trajectory.duration() * rate + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (na, ng) = (normal(noise.accel), normal(noise.gyro));
    let draw = |d: &Option<Normal<f64>>, rng: &mut ChaCha8Rng| {
        Vector3::from_fn(|_, _| d.map_or(0.0, |d| d.sample(rng)))
    };
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 / rate;
        let measure = |s: &KinState| {
            let specific = s.pose.rotation.inverse().rotate(&(s.accel - gravity.g));
            (specific, s.omega)
        };
        let (mut f, mut w) = measure(&trajectory.state(t)?);
        if let Some(left) = trajectory.left_limit(t) {
            let (fl, wl) = measure(&left);
            f = 0.5 * (f + fl);
            w = 0.5 * (w + wl);
        }
        let accel = f + bias.accel + draw(&na, &mut rng);
        let gyro = w + bias.gyro + draw(&ng, &mut rng);
        out.push(ImuSample::new(t, accel, gyro));
    }
    Ok(out)
}

/// Exact poses at the given stamps.
pub fn ground_truth_poses(trajectory: &Trajectory, stamps: &[f64]) -> Result<Vec<Pose>> {
    stamps.iter().map(|&t| trajectory.pose(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::deskew;
    use crate::geometry::Rotation;
    use crate::imu::{integrate_direct, NavState};
    use approx::assert_relative_eq;

    fn single_beam() -> SensorSpec {
        SensorSpec {
            rings: 1,
            points_per_ring: 2,
            vertical_fov: 1.0,
            ..SensorSpec::default()
        }
    }

    fn static_traj(pose: Pose, duration: f64) -> Trajectory {
        Trajectory::new(pose).hold(duration)
    }

    #[test]
    fn beam_along_x_hits_plane() {
        // azimuth index 1 of 2 points along +x (az = -pi + pi)
        let spec = single_beam();
        assert_relative_eq!(spec.beam(0, 1), Vector3::x(), epsilon = 1e-15);
        let w = plane_world(5.0).unwrap();
        let f = raycast_scan(&w, &static_traj(Pose::identity(), 1.0), 0.0, &spec, 1, Exec::Sequential)
            .unwrap();
        assert_eq!(f.len(), 1);
        assert_relative_eq!(f.points[0].position, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        assert_eq!(f.points[0].rel_time, 1.0);
        assert_relative_eq!(f.stamp, 0.1);
        let short = SensorSpec {
            max_range: 4.0,
            ..spec
        };
        let f = raycast_scan(&w, &static_traj(Pose::identity(), 1.0), 0.0, &short, 1, Exec::Sequential)
            .unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn closed_box_points_lie_on_faces() {
        let w = WorldBuilder::new()
            .cuboid(Vector3::new(-4.0, -3.0, -1.0), Vector3::new(5.0, 3.5, 2.0))
            .build()
            .unwrap();
        let spec = SensorSpec::default();
        let pose = Pose::new(Rotation::from_yaw(0.4), Vector3::new(0.5, 0.2, 0.3));
        let f = raycast_scan(&w, &static_traj(pose, 1.0), 0.0, &spec, 9, Exec::Parallel).unwrap();
        assert_eq!(f.len(), spec.rings * spec.points_per_ring);
        for p in &f.points {
            let q = pose.transform(&p.position);
            assert!(w.distance(&q) < 1e-9);
        }
    }

    #[test]
    fn scans_are_deterministic_across_policies() {
        let w = room_world().unwrap();
        let spec = SensorSpec {
            noise: 0.02,
            ..SensorSpec::default()
        };
        let traj = Trajectory::new(Pose::from_translation(Vector3::new(0.0, 0.0, 1.0)))
            .line(1.0, 1.0);
        let a = raycast_scan(&w, &traj, 0.2, &spec, 77, Exec::Sequential).unwrap();
        let b = raycast_scan(&w, &traj, 0.2, &spec, 77, Exec::Parallel).unwrap();
        let c = raycast_scan(&w, &traj, 0.2, &spec, 78, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn imu_at_rest_and_constant_velocity() {
        let g = GravityModel::default();
        let z = ImuBias::default();
        let n = ImuNoise::default();
        let rest = synthesize_imu(&static_traj(Pose::identity(), 1.0), 200.0, &z, &g, &n, 0).unwrap();
        assert_eq!(rest.len(), 201);
        for s in &rest {
            assert_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81));
            assert_eq!(s.gyro, Vector3::zeros());
        }
        let moving = KinState {
            velocity: Vector3::new(2.0, 0.0, 0.0),
            ..KinState::at_rest(Pose::identity())
        };
        let line = Trajectory::from_state(moving).line(1.0, 0.0);
        let s = synthesize_imu(&line, 200.0, &z, &g, &n, 0).unwrap();
        assert_eq!(s[10].accel, rest[10].accel);
        assert_eq!(s[10].gyro, rest[10].gyro);
    }

    #[test]
    fn circle_has_centripetal_specific_force() {
        let (r, v) = (4.0, 2.0);
        let start = KinState {
            velocity: Vector3::new(v, 0.0, 0.0),
            ..KinState::at_rest(Pose::identity())
        };
        let traj = Trajectory::from_state(start).arc(5.0, v / r);
        let s = synthesize_imu(
            &traj,
            100.0,
            &ImuBias::default(),
            &GravityModel::default(),
            &ImuNoise::default(),
            0,
        )
        .unwrap();
        for x in &s {
            assert!((x.accel.xy().norm() - v * v / r).abs() < 1e-9);
            assert!((x.accel.z - 9.81).abs() < 1e-12);
            assert!((x.gyro.z - v / r).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_integration_reproduces_ground_truth() {
        let start = Pose::new(Rotation::from_yaw(0.2), Vector3::new(1.0, -2.0, 1.0));
        let traj = Trajectory::new(start)
            .hold(0.5)
            .line(1.0, 1.5)
            .arc(2.5, 0.6)
            .line(1.0, 0.0)
            .arc(2.0, -0.8)
            .line(3.0, 0.0);
        assert_relative_eq!(traj.duration(), 10.0, epsilon = 1e-12);
        let g = GravityModel::default();
        let bias = ImuBias::default();
        let imu = synthesize_imu(&traj, 200.0, &bias, &g, &ImuNoise::default(), 0).unwrap();
        let state = integrate_direct(&NavState::new(start, Vector3::zeros()), &imu, &bias, &g).unwrap();
        let truth = ground_truth_poses(&traj, &[10.0]).unwrap()[0];
        assert!((state.pose.translation - truth.translation).norm() < 1e-4);
        assert!((state.pose.rotation.inverse() * truth.rotation).angle() < 1e-6);
    }

    #[test]
    fn deskew_with_true_motion_lands_on_facets() {
        let w = room_world().unwrap();
        let spec = SensorSpec::default();
        let start = Pose::from_translation(Vector3::new(-1.0, 0.0, 1.0));
        let traj = Trajectory::new(start).spin(1.0, Vector3::new(0.1, 0.0, 2.5), Vector3::new(1.0, 0.3, 0.0));
        let f = raycast_scan(&w, &traj, 0.3, &spec, 1, Exec::Parallel).unwrap();
        let fixed = deskew(&f, spec.scan_period, |t| traj.pose(t), Exec::Parallel).unwrap();
        let end = traj.pose(f.stamp).unwrap();
        for p in &fixed.points {
            assert!(w.distance(&end.transform(&p.position)) < 1e-6);
        }
    }
}
