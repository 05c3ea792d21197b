//! IMU state propagation and on-manifold preintegration.
//!
//! Gravity `g` points down in the world frame (default `(0, 0, -9.81)`) and
//! accelerometers measure specific force, so the world acceleration is
//! `R * (accel - bias) + g`. Both integrators use the same discretization:
//! midpoint gyro rate for the rotation step and the trapezoidal rule for the
//! acceleration, so chaining [`preintegrate`] with [`apply_delta`] reproduces
//! [`integrate_direct`] up to rounding.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        ImuSample { t, accel, gyro }
    }

    /// Linear interpolation between `self` and `next` at time `t`.
    pub fn lerp(&self, next: &ImuSample, t: f64) -> ImuSample {
        let span = next.t - self.t;
        let s = if span > 0.0 { (t - self.t) / span } else { 0.0 };
        ImuSample {
            t,
            accel: self.accel + (next.accel - self.accel) * s,
            gyro: self.gyro + (next.gyro - self.gyro) * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
}

impl NavState {
    pub fn new(pose: Pose, velocity: Vector3<f64>) -> Self {
        NavState { pose, velocity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel {
    pub g: Vector3<f64>,
}

impl Default for GravityModel {
    fn default() -> Self {
        GravityModel {
            g: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

impl GravityModel {
    pub fn zero() -> Self {
        GravityModel { g: Vector3::zeros() }
    }
}

/// Relative motion `(alpha, beta, q)` over an interval, in the body frame at
/// its start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreintegratedDelta {
    pub dt: f64,
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub q: Rotation,
    pub bias: ImuBias,
}

impl PreintegratedDelta {
    pub fn identity(bias: ImuBias) -> Self {
        PreintegratedDelta {
            dt: 0.0,
            alpha: Vector3::zeros(),
            beta: Vector3::zeros(),
            q: Rotation::identity(),
            bias,
        }
    }
}

pub fn check_stream(samples: &[ImuSample]) -> Result<()> {
    for s in samples {
        if !(s.t.is_finite()
            && s.accel.iter().all(|v| v.is_finite())
            && s.gyro.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("imu sample"));
        }
    }
    for w in samples.windows(2) {
        if w[1].t <= w[0].t {
            return Err(Error::NonMonotonicTime {
                prev: w[0].t,
                next: w[1].t,
            });
        }
    }
    Ok(())
}

/// One quadrature step from sample `a` to sample `b`. Returns the rotation
/// increment and the (trapezoidal) mean acceleration expressed in the frame
/// in which `q` is given.
#[inline]
fn step(q: &Rotation, a: &ImuSample, b: &ImuSample, bias: &ImuBias) -> (Rotation, Vector3<f64>) {
    let dt = b.t - a.t;
    let omega = 0.5 * (a.gyro + b.gyro) - bias.gyro;
    let q_next = *q * Rotation::exp(&(omega * dt));
    let acc = 0.5 * (q.rotate(&(a.accel - bias.accel)) + q_next.rotate(&(b.accel - bias.accel)));
    (q_next, acc)
}

/// Propagates `state` (valid at `samples[0].t`) to the last sample time.
pub fn integrate_direct(
    state: &NavState,
    samples: &[ImuSample],
    bias: &ImuBias,
    gravity: &GravityModel,
) -> Result<NavState> {
    check_stream(samples)?;
    let mut q = state.pose.rotation;
    let mut p = state.pose.translation;
    let mut v = state.velocity;
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        let (q_next, acc) = step(&q, &w[0], &w[1], bias);
        let a = acc + gravity.g;
        p += v * dt + 0.5 * a * dt * dt;
        v += a * dt;
        q = q_next;
    }
    Ok(NavState::new(Pose::new(q, p), v))
}

/// Integrates the samples into an anchor-free relative motion.
pub fn preintegrate(samples: &[ImuSample], bias: &ImuBias) -> Result<PreintegratedDelta> {
    check_stream(samples)?;
    let mut d = PreintegratedDelta::identity(*bias);
    for w in samples.windows(2) {
        let dt = w[1].t - w[0].t;
        let (q_next, acc) = step(&d.q, &w[0], &w[1], bias);
        d.alpha += d.beta * dt + 0.5 * acc * dt * dt;
        d.beta += acc * dt;
        d.q = q_next;
        d.dt += dt;
    }
    Ok(d)
}

/// Evaluates the preintegration equations from `state`.
pub fn apply_delta(state: &NavState, delta: &PreintegratedDelta, gravity: &GravityModel) -> NavState {
    let r = state.pose.rotation;
    let dt = delta.dt;
    let p = state.pose.translation
        + state.velocity * dt
        + 0.5 * gravity.g * dt * dt
        + r.rotate(&delta.alpha);
    let v = state.velocity + gravity.g * dt + r.rotate(&delta.beta);
    NavState::new(Pose::new(r * delta.q, p), v)
}

/// Samples covering `[t0, t1]`, with interpolated samples inserted at both
/// ends when they fall between measurements.
pub fn interval(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Error::Extrapolation {
            t: t0,
            start: f64::NAN,
            end: f64::NAN,
        });
    };
    for t in [t0, t1] {
        if !(t >= first.t && t <= last.t) {
            return Err(Error::Extrapolation {
                t,
                start: first.t,
                end: last.t,
            });
        }
    }
    if t1 < t0 {
        return Err(Error::NonMonotonicTime { prev: t0, next: t1 });
    }
    let at = |t: f64| -> ImuSample {
        let k = samples.partition_point(|s| s.t <= t);
        if k == 0 {
            return samples[0];
        }
        let a = &samples[k - 1];
        if a.t == t || k == samples.len() {
            *a
        } else {
            a.lerp(&samples[k], t)
        }
    };
    let mut out = vec![at(t0)];
    let lo = samples.partition_point(|s| s.t <= t0);
    let hi = samples.partition_point(|s| s.t < t1);
    if hi > lo {
        out.extend_from_slice(&samples[lo..hi]);
    }
    if t1 > t0 {
        out.push(at(t1));
    }
    Ok(out)
}

/// Pose at time `t`, starting from `anchor` at the first sample time.
pub fn pose_at(
    t: f64,
    anchor: &NavState,
    samples: &[ImuSample],
    bias: &ImuBias,
    gravity: &GravityModel,
) -> Result<Pose> {
    let start = samples.first().map_or(f64::NAN, |s| s.t);
    let span = interval(samples, start, t)?;
    Ok(integrate_direct(anchor, &span, bias, gravity)?.pose)
}

/// States propagated once at every sample of a stream, answering
/// [`pose_at`]-style queries with a single partial step each.
#[derive(Debug, Clone)]
pub struct Propagation {
    samples: Vec<ImuSample>,
    states: Vec<NavState>,
    bias: ImuBias,
    gravity: GravityModel,
}

impl Propagation {
    pub fn new(
        anchor: &NavState,
        samples: Vec<ImuSample>,
        bias: ImuBias,
        gravity: GravityModel,
    ) -> Result<Self> {
        check_stream(&samples)?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty imu stream".into()));
        }
        let mut states = Vec::with_capacity(samples.len());
        states.push(*anchor);
        for w in samples.windows(2) {
            let prev = states[states.len() - 1];
            states.push(integrate_direct(&prev, w, &bias, &gravity)?);
        }
        Ok(Propagation {
            samples,
            states,
            bias,
            gravity,
        })
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn state_at(&self, t: f64) -> Result<NavState> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::Extrapolation {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = self.samples.partition_point(|s| s.t <= t) - 1;
        let a = self.samples[k];
        if a.t == t || k + 1 == self.samples.len() {
            return Ok(self.states[k]);
        }
        let b = a.lerp(&self.samples[k + 1], t);
        integrate_direct(&self.states[k], &[a, b], &self.bias, &self.gravity)
    }

    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        Ok(self.state_at(t)?.pose)
    }

    pub fn last(&self) -> NavState {
        self.states[self.states.len() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(n: usize, dt: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Vec<ImuSample> {
        (0..n)
            .map(|k| ImuSample::new(k as f64 * dt, accel, gyro))
            .collect()
    }

    pub(crate) fn random_stream(rng: &mut impl Rng, n: usize, dt: f64) -> Vec<ImuSample> {
        let mut out = Vec::with_capacity(n);
        let mut a = Vector3::new(0.0, 0.0, 9.81);
        let mut w = Vector3::<f64>::zeros();
        for k in 0..n {
            for i in 0..3 {
                a[i] += rng.random_range(-0.5..0.5);
                w[i] = (w[i] + rng.random_range(-0.05..0.05)).clamp(-1.0, 1.0);
            }
            out.push(ImuSample::new(1.0 + k as f64 * dt, a, w));
        }
        out
    }

    fn random_state(rng: &mut impl Rng) -> NavState {
        let v = |rng: &mut dyn rand::RngCore, s: f64| {
            Vector3::new(
                rng.random_range(-s..s),
                rng.random_range(-s..s),
                rng.random_range(-s..s),
            )
        };
        NavState::new(
            Pose::new(Rotation::exp(&v(rng, 1.0)), v(rng, 10.0)),
            v(rng, 3.0),
        )
    }

    #[test]
    fn hover_keeps_state() {
        let g = GravityModel::default();
        let r = Rotation::exp(&Vector3::new(0.2, -0.1, 0.7));
        let s0 = NavState::new(Pose::new(r, Vector3::new(1.0, 2.0, 3.0)), Vector3::zeros());
        let f = -r.inverse().rotate(&g.g);
        let s1 = integrate_direct(&s0, &constant(201, 0.005, f, Vector3::zeros()), &ImuBias::default(), &g)
            .unwrap();
        assert!((s1.pose.translation - s0.pose.translation).amax() < 1e-9);
        assert!(s1.velocity.amax() < 1e-9);
    }

    #[test]
    fn constant_body_accel_without_gravity() {
        let s = integrate_direct(
            &NavState::default(),
            &constant(401, 0.005, Vector3::x(), Vector3::zeros()),
            &ImuBias::default(),
            &GravityModel::zero(),
        )
        .unwrap();
        assert_relative_eq!(s.pose.translation, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s.velocity, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn constant_yaw_rate() {
        let s = integrate_direct(
            &NavState::default(),
            &constant(401, 0.005, Vector3::zeros(), Vector3::new(0.0, 0.0, 0.5)),
            &ImuBias::default(),
            &GravityModel::zero(),
        )
        .unwrap();
        assert_relative_eq!(s.pose.rotation.log(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-6);
    }

    #[test]
    fn empty_and_decreasing_streams() {
        let s0 = NavState::new(Pose::from_translation(Vector3::x()), Vector3::y());
        let g = GravityModel::default();
        let b = ImuBias::default();
        assert_eq!(integrate_direct(&s0, &[], &b, &g).unwrap(), s0);
        let bad = vec![
            ImuSample::new(1.0, Vector3::zeros(), Vector3::zeros()),
            ImuSample::new(0.5, Vector3::zeros(), Vector3::zeros()),
        ];
        assert!(matches!(
            integrate_direct(&s0, &bad, &b, &g),
            Err(Error::NonMonotonicTime { .. })
        ));
        assert!(preintegrate(&bad, &b).is_err());
    }

    #[test]
    fn preintegrate_closed_forms() {
        let b = ImuBias::default();
        let d = preintegrate(&[], &b).unwrap();
        assert_eq!(d, PreintegratedDelta::identity(b));
        let a = Vector3::new(0.3, -1.0, 2.0);
        let d = preintegrate(&constant(301, 0.01, a, Vector3::zeros()), &b).unwrap();
        assert_relative_eq!(d.dt, 3.0, epsilon = 1e-12);
        assert_relative_eq!(d.alpha, 0.5 * a * 9.0, epsilon = 1e-11);
        assert_relative_eq!(d.beta, a * 3.0, epsilon = 1e-12);
        assert_eq!(d.q, Rotation::identity());
    }

    #[test]
    fn bias_is_subtracted() {
        let bias = ImuBias {
            accel: Vector3::new(0.1, 0.2, 0.3),
            gyro: Vector3::new(0.01, 0.0, -0.02),
        };
        let d = preintegrate(&constant(101, 0.01, bias.accel, bias.gyro), &bias).unwrap();
        assert!(d.alpha.amax() < 1e-15 && d.beta.amax() < 1e-15);
        assert_eq!(d.q, Rotation::identity());
    }

    #[test]
    fn apply_delta_cases() {
        let g = GravityModel::default();
        let s0 = NavState::new(Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)), Vector3::x());
        assert_eq!(apply_delta(&s0, &PreintegratedDelta::identity(ImuBias::default()), &g), s0);

        // zero specific force for 1 s is free fall under g = (0, 0, -9.81)
        let mut d = PreintegratedDelta::identity(ImuBias::default());
        d.dt = 1.0;
        let s1 = apply_delta(&NavState::default(), &d, &g);
        assert_relative_eq!(s1.pose.translation, Vector3::new(0.0, 0.0, -4.905), epsilon = 1e-12);
        assert_relative_eq!(s1.velocity, Vector3::new(0.0, 0.0, -9.81), epsilon = 1e-12);
    }

    #[test]
    fn preintegration_matches_direct_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GravityModel::default();
        for _ in 0..20 {
            let samples = random_stream(&mut rng, 201, 0.005);
            let s0 = random_state(&mut rng);
            let bias = ImuBias {
                accel: Vector3::new(0.05, -0.02, 0.01),
                gyro: Vector3::new(0.001, 0.002, -0.003),
            };
            let direct = integrate_direct(&s0, &samples, &bias, &g).unwrap();
            let via = apply_delta(&s0, &preintegrate(&samples, &bias).unwrap(), &g);
            assert!((direct.pose.translation - via.pose.translation).amax() < 1e-9);
            assert!((direct.velocity - via.velocity).amax() < 1e-9);
            assert!((direct.pose.rotation.inverse() * via.pose.rotation).angle() < 1e-12);
        }
    }

    #[test]
    fn chained_deltas_match_single_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = GravityModel::default();
        let b = ImuBias::default();
        let samples = random_stream(&mut rng, 401, 0.005);
        let s0 = random_state(&mut rng);
        let once = apply_delta(&s0, &preintegrate(&samples, &b).unwrap(), &g);
        let mid = apply_delta(&s0, &preintegrate(&samples[..150], &b).unwrap(), &g);
        let twice = apply_delta(&mid, &preintegrate(&samples[149..], &b).unwrap(), &g);
        assert!((once.pose.translation - twice.pose.translation).amax() < 1e-6);
        assert!((once.velocity - twice.velocity).amax() < 1e-6);
    }

    #[test]
    fn relative_motion_is_anchor_independent() {
        // anchors related by a rotation about gravity plus a translation see
        // the same body-frame relative motion
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = GravityModel::default();
        let delta = preintegrate(&random_stream(&mut rng, 201, 0.005), &ImuBias::default()).unwrap();
        for _ in 0..20 {
            let a = random_state(&mut rng);
            let world = Pose::new(
                Rotation::from_yaw(rng.random_range(-3.0..3.0)),
                Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 7.0),
            );
            let b = NavState::new(world * a.pose, world.rotation.rotate(&a.velocity));
            let rel = |s: &NavState| s.pose.inverse() * apply_delta(s, &delta, &g).pose;
            let (ra, rb) = (rel(&a), rel(&b));
            assert!((ra.translation - rb.translation).amax() < 1e-9);
            assert!((ra.rotation.inverse() * rb.rotation).angle() < 1e-9);
        }
    }

    #[test]
    fn pose_at_anchor_and_constant_velocity() {
        let g = GravityModel::default();
        let b = ImuBias::default();
        let samples = constant(101, 0.01, -g.g, Vector3::zeros());
        let anchor = NavState::new(Pose::from_translation(Vector3::new(1.0, 1.0, 1.0)), Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(pose_at(0.0, &anchor, &samples, &b, &g).unwrap(), anchor.pose);
        let p = pose_at(0.5, &anchor, &samples, &b, &g).unwrap();
        assert_relative_eq!(p.translation, Vector3::new(2.0, 1.0, 1.0), epsilon = 1e-12);
        let p = pose_at(0.505, &anchor, &samples, &b, &g).unwrap();
        assert_relative_eq!(p.translation, Vector3::new(2.01, 1.0, 1.0), epsilon = 1e-12);
        assert!(matches!(
            pose_at(1.5, &anchor, &samples, &b, &g),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn pose_at_tracks_fine_integration_of_sinusoidal_gyro() {
        let rate = |t: f64| Vector3::new(0.3 * (2.0 * t).sin(), 0.2 * (3.0 * t).cos(), 0.8 * t.sin());
        let g = GravityModel::zero();
        let b = ImuBias::default();
        let coarse: Vec<ImuSample> = (0..=200)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample::new(t, Vector3::zeros(), rate(t))
            })
            .collect();
        let fine: Vec<ImuSample> = (0..=2000)
            .map(|k| {
                let t = k as f64 * 0.0005;
                ImuSample::new(t, Vector3::zeros(), rate(t))
            })
            .collect();
        let anchor = NavState::default();
        let prop = Propagation::new(&anchor, coarse.clone(), b, g).unwrap();
        for t in [0.1, 0.333, 0.5, 0.777, 1.0] {
            let got = pose_at(t, &anchor, &coarse, &b, &g).unwrap();
            assert_eq!(prop.pose_at(t).unwrap().rotation.matrix(), got.rotation.matrix());
            let oracle = pose_at(t, &anchor, &fine, &b, &g).unwrap();
            let err = (oracle.rotation.inverse() * got.rotation).angle();
            assert!(err < 1e-5, "t={t} err={err}");
        }
    }

    #[test]
    fn interval_interpolates_ends() {
        let s = constant(11, 0.1, Vector3::zeros(), Vector3::zeros());
        let iv = interval(&s, 0.15, 0.45).unwrap();
        assert_relative_eq!(iv[0].t, 0.15);
        assert_relative_eq!(iv[iv.len() - 1].t, 0.45);
        assert_eq!(iv.len(), 5);
        assert!(interval(&s, -0.1, 0.5).is_err());
        assert_eq!(interval(&s, 0.2, 0.2).unwrap().len(), 1);
    }
}
