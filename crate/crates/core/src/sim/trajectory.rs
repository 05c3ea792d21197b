//! Piecewise analytic trajectories with closed-form derivatives.
//!
//! Each piece starts from the kinematic state the previous one ended in and
//! is C-infinity inside its interval. Time runs from 0 to [`Trajectory::duration`].

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

/// Pose and its derivatives at one instant. `velocity` and `accel` are in
/// the world frame, `omega` is the body-frame angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub accel: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl KinState {
    pub fn at_rest(pose: Pose) -> Self {
        KinState {
            pose,
            velocity: Vector3::zeros(),
            accel: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// Stationary.
    Hold,
    /// Straight motion along the body x-axis with constant acceleration.
    Line { accel: f64 },
    /// Constant-speed turn about the world z-axis; heading follows the
    /// tangent when the entry velocity is along the body x-axis.
    Arc { yaw_rate: f64 },
    /// Constant body rate and constant world velocity (rotating platform).
    Spin {
        omega: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// Gerono lemniscate `x = A sin(wt)`, `y = A/2 sin(2wt)` in the entry
    /// frame; yaw tracks the tangent.
    FigureEight { amplitude: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Piece {
    t0: f64,
    duration: f64,
    segment: Segment,
    entry: KinState,
}

fn yaw_rotation(angle: f64) -> Rotation {
    Rotation::from_yaw(angle)
}

impl Piece {
    fn eval(&self, tau: f64) -> KinState {
        let e = &self.entry;
        let r0 = e.pose.rotation;
        let p0 = e.pose.translation;
        let forward = r0.rotate(&Vector3::x());
        let s0 = e.velocity.dot(&forward);
        match self.segment {
            Segment::Hold => KinState::at_rest(e.pose),
            Segment::Line { accel } => KinState {
                pose: Pose::new(r0, p0 + forward * (s0 * tau + 0.5 * accel * tau * tau)),
                velocity: forward * (s0 + accel * tau),
                accel: forward * accel,
                omega: Vector3::zeros(),
            },
            Segment::Arc { yaw_rate: w } => {
                let (s, k) = if (w * tau).abs() < 1e-9 {
                    (tau, 0.5 * w * tau * tau)
                } else {
                    ((w * tau).sin() / w, (1.0 - (w * tau).cos()) / w)
                };
                let d = forward * s0;
                let offset = Vector3::new(s * d.x - k * d.y, k * d.x + s * d.y, tau * d.z);
                let turn = yaw_rotation(w * tau);
                let velocity = turn.rotate(&d);
                let rotation = turn * r0;
                KinState {
                    pose: Pose::new(rotation, p0 + offset),
                    velocity,
                    accel: Vector3::z().cross(&velocity) * w,
                    omega: rotation.inverse().rotate(&(Vector3::z() * w)),
                }
            }
            Segment::Spin { omega, velocity } => KinState {
                pose: Pose::new(r0 * Rotation::exp(&(omega * tau)), p0 + velocity * tau),
                velocity,
                accel: Vector3::zeros(),
                omega,
            },
            Segment::FigureEight { amplitude: a, rate: w } => {
                let (s1, c1) = (w * tau).sin_cos();
                let (s2, c2) = (2.0 * w * tau).sin_cos();
                let pos = Vector3::new(a * s1, 0.5 * a * s2, 0.0);
                let vel = Vector3::new(a * w * c1, a * w * c2, 0.0);
                let acc = Vector3::new(-a * w * w * s1, -2.0 * a * w * w * s2, 0.0);
                let yaw = vel.y.atan2(vel.x) - std::f64::consts::FRAC_PI_4;
                let yaw_rate = (vel.x * acc.y - vel.y * acc.x) / vel.xy().norm_squared();
                KinState {
                    pose: Pose::new(r0 * yaw_rotation(yaw), p0 + r0.rotate(&pos)),
                    velocity: r0.rotate(&vel),
                    accel: r0.rotate(&acc),
                    omega: Vector3::z() * yaw_rate,
                }
            }
        }
    }
}

/// Sequence of pieces starting at time 0 from a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: KinState,
    pieces: Vec<Piece>,
}

impl Trajectory {
    pub fn new(start: Pose) -> Self {
        Trajectory {
            start: KinState::at_rest(start),
            pieces: Vec::new(),
        }
    }

    /// Starts from a moving state (only `pose` and `velocity` matter).
    pub fn from_state(start: KinState) -> Self {
        Trajectory {
            start,
            pieces: Vec::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.t0 + p.duration)
    }

    fn end_state(&self) -> KinState {
        self.pieces
            .last()
            .map_or(self.start, |p| p.eval(p.duration))
    }

    /// Appends `segment` for `duration` seconds; non-positive durations are
    /// ignored.
    pub fn then(mut self, duration: f64, segment: Segment) -> Self {
        if duration > 0.0 && duration.is_finite() {
            let entry = self.end_state();
            let t0 = self.duration();
            self.pieces.push(Piece {
                t0,
                duration,
                segment,
                entry,
            });
        }
        self
    }

    pub fn hold(self, duration: f64) -> Self {
        self.then(duration, Segment::Hold)
    }

    pub fn line(self, duration: f64, accel: f64) -> Self {
        self.then(duration, Segment::Line { accel })
    }

    pub fn arc(self, duration: f64, yaw_rate: f64) -> Self {
        self.then(duration, Segment::Arc { yaw_rate })
    }

    pub fn spin(self, duration: f64, omega: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        self.then(duration, Segment::Spin { omega, velocity })
    }

    pub fn figure_eight(self, duration: f64, amplitude: f64, rate: f64) -> Self {
        self.then(duration, Segment::FigureEight { amplitude, rate })
    }

    /// Full kinematic state at time `t` in `[0, duration]`.
    pub fn state(&self, t: f64) -> Result<KinState> {
        let end = self.duration();
        if !(t >= 0.0 && t <= end) || self.pieces.is_empty() {
            return Err(Error::Extrapolation { t, start: 0.0, end });
        }
        let k = self.pieces.partition_point(|p| p.t0 <= t).max(1) - 1;
        let piece = &self.pieces[k];
        Ok(piece.eval((t - piece.t0).min(piece.duration)))
    }

    pub fn pose(&self, t: f64) -> Result<Pose> {
        Ok(self.state(t)?.pose)
    }

    /// Left-hand limit at an interior piece boundary within `1e-9` of `t`,
    /// where acceleration and angular rate may jump.
    pub fn left_limit(&self, t: f64) -> Option<KinState> {
        let k = self
            .pieces
            .get(1..)?
            .iter()
            .position(|p| (p.t0 - t).abs() <= 1e-9)?;
        let prev = &self.pieces[k];
        Some(prev.eval(prev.duration))
    }

    /// Rounded-rectangle circuit: start at rest in the middle of the first
    /// `length` side heading along it, hold, ramp up to `speed`, then lap
    /// (counter-clockwise) at constant speed until `duration` is reached.
    pub fn rounded_rectangle(
        start: Pose,
        length: f64,
        width: f64,
        radius: f64,
        speed: f64,
        hold: f64,
        ramp: f64,
        duration: f64,
    ) -> Result<Self> {
        if !(radius > 0.0 && 2.0 * radius <= length.min(width) && speed > 0.0 && ramp >= 0.0) {
            return Err(Error::InvalidArgument("rounded rectangle parameters".into()));
        }
        let accel = if ramp > 0.0 { speed / ramp } else { 0.0 };
        let ramp_dist = 0.5 * speed * ramp;
        let half = 0.5 * length - radius;
        if ramp_dist > half {
            return Err(Error::InvalidArgument("acceleration ramp longer than the first side".into()));
        }
        let mut traj = Trajectory::new(start).hold(hold).line(ramp, accel);
        let turn = FRAC_PI_2 * radius / speed;
        let legs = [
            (half - ramp_dist) / speed,
            -turn,
            (width - 2.0 * radius) / speed,
            -turn,
            (length - 2.0 * radius) / speed,
            -turn,
            (width - 2.0 * radius) / speed,
            -turn,
            half / speed,
        ];
        let mut k = 0;
        while traj.duration() < duration {
            let leg = legs[k % legs.len()];
            let remaining = duration - traj.duration();
            traj = if leg < 0.0 {
                traj.arc((-leg).min(remaining), speed / radius)
            } else {
                traj.line(leg.min(remaining), 0.0)
            };
            k += 1;
            // after the first lap the closing half-side joins the opening one
            if k % legs.len() == 0 {
                k += 1;
                let first = half / speed;
                let remaining = duration - traj.duration();
                traj = traj.line(first.min(remaining), 0.0);
            }
        }
        Ok(traj)
    }
}
