//! Per-actor state and the discrete-time motion models.

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_angle, Rect, Vec2};
use crate::model::ActorModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    /// Radians in `[-π, π)`, counter-clockwise from +x.
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub pose: Pose,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl KinematicState {
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        Self {
            pose: Pose::new(position, heading),
            speed,
            yaw_rate: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position
    }

    pub fn footprint(&self, length: f64, width: f64) -> Rect {
        Rect::new(self.pose.position, self.pose.heading, length, width)
    }
}

/// Normalized actuation. `steer` negative turns left (counter-clockwise);
/// `accel` positive scales `max_accel`, negative scales `max_decel`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steer: f64,
    pub accel: f64,
}

/// Advance a pose along a constant-curvature arc.
///
/// The arc length is the trapezoidal distance `(v0 + v1) / 2 · dt` and the
/// heading change is `yaw_rate · dt`. This is the single integration rule for
/// every actor; trajectory re-integration reuses it so that replaying recorded
/// speeds and yaw rates reproduces recorded positions bit for bit.
pub fn advance_pose(pose: Pose, v0: f64, v1: f64, yaw_rate: f64, dt: f64) -> Pose {
    let arc = 0.5 * (v0 + v1) * dt;
    let turn = yaw_rate * dt;
    let half = 0.5 * turn;
    let chord = if half.abs() < 1e-9 {
        arc
    } else {
        arc * half.sin() / half
    };
    let position = pose.position + Vec2::from_angle(pose.heading + half) * chord;
    Pose {
        position,
        heading: normalize_angle(pose.heading + turn),
    }
}

fn next_speed(model: &ActorModel, v0: f64, accel_cmd: f64, dt: f64) -> f64 {
    let a = accel_cmd.clamp(-1.0, 1.0);
    let accel = if a >= 0.0 {
        a * model.max_accel
    } else {
        a * model.max_decel
    };
    (v0 + accel * dt).clamp(0.0, model.max_speed)
}

/// Kinematic bicycle model step for cars and bicycles.
pub fn step_vehicle(
    state: &KinematicState,
    model: &ActorModel,
    cmd: ControlCommand,
    dt: f64,
) -> KinematicState {
    let v0 = state.speed;
    let v1 = next_speed(model, v0, cmd.accel, dt);
    let steer_angle = -cmd.steer.clamp(-1.0, 1.0) * model.max_steer;
    let yaw_rate = 0.5 * (v0 + v1) * steer_angle.tan() / model.wheelbase();
    KinematicState {
        pose: advance_pose(state.pose, v0, v1, yaw_rate, dt),
        speed: v1,
        yaw_rate,
    }
}

/// Point-mass step for pedestrians: heading turns toward `desired_heading`
/// at most at the model's turn rate.
pub fn step_pedestrian(
    state: &KinematicState,
    model: &ActorModel,
    desired_heading: f64,
    accel_cmd: f64,
    dt: f64,
) -> KinematicState {
    let v0 = state.speed;
    let v1 = next_speed(model, v0, accel_cmd, dt);
    let max_turn = model.max_yaw_rate() * dt;
    let turn = normalize_angle(desired_heading - state.pose.heading).clamp(-max_turn, max_turn);
    let yaw_rate = turn / dt;
    KinematicState {
        pose: advance_pose(state.pose, v0, v1, yaw_rate, dt),
        speed: v1,
        yaw_rate,
    }
}
