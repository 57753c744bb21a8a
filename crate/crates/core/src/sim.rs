//! Fixed-timestep traffic simulation: world state, ego driver, collision
//! classification and the run loop.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use crate::kinematics::{step_pedestrian, step_vehicle, ControlCommand, KinematicState};
use crate::map::{StaticObstacle, Waypoint, MAX_CONNECTOR_LENGTH};
use crate::model::{ActorClass, ActorId, ActorModel};
use crate::scenario::{DriverConfig, NpcScript, Scenario, SteeringMode};
use crate::telemetry::{ActorInfo, Trace, TraceFrame};

/// Ego speed below which a tick counts toward the stuck timer, m/s.
pub const STUCK_SPEED: f64 = 0.1;
/// Continuous time below [`STUCK_SPEED`] that ends a run as stuck, s.
pub const STUCK_SECONDS: f64 = 10.0;
/// Distance from the final route waypoint within which passing it completes the route, m.
const COMPLETION_RADIUS: f64 = 5.0;
const NPC_SPEED_GAIN: f64 = 1.0;
const NPC_LOOKAHEAD_MIN: f64 = 3.0;
const NPC_LOOKAHEAD_GAIN: f64 = 0.4;
const PEDESTRIAN_LOOKAHEAD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureType {
    /// Static object beyond the road (pole, pavement, barrier).
    F1,
    /// Pedestrian.
    F2,
    /// Frontal vehicle contact.
    F3,
    /// Lateral vehicle contact.
    F4,
    /// Rear vehicle contact.
    F5,
}

impl FailureType {
    pub const ALL: [FailureType; 5] = [
        FailureType::F1,
        FailureType::F2,
        FailureType::F3,
        FailureType::F4,
        FailureType::F5,
    ];
}

impl fmt::Display for FailureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionPartner {
    Actor(ActorId),
    Obstacle(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Completed,
    Collision,
    Stuck,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_type: Option<FailureType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<CollisionPartner>,
    /// Set when a stuck outcome came from exhausting the duration limit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timed_out: bool,
}

impl Outcome {
    pub fn completed() -> Self {
        Self {
            kind: OutcomeKind::Completed,
            failure_type: None,
            frame: None,
            other: None,
            timed_out: false,
        }
    }

    pub fn stuck(timed_out: bool) -> Self {
        Self {
            kind: OutcomeKind::Stuck,
            timed_out,
            ..Self::completed()
        }
    }

    pub fn collision(contact: Contact, frame: usize) -> Self {
        Self {
            kind: OutcomeKind::Collision,
            failure_type: Some(contact.failure_type),
            frame: Some(frame),
            other: Some(contact.other),
            timed_out: false,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.kind == OutcomeKind::Collision
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub failure_type: FailureType,
    pub other: CollisionPartner,
}

/// Classify a vehicle-vehicle contact by the bearing of the contact point in
/// the ego frame: within ±45° of the heading is frontal, within ±45° of the
/// rear is rear, everything else lateral.
pub fn classify_vehicle_contact(ego: &Rect, other: &Rect) -> FailureType {
    let contact = ego.contact_point(other);
    let local = (contact - ego.center).rotate(-ego.heading);
    let bearing = local.y.atan2(local.x).abs();
    if bearing <= FRAC_PI_4 {
        FailureType::F3
    } else if bearing >= PI - FRAC_PI_4 {
        FailureType::F5
    } else {
        FailureType::F4
    }
}

/// Progress of an actor along a waypoint polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFollower {
    pub points: Vec<Vec2>,
    /// Index of the first point not yet passed; `points.len()` when done.
    pub next: usize,
}

fn unit(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n == 0.0 {
        Vec2::ZERO
    } else {
        v * (1.0 / n)
    }
}

/// Whether `pos` has passed point `i` of `points`: it lies beyond the line
/// through the point perpendicular to the bisector of the adjoining segments.
pub fn has_passed(points: &[Vec2], i: usize, pos: Vec2) -> bool {
    let p = points[i];
    let out = if i + 1 < points.len() {
        unit(points[i + 1] - p)
    } else {
        Vec2::ZERO
    };
    let inc = if i > 0 { unit(p - points[i - 1]) } else { Vec2::ZERO };
    let dir = match (inc == Vec2::ZERO, out == Vec2::ZERO) {
        (true, true) => return true,
        (true, false) => out,
        (false, true) => inc,
        (false, false) => inc + out,
    };
    (pos - p).dot(dir) >= 0.0
}

/// Advance the next-point index past every point `pos` has passed.
pub fn advance_progress(points: &[Vec2], mut next: usize, pos: Vec2) -> usize {
    while next < points.len() && has_passed(points, next, pos) {
        next += 1;
    }
    next
}

impl PathFollower {
    pub fn new(points: Vec<Vec2>) -> Self {
        Self { points, next: 0 }
    }

    pub fn update(&mut self, pos: Vec2) {
        self.next = advance_progress(&self.points, self.next, pos);
    }

    pub fn done(&self) -> bool {
        self.next >= self.points.len()
    }

    /// Point `distance` ahead, walking straight to the next unpassed point and
    /// then along the polyline; extrapolates past the final point.
    pub fn lookahead(&self, pos: Vec2, distance: f64) -> Vec2 {
        let mut remaining = distance;
        let mut from = pos;
        for &p in &self.points[self.next.min(self.points.len())..] {
            let seg = p - from;
            let len = seg.norm();
            if len >= remaining && len > 0.0 {
                return from + seg * (remaining / len);
            }
            remaining -= len;
            from = p;
        }
        let n = self.points.len();
        let dir = if n >= 2 {
            unit(self.points[n - 1] - self.points[n - 2])
        } else {
            unit(self.points[n - 1] - pos)
        };
        from + dir * remaining
    }

    pub fn remaining_distance(&self, pos: Vec2) -> f64 {
        let mut from = pos;
        let mut total = 0.0;
        for &p in &self.points[self.next.min(self.points.len())..] {
            total += from.distance(p);
            from = p;
        }
        total
    }
}

fn pure_pursuit_angle(state: &KinematicState, wheelbase: f64, target: Vec2) -> f64 {
    let local = (target - state.pose.position).rotate(-state.pose.heading);
    let ld = local.norm();
    if ld < 1e-9 {
        return 0.0;
    }
    let alpha = local.y.atan2(local.x);
    (2.0 * wheelbase * alpha.sin() / ld).atan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpcStatus {
    Pending,
    Active,
    Despawned,
}

#[derive(Debug, Clone)]
pub struct NpcRuntime {
    pub id: ActorId,
    pub model: ActorModel,
    pub state: KinematicState,
    pub follower: PathFollower,
    /// Target speed while heading to each path point.
    pub speeds: Vec<f64>,
    pub hold_at_end: bool,
    pub trigger_tick: u64,
    pub status: NpcStatus,
    pub steering_override: Option<f64>,
    pub steering_mode: SteeringMode,
    spawn: KinematicState,
}

impl NpcRuntime {
    fn from_script(script: &NpcScript, scenario: &Scenario) -> Result<Self> {
        let mut points = vec![script.spawn.pose.position];
        let mut speeds = vec![script.plan[0].target_speed];
        for step in &script.plan {
            let p = scenario.map.waypoint(step.waypoint).ok_or_else(|| {
                Error::InvalidScenario(format!("unknown waypoint {}", step.waypoint))
            })?;
            points.push(p);
            speeds.push(step.target_speed);
        }
        let hold_at_end = script.plan.last().is_some_and(|s| s.target_speed == 0.0);
        Ok(Self {
            id: script.id,
            model: script.actor.clone(),
            state: script.spawn,
            follower: PathFollower::new(points),
            speeds,
            hold_at_end,
            trigger_tick: trigger_tick(script.trigger_time, scenario.tick_rate),
            status: NpcStatus::Pending,
            steering_override: script.steering_override,
            steering_mode: script.steering_mode,
            spawn: script.spawn,
        })
    }

    pub fn is_active(&self) -> bool {
        self.status == NpcStatus::Active
    }

    pub fn footprint(&self) -> Rect {
        self.state.footprint(self.model.length, self.model.width)
    }

    fn target_speed(&self) -> f64 {
        let f = &self.follower;
        if f.done() {
            return 0.0;
        }
        let last = f.points.len() - 1;
        if self.hold_at_end && f.next == last {
            let cruise = if last >= 2 {
                self.speeds[last - 1]
            } else {
                self.spawn.speed
            };
            let braking = 0.5 * self.model.max_decel;
            let d = (f.remaining_distance(self.state.position()) - 0.3).max(0.0);
            return cruise.min((2.0 * braking * d).sqrt());
        }
        self.speeds[f.next]
    }

    fn advance(&mut self, dt: f64) {
        let v_target = self.target_speed();
        let accel = (NPC_SPEED_GAIN * (v_target - self.state.speed)).clamp(-1.0, 1.0);
        let pos = self.state.position();
        if self.model.class.is_vehicle() {
            let scripted = if self.follower.done() {
                0.0
            } else {
                let ld = NPC_LOOKAHEAD_MIN.max(NPC_LOOKAHEAD_GAIN * self.state.speed);
                let target = self.follower.lookahead(pos, ld);
                let delta = pure_pursuit_angle(&self.state, self.model.wheelbase(), target);
                -delta / self.model.max_steer
            };
            let steer = match (self.steering_override, self.steering_mode) {
                (None, _) => scripted,
                (Some(ov), SteeringMode::Replace) => ov,
                (Some(ov), SteeringMode::Offset) => scripted + ov,
            };
            let cmd = ControlCommand {
                steer: steer.clamp(-1.0, 1.0),
                accel,
            };
            self.state = step_vehicle(&self.state, &self.model, cmd, dt);
        } else {
            let heading = if self.follower.done() {
                self.state.pose.heading
            } else {
                (self.follower.lookahead(pos, PEDESTRIAN_LOOKAHEAD) - pos).angle()
            };
            self.state = step_pedestrian(&self.state, &self.model, heading, accel, dt);
        }
    }
}

pub fn trigger_tick(trigger_time: f64, tick_rate: f64) -> u64 {
    (trigger_time * tick_rate - 1e-6).ceil().max(0.0) as u64
}

#[derive(Debug, Clone)]
pub struct EgoRuntime {
    pub model: ActorModel,
    pub state: KinematicState,
    pub follower: PathFollower,
}

impl EgoRuntime {
    pub fn footprint(&self) -> Rect {
        self.state.footprint(self.model.length, self.model.width)
    }
}

/// Complete simulator state at one tick.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub tick_rate: f64,
    pub ego: EgoRuntime,
    pub npcs: Vec<NpcRuntime>,
    pub obstacles: Vec<StaticObstacle>,
    pub driver: DriverConfig,
    pub stuck_ticks: u64,
}

/// Resolve a scenario route into its waypoint polyline, checking that it is
/// reachable from the ego spawn.
pub fn route_path(scenario: &Scenario) -> Result<Vec<Waypoint>> {
    let path = scenario.map.resolve_path(&scenario.route.anchors())?;
    let gap = scenario.ego_spawn.pose.position.distance(path[0].position);
    if gap > MAX_CONNECTOR_LENGTH {
        return Err(Error::InvalidScenario(format!(
            "route start {} is {gap:.1} m from the ego spawn",
            path[0].id
        )));
    }
    Ok(path)
}

impl WorldState {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let route = route_path(scenario)?;
        let npcs = scenario
            .npcs
            .iter()
            .map(|n| NpcRuntime::from_script(n, scenario))
            .collect::<Result<Vec<_>>>()?;
        let mut world = Self {
            tick: 0,
            tick_rate: scenario.tick_rate,
            ego: EgoRuntime {
                model: scenario.ego_model.clone(),
                state: scenario.ego_spawn,
                follower: PathFollower::new(route.iter().map(|w| w.position).collect()),
            },
            npcs,
            obstacles: scenario.map.static_obstacles.clone(),
            driver: scenario.driver.clone(),
            stuck_ticks: 0,
        };
        world.spawn_and_track();
        Ok(world)
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.tick_rate
    }

    pub fn active_npcs(&self) -> impl Iterator<Item = &NpcRuntime> {
        self.npcs.iter().filter(|n| n.is_active())
    }

    fn spawn_and_track(&mut self) {
        for npc in &mut self.npcs {
            if npc.status == NpcStatus::Pending && npc.trigger_tick <= self.tick {
                npc.status = NpcStatus::Active;
            }
            if npc.is_active() {
                npc.follower.update(npc.state.position());
                if npc.follower.done() && !npc.hold_at_end {
                    npc.status = NpcStatus::Despawned;
                }
            }
        }
        let pos = self.ego.state.position();
        self.ego.follower.update(pos);
    }

    /// Smallest forecast time-to-collision against any actor or obstacle in
    /// the perception cone, under a constant-velocity rollout.
    pub fn forecast_ttc(&self) -> Option<f64> {
        let cfg = &self.driver;
        let ego = &self.ego.state;
        let heading = ego.pose.heading;
        let ego_dir = Vec2::from_angle(heading);
        let ego_rect = self.ego.footprint().inflated(cfg.safety_margin);
        let v_eval = ego.speed.max(cfg.min_forecast_speed);
        let in_cone = |p: Vec2| {
            let rel = (p - ego.pose.position).rotate(-heading);
            rel.norm() <= cfg.look_ahead_range && rel.y.atan2(rel.x).abs() <= cfg.cone_half_angle
        };
        let steps = (cfg.ttc_horizon / cfg.ttc_step).round() as usize;
        let rollout = |other: Rect, vel: Vec2| -> Option<f64> {
            (0..=steps).find_map(|k| {
                let t = k as f64 * cfg.ttc_step;
                let e = Rect {
                    center: ego_rect.center + ego_dir * (v_eval * t),
                    ..ego_rect
                };
                let o = Rect {
                    center: other.center + vel * t,
                    ..other
                };
                e.overlaps(&o).then_some(t)
            })
        };
        let mut best: Option<f64> = None;
        let mut consider = |t: Option<f64>| {
            if let Some(t) = t {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        };
        for npc in self.active_npcs() {
            if in_cone(npc.state.position()) {
                let vel = Vec2::from_angle(npc.state.pose.heading) * npc.state.speed;
                consider(rollout(npc.footprint(), vel));
            }
        }
        for obs in &self.obstacles {
            if in_cone(obs.shape.center) {
                consider(rollout(obs.shape, Vec2::ZERO));
            }
        }
        best
    }

    /// Rule-based ego driver: pure pursuit along the route plus proportional
    /// speed tracking, overridden by full braking when the forecast TTC falls
    /// to the braking threshold.
    pub fn drive_ego(&self) -> ControlCommand {
        let cfg = &self.driver;
        let ego = &self.ego;
        let s = &ego.state;
        let ld = cfg.lookahead_min.max(cfg.lookahead_gain * s.speed);
        let target = ego.follower.lookahead(s.position(), ld);
        let delta = pure_pursuit_angle(s, ego.model.wheelbase(), target);
        let steer = (-delta / ego.model.max_steer).clamp(-1.0, 1.0);
        let v_target = cfg.target_speed.min(ego.model.max_speed);
        let mut accel = (cfg.speed_gain * (v_target - s.speed)).clamp(-1.0, 1.0);
        if cfg.braking && self.forecast_ttc().is_some_and(|t| t <= cfg.ttc_brake) {
            accel = -1.0;
        }
        ControlCommand { steer, accel }
    }

    /// Advance the world in place by one tick of length `dt`.
    pub fn advance(&mut self, dt: f64) {
        let cmd = self.drive_ego();
        self.ego.state = step_vehicle(&self.ego.state, &self.ego.model, cmd, dt);
        for npc in self.npcs.iter_mut().filter(|n| n.is_active()) {
            npc.advance(dt);
        }
        self.tick += 1;
        self.spawn_and_track();
        if self.ego.state.speed < STUCK_SPEED {
            self.stuck_ticks += 1;
        } else {
            self.stuck_ticks = 0;
        }
    }

    /// Pure single-step transition.
    pub fn step(&self, dt: f64) -> WorldState {
        let mut next = self.clone();
        next.advance(dt);
        next
    }

    pub fn detect_collision(&self) -> Option<Contact> {
        let ego = self.ego.footprint();
        for npc in self.active_npcs() {
            let other = npc.footprint();
            if ego.overlaps(&other) {
                let failure_type = match npc.model.class {
                    ActorClass::Pedestrian => FailureType::F2,
                    _ => classify_vehicle_contact(&ego, &other),
                };
                return Some(Contact {
                    failure_type,
                    other: CollisionPartner::Actor(npc.id),
                });
            }
        }
        self.obstacles
            .iter()
            .find(|o| ego.overlaps(&o.shape))
            .map(|o| Contact {
                failure_type: FailureType::F1,
                other: CollisionPartner::Obstacle(o.id),
            })
    }

    pub fn ego_completed(&self) -> bool {
        let f = &self.ego.follower;
        f.done() && self.ego.state.position().distance(*f.points.last().unwrap()) <= COMPLETION_RADIUS
    }

    pub fn frame(&self) -> TraceFrame {
        TraceFrame {
            t: self.time(),
            tick: self.tick as usize,
            ego: self.ego.state,
            npcs: self
                .active_npcs()
                .map(|n| (n.id, n.state))
                .collect::<BTreeMap<_, _>>(),
        }
    }
}

/// Execute a scenario to completion, collision, stuck or timeout.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    let started = Instant::now();
    let mut world = WorldState::new(scenario)?;
    let dt = scenario.dt();
    let stuck_limit = (STUCK_SECONDS * scenario.tick_rate).round() as u64;
    let tick_limit = (scenario.duration_limit * scenario.tick_rate - 1e-9).ceil() as u64;
    let mut frames = vec![world.frame()];
    let outcome = loop {
        if let Some(contact) = world.detect_collision() {
            break Outcome::collision(contact, world.tick as usize);
        }
        if world.ego_completed() {
            break Outcome::completed();
        }
        if world.stuck_ticks >= stuck_limit {
            break Outcome::stuck(false);
        }
        if world.tick >= tick_limit {
            break Outcome::stuck(true);
        }
        world.advance(dt);
        frames.push(world.frame());
    };
    let mut actors = vec![ActorInfo::of(ActorId::EGO, &scenario.ego_model)];
    actors.extend(scenario.npcs.iter().map(|n| ActorInfo::of(n.id, &n.actor)));
    Ok(Trace {
        scenario_id: scenario.id.clone(),
        tick_rate: scenario.tick_rate,
        actors,
        frames,
        outcome,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
