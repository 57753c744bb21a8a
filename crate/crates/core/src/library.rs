//! Built-in scenario families with planted near misses.
//!
//! Every family drives the ego along a long route (about 40 s) with one
//! planted conflict: an NPC whose path crosses the ego path and which, in the
//! nominal run, clears the conflict point `timing_gap` seconds before the ego
//! reaches it. The planted NPC starts from standstill, so swapping it for a
//! model with different acceleration shifts its arrival. Distractors
//! (sidewalk pedestrians, parked cars) populate the rest of the route.
//!
//! Geometry per family (ego starts at the origin heading east, lanes 3.5 m):
//! - `crossing-ahead`: straight road, a car crosses on a side street.
//! - `post-turn-obstacle`: the ego turns right; a car pulls out of a driveway
//!   and crosses the new road 30 m after the turn.
//! - `red-light-runner`: straight road, a fast car runs the cross street.
//! - `unprotected-left`: the ego turns left across an oncoming car that
//!   accelerates away from the opposite stop line.
//! - `right-turn-yield`: the ego turns right across a bicycle crossing the
//!   destination road just after the corner.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use crate::kinematics::KinematicState;
use crate::map::{ExclusionZone, Lane, ObstacleClass, StaticObstacle, Waypoint, WaypointId, WaypointMap};
use crate::model::{catalog_model, default_ego_model, ActorId, ActorModel};
use crate::scenario::{DriverConfig, NpcScript, PlanStep, Route, Scenario, SteeringMode, SCHEMA_VERSION};
use crate::sim::WorldState;

pub const TICK_RATE: f64 = 20.0;
pub const VARIANT_COUNT: usize = 5;
const LANE_WIDTH: f64 = 3.5;
const SIDEWALK_OFFSET: f64 = 7.0;
const PARKING_OFFSET: f64 = 7.5;
const WAYPOINT_SPACING: f64 = 4.0;
const ARC_SPACING: f64 = 2.0;
const PLANTED_ID: ActorId = ActorId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    CrossingAhead,
    PostTurnObstacle,
    RedLightRunner,
    UnprotectedLeft,
    RightTurnYield,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::CrossingAhead,
        Family::PostTurnObstacle,
        Family::RedLightRunner,
        Family::UnprotectedLeft,
        Family::RightTurnYield,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::CrossingAhead => "crossing-ahead",
            Family::PostTurnObstacle => "post-turn-obstacle",
            Family::RedLightRunner => "red-light-runner",
            Family::UnprotectedLeft => "unprotected-left",
            Family::RightTurnYield => "right-turn-yield",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Family::CrossingAhead => "a car crosses the ego road at a side street",
            Family::PostTurnObstacle => "a car pulls out across the road right after a right turn",
            Family::RedLightRunner => "a fast car runs the red light on the cross street",
            Family::UnprotectedLeft => "the ego turns left across oncoming traffic",
            Family::RightTurnYield => "the ego turns right across a crossing bicycle",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    /// Number of distractor NPCs.
    pub npc_count: usize,
    /// Seconds by which the planted NPC clears the conflict point before the
    /// ego reaches it in the nominal run. Zero forces a collision.
    pub timing_gap: f64,
    pub ego_speed: f64,
    pub npc_speed: f64,
    /// Distance the planted NPC travels from its standstill spawn to the
    /// conflict point, m.
    pub approach_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub family: Family,
    pub params: TemplateParams,
    pub seed: u64,
}

impl ScenarioTemplate {
    pub fn new(family: Family) -> Self {
        let (npc_speed, approach_distance, npc_count) = match family {
            Family::CrossingAhead => (8.0, 24.0, 5),
            Family::PostTurnObstacle => (7.5, 20.0, 4),
            Family::RedLightRunner => (11.0, 34.0, 5),
            Family::UnprotectedLeft => (9.0, 30.0, 4),
            Family::RightTurnYield => (6.5, 14.0, 4),
        };
        Self {
            family,
            params: TemplateParams {
                npc_count,
                timing_gap: 1.2,
                ego_speed: 10.0,
                npc_speed,
                approach_distance,
            },
            seed: 7,
        }
    }

    pub fn variant_count(&self) -> usize {
        VARIANT_COUNT
    }

    pub fn with_gap(mut self, gap: f64) -> Self {
        self.params.timing_gap = gap;
        self
    }
}

/// Polyline generator for lanes built from straights and circular arcs.
#[derive(Debug, Clone)]
struct PathBuilder {
    pts: Vec<Vec2>,
    heading: f64,
}

impl PathBuilder {
    fn new(start: Vec2, heading: f64) -> Self {
        Self {
            pts: vec![start],
            heading,
        }
    }

    fn pos(&self) -> Vec2 {
        *self.pts.last().unwrap()
    }

    fn straight(mut self, len: f64) -> Self {
        let n = (len / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        let start = self.pos();
        let dir = Vec2::from_angle(self.heading);
        for i in 1..=n {
            self.pts.push(start + dir * (len * i as f64 / n as f64));
        }
        self
    }

    /// Circular arc; positive `angle` turns left.
    fn arc(mut self, radius: f64, angle: f64) -> Self {
        let side = angle.signum();
        let start = self.pos();
        let center = start + Vec2::from_angle(self.heading + side * std::f64::consts::FRAC_PI_2) * radius;
        let n = (radius * angle.abs() / ARC_SPACING).ceil().max(1.0) as usize;
        let r0 = start - center;
        for i in 1..=n {
            self.pts.push(center + r0.rotate(angle * i as f64 / n as f64));
        }
        self.heading += angle;
        self
    }
}

/// Position and direction at arc length `s` along a polyline.
fn point_at(pts: &[Vec2], s: f64) -> (Vec2, Vec2) {
    let mut left = s;
    for w in pts.windows(2) {
        let len = w[0].distance(w[1]);
        let dir = (w[1] - w[0]) * (1.0 / len);
        if left <= len {
            return (w[0] + dir * left, dir);
        }
        left -= len;
    }
    let n = pts.len();
    let dir = (pts[n - 1] - pts[n - 2]) * (1.0 / pts[n - 1].distance(pts[n - 2]));
    (pts[n - 1] + dir * left, dir)
}

fn left_normal(dir: Vec2) -> Vec2 {
    Vec2::new(-dir.y, dir.x)
}

/// First crossing of `b` over `a`, in `a` order.
fn first_intersection(a: &[Vec2], b: &[Vec2]) -> Option<Vec2> {
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            let r = sa[1] - sa[0];
            let s = sb[1] - sb[0];
            let denom = r.cross(s);
            if denom.abs() < 1e-12 {
                continue;
            }
            let qp = sb[0] - sa[0];
            let t = qp.cross(s) / denom;
            let u = qp.cross(r) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                return Some(sa[0] + r * t);
            }
        }
    }
    None
}

struct IdAlloc(u32);

impl IdAlloc {
    fn lane(&mut self, name: &str, pts: &[Vec2]) -> Lane {
        let waypoints = pts
            .iter()
            .map(|&position| {
                let id = WaypointId(self.0);
                self.0 += 1;
                Waypoint { id, position }
            })
            .collect();
        Lane {
            name: name.into(),
            waypoints,
        }
    }
}

fn model(id: &str) -> ActorModel {
    catalog_model(id).expect("built-in model id")
}

fn plan(lane: &Lane, speed: f64) -> Vec<PlanStep> {
    lane.waypoints
        .iter()
        .map(|w| PlanStep {
            waypoint: w.id,
            target_speed: speed,
        })
        .collect()
}

/// Ego route layout: the full polyline plus the straight stretches where
/// distractors may be placed, as (start arc length, end arc length).
struct Layout {
    ego: Vec<Vec2>,
    npc_path: Vec<Vec2>,
    stretches: Vec<(f64, f64)>,
}

struct VariantKnobs {
    gap: f64,
    npc_speed: f64,
    approach: f64,
    shift: f64,
    side: f64,
    planted_model: &'static str,
}

fn knobs(t: &ScenarioTemplate, variant: usize) -> VariantKnobs {
    const SPEED: [f64; VARIANT_COUNT] = [0.0, 0.5, -0.5, 1.0, -1.0];
    const APPROACH: [f64; VARIANT_COUNT] = [0.0, 4.0, -2.0, 2.0, 6.0];
    const SHIFT: [f64; VARIANT_COUNT] = [0.0, 40.0, 80.0, 20.0, 60.0];
    let planted_model = match t.family {
        Family::RightTurnYield => "bicycle.road",
        _ => ["car.sport", "car.hatchback", "car.sport", "car.sedan", "car.hatchback"][variant],
    };
    VariantKnobs {
        gap: t.params.timing_gap + 0.4 * variant as f64,
        npc_speed: t.params.npc_speed + SPEED[variant],
        approach: t.params.approach_distance + APPROACH[variant],
        shift: SHIFT[variant],
        side: if variant.is_multiple_of(2) { 1.0 } else { -1.0 },
        planted_model,
    }
}

fn layout(family: Family, k: &VariantKnobs) -> Layout {
    let origin = PathBuilder::new(Vec2::ZERO, 0.0);
    match family {
        Family::CrossingAhead | Family::RedLightRunner => {
            let xc = 140.0 + k.shift;
            let ego = origin.straight(420.0).pts;
            // crossing direction alternates per variant; approach from the
            // right first for crossing-ahead, from the left for the runner
            let dir = if family == Family::CrossingAhead { k.side } else { -k.side };
            let npc_path = PathBuilder::new(Vec2::new(xc, -dir * k.approach), dir * FRAC_PI_2)
                .straight(k.approach + 40.0)
                .pts;
            Layout {
                ego,
                npc_path,
                stretches: vec![(20.0, xc - 40.0), (xc + 60.0, 400.0)],
            }
        }
        Family::PostTurnObstacle => {
            let s1 = 150.0 + k.shift;
            let r = 12.0;
            let b = origin.straight(s1).arc(r, -FRAC_PI_2);
            let corner = b.pos();
            let ego = b.straight(240.0).pts;
            let c = corner + Vec2::new(0.0, -30.0);
            let npc_path = PathBuilder::new(c + Vec2::new(k.side * k.approach, 0.0), if k.side > 0.0 { PI } else { 0.0 })
                .straight(k.approach + 30.0)
                .pts;
            let arc_len = r * FRAC_PI_2;
            Layout {
                ego,
                npc_path,
                stretches: vec![(20.0, s1 - 30.0), (s1 + arc_len + 90.0, s1 + arc_len + 230.0)],
            }
        }
        Family::UnprotectedLeft => {
            let s1 = 160.0 + k.shift;
            let r = 14.0;
            let ego = origin.straight(s1).arc(r, FRAC_PI_2).straight(230.0).pts;
            let conflict_x = s1 + (r * r - (r - LANE_WIDTH).powi(2)).sqrt();
            let npc_path = PathBuilder::new(Vec2::new(conflict_x + k.approach, LANE_WIDTH), PI)
                .straight(k.approach + 70.0)
                .pts;
            let arc_len = r * FRAC_PI_2;
            Layout {
                ego,
                npc_path,
                stretches: vec![(20.0, s1 - 40.0), (s1 + arc_len + 70.0, s1 + arc_len + 220.0)],
            }
        }
        Family::RightTurnYield => {
            let s1 = 160.0 + k.shift;
            let r = 10.0;
            let b = origin.straight(s1).arc(r, -FRAC_PI_2);
            let corner = b.pos();
            let ego = b.straight(230.0).pts;
            let c = corner + Vec2::new(0.0, -12.0);
            let npc_path = PathBuilder::new(c + Vec2::new(-k.side * k.approach, 0.0), if k.side > 0.0 { 0.0 } else { PI })
                .straight(k.approach + 25.0)
                .pts;
            let arc_len = r * FRAC_PI_2;
            Layout {
                ego,
                npc_path,
                stretches: vec![(20.0, s1 - 30.0), (s1 + arc_len + 60.0, s1 + arc_len + 220.0)],
            }
        }
    }
}

/// Time at which the actor first passes the line through `c` perpendicular
/// to `dir`, linearly interpolated between ticks.
fn crossing_time(positions: &[Vec2], c: Vec2, dir: Vec2, dt: f64) -> Option<f64> {
    let side = |p: Vec2| (p - c).dot(dir);
    positions.windows(2).enumerate().find_map(|(i, w)| {
        let (a, b) = (side(w[0]), side(w[1]));
        (a < 0.0 && b >= 0.0).then(|| (i as f64 + a / (a - b)) * dt)
    })
}

fn direction_at(pts: &[Vec2], c: Vec2) -> Vec2 {
    let seg = pts
        .windows(2)
        .min_by(|a, b| {
            crate::geom::point_segment_distance(c, a[0], a[1])
                .total_cmp(&crate::geom::point_segment_distance(c, b[0], b[1]))
        })
        .unwrap();
    (seg[1] - seg[0]) * (1.0 / seg[0].distance(seg[1]))
}

/// Positions of the ego (or of NPC `npc`) over `seconds` of unobstructed
/// motion; collisions are ignored.
fn sample_motion(scenario: &Scenario, npc: Option<ActorId>, seconds: f64) -> Result<Vec<Vec2>> {
    let mut world = WorldState::new(scenario)?;
    let dt = scenario.dt();
    let position = |w: &WorldState| match npc {
        None => w.ego.state.position(),
        Some(id) => w.npcs.iter().find(|n| n.id == id).map_or(Vec2::ZERO, |n| n.state.position()),
    };
    let mut out = vec![position(&world)];
    for _ in 0..(seconds * scenario.tick_rate) as usize {
        world.advance(dt);
        out.push(position(&world));
    }
    Ok(out)
}

/// Build variant `variant` of a template.
pub fn instantiate(template: &ScenarioTemplate, variant: usize) -> Result<Scenario> {
    if variant >= template.variant_count() {
        return Err(Error::UnknownVariant(format!("{}/{variant}", template.family)));
    }
    let p = &template.params;
    if !(p.timing_gap.is_finite() && p.timing_gap >= 0.0 && p.ego_speed > 0.0 && p.npc_speed > 0.0) {
        return Err(Error::InvalidConfig("template speeds must be positive and the gap >= 0".into()));
    }
    let k = knobs(template, variant);
    let lay = layout(template.family, &k);
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed ^ (template.family as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(variant as u64);

    let mut ids = IdAlloc(0);
    let ego_lane = ids.lane("ego", &lay.ego);
    ids.0 = 1000;
    let planted_lane = ids.lane("planted", &lay.npc_path[1..]);
    let ego_model = default_ego_model();
    let route_len: f64 = lay.ego.windows(2).map(|w| w[0].distance(w[1])).sum();
    let mut scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        id: format!("{}/{variant}", template.family),
        map: WaypointMap {
            lanes: vec![ego_lane.clone(), planted_lane.clone()],
            lane_width: LANE_WIDTH,
            static_obstacles: Vec::new(),
            exclusion_zones: Vec::new(),
        },
        route: Route {
            start: ego_lane.waypoints[0].id,
            end: ego_lane.waypoints.last().unwrap().id,
            via: Vec::new(),
        },
        ego_spawn: KinematicState::new(lay.ego[0], 0.0, p.ego_speed),
        ego_model,
        npcs: Vec::new(),
        duration_limit: route_len / p.ego_speed * 1.5 + 20.0,
        tick_rate: TICK_RATE,
        seed: template.seed,
        driver: DriverConfig {
            target_speed: p.ego_speed,
            ..DriverConfig::default()
        },
        origin: None,
    };

    // Planted NPC: time its trigger so it clears the conflict point
    // `timing_gap` seconds ahead of the ego.
    let npc_heading = (lay.npc_path[1] - lay.npc_path[0]).angle();
    let planted_model = model(k.planted_model);
    let speed = k.npc_speed.min(planted_model.max_speed);
    let planted = NpcScript {
        id: PLANTED_ID,
        actor: planted_model,
        spawn: KinematicState::new(lay.npc_path[0], npc_heading, 0.0),
        plan: plan(&planted_lane, speed),
        trigger_time: 0.0,
        steering_override: None,
        steering_mode: SteeringMode::Replace,
    };
    scenario.npcs.push(planted);
    let conflict = first_intersection(&lay.ego, &lay.npc_path)
        .ok_or_else(|| Error::InvalidConfig("planted path does not cross the route".into()))?;
    let npc_pos = sample_motion(&scenario, Some(PLANTED_ID), 30.0)?;
    let alone = Scenario {
        npcs: Vec::new(),
        ..scenario.clone()
    };
    let ego_pos = sample_motion(&alone, None, scenario.duration_limit)?;
    let dt = scenario.dt();
    let t_ego = crossing_time(&ego_pos, conflict, direction_at(&lay.ego, conflict), dt);
    let t_npc = crossing_time(&npc_pos, conflict, direction_at(&lay.npc_path, conflict), dt);
    let (Some(t_ego), Some(t_npc)) = (t_ego, t_npc) else {
        return Err(Error::InvalidConfig("planted conflict is never reached".into()));
    };
    let trigger = t_ego - k.gap - t_npc;
    if trigger < 0.0 {
        return Err(Error::InvalidConfig(format!("planted NPC would need to start {:.2} s early", -trigger)));
    }
    scenario.npcs[0].trigger_time = (trigger * 1000.0).round() / 1000.0;

    add_distractors(&mut scenario, &lay, &mut ids, &mut rng, p.npc_count);
    add_roadside(&mut scenario, &lay, &mut rng);
    scenario.validate()?;
    Ok(scenario)
}

/// Sidewalk pedestrians and parked cars in distinct 25 m slots of the
/// straight stretches.
fn add_distractors(scenario: &mut Scenario, lay: &Layout, ids: &mut IdAlloc, rng: &mut ChaCha8Rng, count: usize) {
    const SLOT: f64 = 25.0;
    let mut slots: Vec<f64> = Vec::new();
    for &(a, b) in &lay.stretches {
        let mut s = a;
        while s + SLOT <= b {
            slots.push(s);
            s += SLOT;
        }
    }
    for n in 0..count.min(slots.len()) {
        let slot = slots.remove(rng.random_range(0..slots.len()));
        let id = ActorId(2 + n as u32);
        let s = slot + rng.random_range(0.0..SLOT / 2.0);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (pos, dir) = point_at(&lay.ego, s);
        ids.0 = 2000 + 100 * n as u32;
        if rng.random_bool(0.7) {
            let start = pos + left_normal(dir) * (side * SIDEWALK_OFFSET);
            let forward = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let walk = dir * forward;
            let pts: Vec<Vec2> = (1..=6).map(|i| start + walk * (4.0 * i as f64)).collect();
            let lane = ids.lane(&format!("sidewalk-{n}"), &pts);
            let actor = model(["pedestrian.adult", "pedestrian.child", "pedestrian.elderly"][n % 3]);
            let speed = rng.random_range(1.0..1.4f64).min(actor.max_speed);
            scenario.map.lanes.push(lane.clone());
            scenario.npcs.push(NpcScript {
                id,
                actor,
                spawn: KinematicState::new(start, walk.angle(), speed),
                plan: plan(&lane, speed),
                trigger_time: 0.0,
                steering_override: None,
                steering_mode: SteeringMode::Replace,
            });
        } else {
            let start = pos - left_normal(dir) * PARKING_OFFSET;
            let lane = ids.lane(&format!("parking-{n}"), &[start + dir * 3.0]);
            scenario.map.lanes.push(lane.clone());
            scenario.npcs.push(NpcScript {
                id,
                actor: model(["car.compact", "car.suv", "car.van"][n % 3]),
                spawn: KinematicState::new(start, dir.angle(), 0.0),
                plan: plan(&lane, 0.0),
                trigger_time: 0.0,
                steering_override: None,
                steering_mode: SteeringMode::Replace,
            });
        }
    }
}

/// Poles beside the first stretch and one exclusion zone off the road.
fn add_roadside(scenario: &mut Scenario, lay: &Layout, rng: &mut ChaCha8Rng) {
    let (a, b) = lay.stretches[0];
    for i in 0..2u32 {
        let s = rng.random_range(a..b);
        let (pos, dir) = point_at(&lay.ego, s);
        scenario.map.static_obstacles.push(StaticObstacle {
            id: i,
            class: ObstacleClass::Pole,
            shape: Rect::new(pos + left_normal(dir) * 5.0, dir.angle(), 0.4, 0.4),
        });
    }
    let (pos, dir) = point_at(&lay.ego, (a + b) / 2.0);
    scenario.map.exclusion_zones.push(ExclusionZone {
        id: 0,
        shape: Rect::new(pos - left_normal(dir) * 15.0, dir.angle(), 6.0, 3.0),
    });
}

/// Straight eastbound road from the origin with no NPCs or roadside objects.
/// The ego spawns at the origin cruising at `speed`.
pub fn empty_road(length: f64, speed: f64) -> Scenario {
    let mut map = WaypointMap {
        lanes: Vec::new(),
        lane_width: LANE_WIDTH,
        static_obstacles: Vec::new(),
        exclusion_zones: Vec::new(),
    };
    let pts = PathBuilder::new(Vec2::ZERO, 0.0).straight(length).pts;
    let ids = map.add_lane("ego", &pts);
    Scenario {
        schema_version: SCHEMA_VERSION,
        id: "empty-road".into(),
        map,
        route: Route {
            start: ids[0],
            end: *ids.last().unwrap(),
            via: Vec::new(),
        },
        ego_model: default_ego_model(),
        ego_spawn: KinematicState::new(Vec2::ZERO, 0.0, speed),
        npcs: Vec::new(),
        duration_limit: length / speed.max(1.0) * 1.5 + 20.0,
        tick_rate: TICK_RATE,
        seed: 0,
        driver: DriverConfig {
            target_speed: speed,
            ..DriverConfig::default()
        },
        origin: None,
    }
}

/// Resolve `family/variant` (variant defaults to 0) or `empty-road`.
pub fn lookup(name: &str) -> Result<Scenario> {
    if name == "empty-road" {
        return Ok(empty_road(200.0, 10.0));
    }
    let (family, variant) = match name.split_once('/') {
        Some((f, v)) => (f, v.parse::<usize>().map_err(|_| Error::UnknownVariant(name.into()))?),
        None => (name, 0),
    };
    instantiate(&ScenarioTemplate::new(family.parse()?), variant)
}

/// Every variant of every family, in family order.
pub fn planted_suite() -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for family in Family::ALL {
        let t = ScenarioTemplate::new(family);
        for v in 0..t.variant_count() {
            out.push(instantiate(&t, v)?);
        }
    }
    Ok(out)
}

/// Names of all built-in scenarios.
pub fn names() -> Vec<String> {
    Family::ALL
        .iter()
        .flat_map(|f| (0..VARIANT_COUNT).map(move |v| format!("{f}/{v}")))
        .collect()
}
