//! Fixtures shared by unit tests.

use std::collections::BTreeMap;

use crate::geom::Vec2;
use crate::kinematics::KinematicState;
use crate::library::empty_road;
use crate::model::{catalog_model, default_ego_model, ActorId};
use crate::scenario::{NpcScript, PlanStep, Scenario, SteeringMode};
use crate::sim::Outcome;
use crate::telemetry::{ActorInfo, Trace, TraceFrame};

pub fn road() -> Scenario {
    empty_road(200.0, 10.0)
}

/// Points every `spacing` m from `a` to `b`, both ends included.
pub fn line(a: Vec2, b: Vec2, spacing: f64) -> Vec<Vec2> {
    let n = (a.distance(b) / spacing).ceil().max(1.0) as usize;
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

/// Add an NPC that spawns at `path[0]` and follows the rest of `path`.
pub fn add_npc(scenario: &mut Scenario, id: u32, model: &str, path: &[Vec2], speed: f64, trigger: f64) {
    let actor = catalog_model(model).unwrap();
    let ids = scenario.map.add_lane(&format!("npc-{id}"), &path[1..]);
    let heading = (path[1] - path[0]).angle();
    scenario.npcs.push(NpcScript {
        id: ActorId(id),
        spawn: KinematicState::new(path[0], heading, speed.min(actor.max_speed)),
        plan: ids
            .into_iter()
            .map(|waypoint| PlanStep {
                waypoint,
                target_speed: speed.min(actor.max_speed),
            })
            .collect(),
        trigger_time: trigger,
        steering_override: None,
        steering_mode: SteeringMode::Replace,
        actor,
    });
}

fn state_along(points: &[Vec2], i: usize, dt: f64) -> KinematicState {
    let (a, b) = if i + 1 < points.len() {
        (points[i], points[i + 1])
    } else if i > 0 {
        (points[i - 1], points[i])
    } else {
        (points[0], points[0] + Vec2::new(1.0, 0.0))
    };
    let heading = if a == b { 0.0 } else { (b - a).angle() };
    let speed = if points.len() > 1 { a.distance(b) / dt } else { 0.0 };
    KinematicState::new(points[i], heading, speed)
}

/// Completed trace at 20 Hz from explicit positions. NPC `k` is alive on
/// the frames where its entry is `Some`; its model is `models[k]`.
pub fn synthetic_trace(ego: &[Vec2], npcs: &[(u32, &str, Vec<Option<Vec2>>)]) -> Trace {
    let dt = 0.05;
    let ego_model = default_ego_model();
    let mut actors = vec![ActorInfo::of(ActorId::EGO, &ego_model)];
    for (id, model, _) in npcs {
        actors.push(ActorInfo::of(ActorId(*id), &catalog_model(model).unwrap()));
    }
    let frames = (0..ego.len())
        .map(|i| {
            let mut map = BTreeMap::new();
            for (id, _, pos) in npcs {
                if let Some(Some(p)) = pos.get(i) {
                    let next = pos.get(i + 1).copied().flatten();
                    let prev = i.checked_sub(1).and_then(|j| pos[j]);
                    let pts: Vec<Vec2> = match (prev, next) {
                        (_, Some(n)) => vec![*p, n],
                        (Some(pr), None) => vec![pr, *p],
                        _ => vec![*p],
                    };
                    let k = if next.is_some() || pts.len() == 1 { 0 } else { 1 };
                    map.insert(ActorId(*id), state_along(&pts, k, dt));
                }
            }
            TraceFrame {
                t: i as f64 * dt,
                tick: i,
                ego: state_along(ego, i, dt),
                npcs: map,
            }
        })
        .collect();
    Trace {
        scenario_id: "synthetic".into(),
        tick_rate: 20.0,
        actors,
        frames,
        outcome: Outcome::completed(),
        wall_time: 0.0,
    }
}

/// Ego driving east along y = 0 at `speed` for `frames` frames.
pub fn ego_east(frames: usize, speed: f64) -> Vec<Vec2> {
    (0..frames).map(|i| Vec2::new(speed * 0.05 * i as f64, 0.0)).collect()
}

/// All-pairs segment intersection in exact rational arithmetic. A single
/// point counts as a degenerate segment; touching counts as crossing.
pub fn crosses_exact(a: &[Vec2], b: &[Vec2]) -> bool {
    use num_rational::BigRational;
    use num_traits::{Signed, Zero};

    type P = (BigRational, BigRational);
    let q = |v: Vec2| -> P { (BigRational::from_float(v.x).unwrap(), BigRational::from_float(v.y).unwrap()) };
    let segs = |poly: &[Vec2]| -> Vec<(P, P)> {
        match poly.len() {
            0 => Vec::new(),
            1 => vec![(q(poly[0]), q(poly[0]))],
            _ => poly.windows(2).map(|w| (q(w[0]), q(w[1]))).collect(),
        }
    };
    let orient = |a: &P, b: &P, c: &P| -> i8 {
        let v = (&b.0 - &a.0) * (&c.1 - &a.1) - (&b.1 - &a.1) * (&c.0 - &a.0);
        if v.is_zero() {
            0
        } else if v.is_positive() {
            1
        } else {
            -1
        }
    };
    let within = |a: &P, b: &P, c: &P| {
        let (lo_x, hi_x) = if a.0 <= b.0 { (&a.0, &b.0) } else { (&b.0, &a.0) };
        let (lo_y, hi_y) = if a.1 <= b.1 { (&a.1, &b.1) } else { (&b.1, &a.1) };
        lo_x <= &c.0 && &c.0 <= hi_x && lo_y <= &c.1 && &c.1 <= hi_y
    };
    let raw = |poly: &[Vec2]| -> Vec<(Vec2, Vec2)> {
        match poly.len() {
            0 => Vec::new(),
            1 => vec![(poly[0], poly[0])],
            _ => poly.windows(2).map(|w| (w[0], w[1])).collect(),
        }
    };
    // Box rejection compares the original floats, which is exact.
    let disjoint = |(a0, a1): (Vec2, Vec2), (b0, b1): (Vec2, Vec2)| {
        a0.x.max(a1.x) < b0.x.min(b1.x)
            || b0.x.max(b1.x) < a0.x.min(a1.x)
            || a0.y.max(a1.y) < b0.y.min(b1.y)
            || b0.y.max(b1.y) < a0.y.min(a1.y)
    };
    let (ra, rb) = (raw(a), raw(b));
    let sa = segs(a);
    let sb = segs(b);
    sa.iter().enumerate().any(|(i, (p1, p2))| {
        sb.iter().enumerate().any(|(j, (q1, q2))| {
            if disjoint(ra[i], rb[j]) {
                return false;
            }
            let d1 = orient(q1, q2, p1);
            let d2 = orient(q1, q2, p2);
            let d3 = orient(p1, p2, q1);
            let d4 = orient(p1, p2, q2);
            (d1 * d2 < 0 && d3 * d4 < 0)
                || (d1 == 0 && within(q1, q2, p1))
                || (d2 == 0 && within(q1, q2, p2))
                || (d3 == 0 && within(p1, p2, q1))
                || (d4 == 0 && within(p1, p2, q2))
        })
    })
}
