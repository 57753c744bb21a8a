//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nearmiss::geom::Vec2;
use nearmiss::kinematics::KinematicState;
use nearmiss::library::empty_road;
use nearmiss::model::{catalog, ActorId};
use nearmiss::scenario::{NpcScript, PlanStep, Scenario, SteeringMode};
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type P = (BigRational, BigRational);

fn q(v: Vec2) -> P {
    (BigRational::from_float(v.x).unwrap(), BigRational::from_float(v.y).unwrap())
}

fn orient(a: &P, b: &P, c: &P) -> i8 {
    let v = (&b.0 - &a.0) * (&c.1 - &a.1) - (&b.1 - &a.1) * (&c.0 - &a.0);
    if v.is_zero() {
        0
    } else if v.is_positive() {
        1
    } else {
        -1
    }
}

fn within(a: &P, b: &P, c: &P) -> bool {
    let (lo_x, hi_x) = if a.0 <= b.0 { (&a.0, &b.0) } else { (&b.0, &a.0) };
    let (lo_y, hi_y) = if a.1 <= b.1 { (&a.1, &b.1) } else { (&b.1, &a.1) };
    lo_x <= &c.0 && &c.0 <= hi_x && lo_y <= &c.1 && &c.1 <= hi_y
}

fn segments(poly: &[Vec2]) -> Vec<(Vec2, Vec2)> {
    match poly.len() {
        0 => Vec::new(),
        1 => vec![(poly[0], poly[0])],
        _ => poly.windows(2).map(|w| (w[0], w[1])).collect(),
    }
}

fn disjoint((a0, a1): (Vec2, Vec2), (b0, b1): (Vec2, Vec2)) -> bool {
    a0.x.max(a1.x) < b0.x.min(b1.x)
        || b0.x.max(b1.x) < a0.x.min(a1.x)
        || a0.y.max(a1.y) < b0.y.min(b1.y)
        || b0.y.max(b1.y) < a0.y.min(a1.y)
}

/// Brute-force check of every segment pair in exact rational arithmetic. A
/// single point is a degenerate segment; touching counts as crossing.
pub fn crosses_exact(a: &[Vec2], b: &[Vec2]) -> bool {
    let (sa, sb) = (segments(a), segments(b));
    sa.iter().any(|&s| {
        sb.iter().any(|&t| {
            // Comparing the original floats is exact, so this only skips work.
            if disjoint(s, t) {
                return false;
            }
            let (p1, p2, q1, q2) = (q(s.0), q(s.1), q(t.0), q(t.1));
            let d1 = orient(&q1, &q2, &p1);
            let d2 = orient(&q1, &q2, &p2);
            let d3 = orient(&p1, &p2, &q1);
            let d4 = orient(&p1, &p2, &q2);
            (d1 * d2 < 0 && d3 * d4 < 0)
                || (d1 == 0 && within(&q1, &q2, &p1))
                || (d2 == 0 && within(&q1, &q2, &p2))
                || (d3 == 0 && within(&p1, &p2, &q1))
                || (d4 == 0 && within(&p1, &p2, &q2))
        })
    })
}

fn lane_points(a: Vec2, b: Vec2) -> Vec<Vec2> {
    let n = (a.distance(b) / 4.0).ceil().max(1.0) as usize;
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

/// Straight-road scenario with up to 8 NPCs on random crossing, parallel
/// and oblique paths, at most 2,000 frames long.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = rng.random_range(150.0..400.0);
    let mut s = empty_road(length, rng.random_range(6.0..14.0));
    s.id = format!("random-{seed}");
    s.duration_limit = s.duration_limit.min(99.0);
    let models = catalog();
    for k in 0..rng.random_range(1..=8u32) {
        let model = models[rng.random_range(0..models.len())].clone();
        let x = rng.random_range(25.0..length);
        let (a, b) = match rng.random_range(0..3) {
            0 => {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let y0 = side * rng.random_range(8.0..40.0);
                (Vec2::new(x, y0), Vec2::new(x + rng.random_range(-10.0..10.0), -y0))
            }
            1 => {
                let y = rng.random_range(-8.0..8.0);
                let y = if y.abs() < 3.0 { y.signum() * 3.5 } else { y };
                (Vec2::new(x, y), Vec2::new(x + rng.random_range(20.0..120.0), y))
            }
            _ => (
                Vec2::new(x, rng.random_range(10.0..30.0)),
                Vec2::new(x + rng.random_range(-60.0..60.0), rng.random_range(-30.0..5.0)),
            ),
        };
        let pts = lane_points(a, b);
        let ids = s.map.add_lane(&format!("npc-{k}"), &pts[1..]);
        let speed = rng.random_range(1.0..model.max_speed.min(12.0));
        s.npcs.push(NpcScript {
            id: ActorId(k + 1),
            spawn: KinematicState::new(a, (b - a).angle(), speed),
            plan: ids
                .into_iter()
                .map(|waypoint| PlanStep {
                    waypoint,
                    target_speed: speed,
                })
                .collect(),
            trigger_time: rng.random_range(0.0..8.0),
            steering_override: None,
            steering_mode: SteeringMode::Replace,
            actor: model,
        });
    }
    s
}
