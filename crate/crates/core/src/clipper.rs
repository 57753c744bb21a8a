//! Clip reconstruction: turn a window of a recorded run into a standalone
//! scenario that starts from the recorded state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::map::{Lane, Waypoint, WaypointId};
use crate::model::ActorId;
use crate::scenario::{NpcScript, Origin, Route, Scenario};
use crate::sim::{advance_progress, route_path, trigger_tick};
use crate::telemetry::Trace;

/// Search radius for the end waypoint, m.
pub const END_WAYPOINT_RADIUS: f64 = 30.0;
/// Clip duration limit as a multiple of the window length.
pub const DURATION_FACTOR: f64 = 3.0;
const SYNTHETIC_LANE: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub rp_frame: usize,
    pub o_b: f64,
    pub o_a: f64,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl ClipWindow {
    /// Window around `rp_frame`, clamped to the trace.
    pub fn new(rp_frame: usize, o_b: f64, o_a: f64, tick_rate: f64, frame_count: usize) -> Result<Self> {
        if !(o_b.is_finite() && o_b > 0.0 && o_a.is_finite() && o_a > 0.0) {
            return Err(Error::InvalidConfig("o_b and o_a must be positive".into()));
        }
        if rp_frame >= frame_count {
            return Err(Error::InvalidConfig(format!(
                "risky frame {rp_frame} beyond trace of {frame_count} frames"
            )));
        }
        let before = (o_b * tick_rate).round() as usize;
        let after = (o_a * tick_rate).round() as usize;
        let start_frame = rp_frame.saturating_sub(before);
        let end_frame = (rp_frame + after).min(frame_count - 1);
        let frames = end_frame - start_frame;
        if (frames as f64) < tick_rate - 1e-9 {
            return Err(Error::WindowDegenerate { frames, tick_rate });
        }
        Ok(Self {
            rp_frame,
            o_b,
            o_a,
            start_frame,
            end_frame,
        })
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }

    pub fn len_frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// Per-NPC distances to the ego inside the clip window of the parent trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpcWindowStats {
    /// Smallest footprint distance inside the window, m.
    pub window_min_distance: f64,
    /// Parent-trace frame of that minimum.
    pub window_min_frame: usize,
    /// Distance at the window start, absent if the NPC spawns later.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_distance: Option<f64>,
}

/// Annotation carried by clip scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipInfo {
    pub parent_id: String,
    pub window: ClipWindow,
    pub relevant_npcs: Vec<ActorId>,
    #[serde(with = "stats_entries")]
    pub npc_stats: BTreeMap<ActorId, NpcWindowStats>,
}

/// Stats are written as a list: integer map keys do not survive the tagged
/// `Origin` enum they are nested in.
mod stats_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::NpcWindowStats;
    use crate::model::ActorId;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        actor_id: ActorId,
        #[serde(flatten)]
        stats: NpcWindowStats,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<ActorId, NpcWindowStats>, s: S) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(&actor_id, &stats)| Entry { actor_id, stats })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ActorId, NpcWindowStats>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?
            .into_iter()
            .map(|e| (e.actor_id, e.stats))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClippedScenario {
    pub info: ClipInfo,
    /// Reconstructed scenario; its `origin` holds a copy of `info`.
    pub scenario: Scenario,
}

impl ClippedScenario {
    pub fn parent_id(&self) -> &str {
        &self.info.parent_id
    }

    pub fn window(&self) -> &ClipWindow {
        &self.info.window
    }

    pub fn relevant_npcs(&self) -> &[ActorId] {
        &self.info.relevant_npcs
    }

    /// Recover a clip from a scenario file written by [`clip`].
    pub fn from_scenario(scenario: Scenario) -> Result<Self> {
        match &scenario.origin {
            Some(Origin::Clip(info)) => Ok(Self {
                info: info.clone(),
                scenario,
            }),
            _ => Err(Error::InvalidScenario(format!(
                "scenario {} is not a clip",
                scenario.id
            ))),
        }
    }
}

/// Replay path progress over a sequence of recorded positions.
fn replay_progress(points: &[Vec2], positions: impl IntoIterator<Item = Vec2>) -> usize {
    positions
        .into_iter()
        .fold(0, |next, p| advance_progress(points, next, p))
}

/// Reconstruct the window around `rp_frame` as a runnable scenario.
pub fn clip(scenario: &Scenario, trace: &Trace, rp_frame: usize, o_b: f64, o_a: f64) -> Result<ClippedScenario> {
    let window = ClipWindow::new(rp_frame, o_b, o_a, trace.tick_rate, trace.frames.len())?;
    let (start, end) = (window.start_frame, window.end_frame);
    let start_frame = &trace.frames[start];
    let start_t = start as f64 / trace.tick_rate;

    // Ego route: where the ego was headed at the window start and where it
    // ended up at the window end.
    let route = route_path(scenario)?;
    let points: Vec<Vec2> = route.iter().map(|w| w.position).collect();
    let ego_positions = trace.frames.iter().map(|f| f.ego.pose.position);
    let next_start = replay_progress(&points, ego_positions.clone().take(start + 1));
    let next_end = replay_progress(&points, ego_positions.take(end + 1));
    let end_pos = trace.frames[end].ego.pose.position;
    let nearest = |from: usize| {
        route
            .iter()
            .enumerate()
            .skip(from)
            .map(|(i, w)| (i, w.position.distance(end_pos)))
            .filter(|&(_, d)| d <= END_WAYPOINT_RADIUS)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    };
    let end_idx = nearest(next_end.max(next_start))
        .or_else(|| nearest(next_start))
        .ok_or(Error::NoValidEndWaypoint {
            radius: END_WAYPOINT_RADIUS,
        })?;

    let mut map = scenario.map.clone();
    let ego_state = start_frame.ego;
    let existing = map
        .waypoints()
        .find(|w| w.position == ego_state.pose.position)
        .map(|w| w.id);
    let start_wp = match existing {
        Some(id) => id,
        None => {
            let id = WaypointId(map.max_waypoint_id().map_or(0, |w| w.0 + 1));
            let wp = Waypoint {
                id,
                position: ego_state.pose.position,
            };
            map.lanes.push(Lane {
                name: format!("{SYNTHETIC_LANE}-{}", id.0),
                waypoints: vec![wp],
            });
            id
        }
    };
    let via: Vec<WaypointId> = route[next_start..end_idx].iter().map(|w| w.id).collect();
    let clip_route = Route {
        start: start_wp,
        end: route[end_idx].id,
        via,
    };

    let mut npcs = Vec::new();
    for script in &scenario.npcs {
        if let Some(state) = start_frame.npcs.get(&script.id) {
            // Resume the plan from the point the NPC was heading to.
            let mut points = vec![script.spawn.pose.position];
            for step in &script.plan {
                points.push(
                    scenario
                        .map
                        .waypoint(step.waypoint)
                        .ok_or_else(|| Error::InvalidScenario(format!("unknown waypoint {}", step.waypoint)))?,
                );
            }
            let first = trace.first_appearance(script.id).unwrap_or(start);
            let positions = trace.frames[first..=start]
                .iter()
                .filter_map(|f| f.npcs.get(&script.id).map(|s| s.pose.position));
            let next = replay_progress(&points, positions).max(1);
            let resume = (next - 1).min(script.plan.len() - 1);
            npcs.push(NpcScript {
                spawn: *state,
                plan: script.plan[resume..].to_vec(),
                trigger_time: 0.0,
                ..script.clone()
            });
        } else {
            let activation = trigger_tick(script.trigger_time, scenario.tick_rate) as usize;
            if activation > start && activation <= end {
                npcs.push(NpcScript {
                    trigger_time: script.trigger_time - start_t,
                    ..script.clone()
                });
            }
        }
    }

    let mut npc_stats = BTreeMap::new();
    let mut relevant_npcs = Vec::new();
    for npc in &npcs {
        let info = trace.actor(npc.id).ok_or(Error::UnknownActor(npc.id))?;
        let mut best: Option<(f64, usize)> = None;
        for i in start..=end {
            if let Some(s) = trace.frames[i].npcs.get(&npc.id) {
                let d = trace.ego_footprint(i).distance(&info.footprint(s));
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, i));
                }
            }
        }
        let Some((window_min_distance, window_min_frame)) = best else {
            continue;
        };
        npc_stats.insert(
            npc.id,
            NpcWindowStats {
                window_min_distance,
                window_min_frame,
                start_distance: start_frame.npcs.get(&npc.id).map(|s| {
                    trace.ego_footprint(start).distance(&info.footprint(s))
                }),
            },
        );
        if trace.closest_approach(npc.id).is_ok_and(|ca| window.contains(ca.frame)) {
            relevant_npcs.push(npc.id);
        }
    }

    let info = ClipInfo {
        parent_id: scenario.id.clone(),
        window,
        relevant_npcs,
        npc_stats,
    };
    let clipped = Scenario {
        id: format!("{}@{}", scenario.id, rp_frame),
        map,
        route: clip_route,
        ego_spawn: ego_state,
        npcs,
        duration_limit: (o_b + o_a) * DURATION_FACTOR,
        origin: Some(Origin::Clip(info.clone())),
        ..scenario.clone()
    };
    clipped.validate()?;
    Ok(ClippedScenario {
        info,
        scenario: clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Two actors present at t=0 overlap.
    Overlap { a: ActorId, b: ActorId },
    /// A spawn overlaps a static obstacle.
    StaticObstacle { actor: ActorId, obstacle: u32 },
    /// A spawn overlaps an invisible map entity.
    PhantomObject { actor: ActorId, zone: u32 },
}

/// Spawn-time hazards of a scenario. Pairwise overlaps are checked among the
/// actors present at t=0; obstacle and exclusion-zone checks cover every spawn.
pub fn spawn_validity_check(scenario: &Scenario) -> Vec<Violation> {
    let mut spawns = vec![(
        ActorId::EGO,
        scenario
            .ego_spawn
            .footprint(scenario.ego_model.length, scenario.ego_model.width),
        true,
    )];
    for npc in &scenario.npcs {
        spawns.push((
            npc.id,
            npc.spawn.footprint(npc.actor.length, npc.actor.width),
            trigger_tick(npc.trigger_time, scenario.tick_rate) == 0,
        ));
    }
    let mut out = Vec::new();
    for (i, (a, ra, at_start_a)) in spawns.iter().enumerate() {
        for (b, rb, at_start_b) in &spawns[i + 1..] {
            if *at_start_a && *at_start_b && ra.overlaps(rb) {
                out.push(Violation::Overlap { a: *a, b: *b });
            }
        }
    }
    for (id, rect, _) in &spawns {
        for obs in &scenario.map.static_obstacles {
            if rect.overlaps(&obs.shape) {
                out.push(Violation::StaticObstacle {
                    actor: *id,
                    obstacle: obs.id,
                });
            }
        }
        for zone in &scenario.map.exclusion_zones {
            if rect.overlaps(&zone.shape) {
                out.push(Violation::PhantomObject {
                    actor: *id,
                    zone: zone.id,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{forecast, ForecastConfig};
    use crate::geom::Rect;
    use crate::library::lookup;
    use crate::map::ExclusionZone;
    use crate::sim::run;
    use crate::testkit::{add_npc, road, synthetic_trace};

    fn seed_and_rp(name: &str) -> (Scenario, Trace, usize) {
        let s = lookup(name).unwrap();
        let t = run(&s).unwrap();
        let rp = forecast(&t, &ForecastConfig::default()).unwrap().risky_points[0].frame;
        (s, t, rp)
    }

    #[test]
    fn window_spans_offsets_and_clamps_at_start() {
        let w = ClipWindow::new(400, 3.0, 3.0, 20.0, 801).unwrap();
        assert_eq!((w.start_frame, w.end_frame, w.len_frames()), (340, 460, 120));
        let w = ClipWindow::new(30, 3.0, 3.0, 20.0, 801).unwrap();
        assert_eq!((w.start_frame, w.end_frame), (0, 90));
        assert!(w.contains(30));
        let w = ClipWindow::new(795, 3.0, 3.0, 20.0, 801).unwrap();
        assert_eq!(w.end_frame, 800);
    }

    #[test]
    fn short_or_invalid_windows_are_rejected() {
        assert!(matches!(
            ClipWindow::new(0, 0.5, 0.4, 20.0, 801),
            Err(Error::WindowDegenerate { frames: 8, .. })
        ));
        assert!(matches!(ClipWindow::new(900, 3.0, 3.0, 20.0, 801), Err(Error::InvalidConfig(_))));
        assert!(matches!(ClipWindow::new(10, 0.0, 3.0, 20.0, 801), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn clip_restores_recorded_state_exactly() {
        let (s, t, rp) = seed_and_rp("red-light-runner/1");
        let c = clip(&s, &t, rp, 5.0, 5.0).unwrap();
        let start = &t.frames[c.window().start_frame];
        assert_eq!(c.scenario.ego_spawn, start.ego);
        for (id, state) in &start.npcs {
            assert_eq!(&c.scenario.npc(*id).unwrap().spawn, state);
        }
        assert_eq!(c.scenario.duration_limit, 30.0);
        assert_eq!(c.parent_id(), s.id);
        for id in c.relevant_npcs() {
            assert!(c.window().contains(t.closest_approach(*id).unwrap().frame));
        }
    }

    fn rms_deviation(c: &ClippedScenario, parent: &Trace) -> f64 {
        let replay = run(&c.scenario).unwrap();
        let w = c.window();
        let n = (w.len_frames() + 1).min(replay.frames.len());
        let sq: f64 = (0..n)
            .map(|i| {
                let d = replay.frames[i].ego.pose.position.distance(parent.frames[w.start_frame + i].ego.pose.position);
                d * d
            })
            .sum();
        (sq / n as f64).sqrt()
    }

    #[test]
    fn unmutated_clip_replays_the_window() {
        for name in ["crossing-ahead/0", "unprotected-left/1", "right-turn-yield/0"] {
            let (s, t, rp) = seed_and_rp(name);
            for (o_b, o_a) in [(3.0, 3.0), (5.0, 5.0)] {
                let c = clip(&s, &t, rp, o_b, o_a).unwrap();
                let rms = rms_deviation(&c, &t);
                assert!(rms <= 0.1, "{name} o={o_b}: rms {rms}");
            }
        }
    }

    #[test]
    fn clip_round_trips_through_json() {
        let (s, t, rp) = seed_and_rp("post-turn-obstacle/0");
        let c = clip(&s, &t, rp, 5.0, 5.0).unwrap();
        let back = Scenario::from_json_str(&c.scenario.to_json_string().unwrap()).unwrap();
        assert_eq!(ClippedScenario::from_scenario(back).unwrap(), c);
        assert!(ClippedScenario::from_scenario(s).is_err());
    }

    #[test]
    fn clipping_a_clip_at_its_own_window_reproduces_it() {
        let (s, t, rp) = seed_and_rp("crossing-ahead/1");
        let first = clip(&s, &t, rp, 5.0, 5.0).unwrap();
        let replay = run(&first.scenario).unwrap();
        let inner_rp = rp - first.window().start_frame;
        let second = clip(&first.scenario, &replay, inner_rp, 5.0, 5.0).unwrap();
        let strip = |c: &ClippedScenario| Scenario {
            id: String::new(),
            origin: None,
            ..c.scenario.clone()
        };
        assert_eq!(strip(&second), strip(&first));
        // Relevance looks at closest approaches over the whole parent trace;
        // inside the clip's own trace every approach falls in the window.
        assert!(first.relevant_npcs().iter().all(|id| second.relevant_npcs().contains(id)));
    }

    #[test]
    fn end_far_from_route_has_no_end_waypoint() {
        let s = road();
        let ego: Vec<Vec2> = (0..200).map(|i| Vec2::new(0.5 * i as f64, 0.4 * i as f64)).collect();
        let t = synthetic_trace(&ego, &[]);
        assert!(matches!(clip(&s, &t, 150, 3.0, 3.0), Err(Error::NoValidEndWaypoint { .. })));
    }

    #[test]
    fn spawn_checks_flag_overlaps_obstacles_and_zones() {
        let mut s = road();
        add_npc(&mut s, 1, "car.compact", &[Vec2::new(40.0, 0.0), Vec2::new(44.0, 0.0)], 5.0, 0.0);
        add_npc(&mut s, 2, "car.compact", &[Vec2::new(50.0, 0.0), Vec2::new(54.0, 0.0)], 5.0, 0.0);
        assert!(spawn_validity_check(&s).is_empty());

        let mut close = s.clone();
        close.npcs[1].spawn.pose.position = Vec2::new(43.0, 0.0);
        assert_eq!(
            spawn_validity_check(&close),
            vec![Violation::Overlap { a: ActorId(1), b: ActorId(2) }]
        );
        // A later trigger means the two are never on the road together at t=0.
        close.npcs[1].trigger_time = 2.0;
        assert!(spawn_validity_check(&close).is_empty());

        let mut zone = s.clone();
        zone.map.exclusion_zones.push(ExclusionZone {
            id: 4,
            shape: Rect::new(Vec2::new(50.0, 0.0), 0.0, 2.0, 2.0),
        });
        assert_eq!(
            spawn_validity_check(&zone),
            vec![Violation::PhantomObject { actor: ActorId(2), zone: 4 }]
        );
    }
}
