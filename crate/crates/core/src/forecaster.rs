//! Near-miss forecasting from a failure-free trace.
//!
//! NPCs are filtered by proximity, split by whether their path crosses the
//! ego path, and non-crossing NPCs are stress-tested against perturbed ego
//! trajectories. The surviving NPCs are ranked into risky points: (frame, NPC)
//! pairs that later serve as clip centers.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segments_intersect, Aabb, Rect, Vec2};
use crate::kinematics::{advance_pose, Pose};
use crate::model::{ActorClass, ActorId};
use crate::sim::OutcomeKind;
use crate::telemetry::{ClosestApproach, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityThresholds {
    /// Radius for cars and bicycles, m.
    pub vehicle: f64,
    /// Radius for pedestrians, m.
    pub pedestrian: f64,
}

impl Default for ProximityThresholds {
    fn default() -> Self {
        Self {
            vehicle: 10.0,
            pedestrian: 50.0,
        }
    }
}

impl ProximityThresholds {
    pub fn for_class(&self, class: ActorClass) -> f64 {
        match class {
            ActorClass::Pedestrian => self.pedestrian,
            ActorClass::Car | ActorClass::Bicycle => self.vehicle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Independent error draw for every frame.
    #[default]
    PerFrame,
    /// One error draw held for the whole trajectory.
    ConstantBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub n_perturbations: usize,
    /// Additive speed error bound, m/s.
    pub speed_error_bound: f64,
    /// Additive yaw-rate error bound, rad/s.
    pub yaw_rate_error_bound: f64,
    /// Gap at or below which an NPC is critical, m.
    pub critical_distance: f64,
    pub seed: u64,
    pub mode: PerturbationMode,
    /// Seconds of re-integration either side of an NPC's closest approach;
    /// zero integrates the whole trace from its first frame.
    pub horizon: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 20,
            speed_error_bound: 0.5,
            yaw_rate_error_bound: 0.02,
            critical_distance: 2.0,
            seed: 0,
            mode: PerturbationMode::PerFrame,
            horizon: 10.0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if self.n_perturbations == 0 {
            return Err(Error::InvalidConfig("n_perturbations must be >= 1".into()));
        }
        if !ok(self.speed_error_bound) || !ok(self.yaw_rate_error_bound) || !ok(self.critical_distance) || !ok(self.horizon) {
            return Err(Error::InvalidConfig(
                "perturbation bounds, critical distance and horizon must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub thresholds: ProximityThresholds,
    pub perturbation: PerturbationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpcCategory {
    Discarded,
    NonCritical,
    NonCrossing,
    Crossing,
    Critical,
    CriticalCrossing,
}

impl NpcCategory {
    /// Ranking tier; higher is riskier. `None` for categories never ranked.
    pub fn tier(self) -> Option<u8> {
        match self {
            NpcCategory::CriticalCrossing => Some(3),
            NpcCategory::Critical => Some(2),
            NpcCategory::Crossing => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskyPoint {
    pub actor_id: ActorId,
    /// Frame of the NPC's closest approach to the ego.
    pub frame: usize,
    pub category: NpcCategory,
    pub actor_class: ActorClass,
    #[serde(rename = "distance")]
    pub closest_distance: f64,
    /// Ordinal rank, 0 is the riskiest.
    #[serde(rename = "rank")]
    pub score: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProximityResult {
    pub close: Vec<ClosestApproach>,
    pub discarded: Vec<ActorId>,
}

/// Split NPCs into close and discarded by their closest approach.
pub fn identify_proximity(trace: &Trace, thresholds: &ProximityThresholds) -> Result<ProximityResult> {
    if trace.outcome.kind == OutcomeKind::Collision {
        return Err(Error::NotFailureFree(format!("{:?}", trace.outcome.kind)));
    }
    let mut out = ProximityResult::default();
    for id in trace.npc_ids() {
        let class = trace.actor(id).map(|a| a.class).ok_or(Error::UnknownActor(id))?;
        match trace.closest_approach(id) {
            Ok(ca) if ca.distance <= thresholds.for_class(class) => out.close.push(ca),
            // never spawned, or too far
            _ => out.discarded.push(id),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossingResult {
    /// Crossing NPCs outside the critical subset.
    pub crossing: Vec<ClosestApproach>,
    pub critical_crossing: Vec<ClosestApproach>,
    pub non_crossing: Vec<ClosestApproach>,
}

const GRID_CELL: f64 = 4.0;

fn cell_range(b: &Aabb) -> (i64, i64, i64, i64) {
    (
        (b.min.x / GRID_CELL).floor() as i64,
        (b.min.y / GRID_CELL).floor() as i64,
        (b.max.x / GRID_CELL).floor() as i64,
        (b.max.y / GRID_CELL).floor() as i64,
    )
}

fn segments(poly: &[Vec2]) -> Vec<(Vec2, Vec2)> {
    match poly.len() {
        0 => Vec::new(),
        1 => vec![(poly[0], poly[0])],
        _ => poly.windows(2).map(|w| (w[0], w[1])).collect(),
    }
}

/// Spatial hash over the segments of one polyline for intersection queries.
pub struct SegmentIndex {
    segs: Vec<(Vec2, Vec2)>,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SegmentIndex {
    pub fn new(poly: &[Vec2]) -> Self {
        let segs = segments(poly);
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, &(a, b)) in segs.iter().enumerate() {
            let (x0, y0, x1, y1) = cell_range(&Aabb::of_segment(a, b));
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    cells.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        Self { segs, cells }
    }

    /// Whether any segment of `poly` intersects the indexed polyline.
    pub fn crosses(&self, poly: &[Vec2]) -> bool {
        let mut seen = vec![usize::MAX; self.segs.len()];
        for (j, (a, b)) in segments(poly).into_iter().enumerate() {
            let (x0, y0, x1, y1) = cell_range(&Aabb::of_segment(a, b));
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    let Some(candidates) = self.cells.get(&(cx, cy)) else {
                        continue;
                    };
                    for &i in candidates {
                        if seen[i] == j {
                            continue;
                        }
                        seen[i] = j;
                        let (p, q) = self.segs[i];
                        if segments_intersect(p, q, a, b) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Crossing NPCs are those whose path intersects the ego path at
/// any time; the critical subset also came within `critical_distance` of the
/// ego at the same frame.
pub fn identify_crossing(trace: &Trace, close: &[ClosestApproach], critical_distance: f64) -> CrossingResult {
    let index = SegmentIndex::new(&trace.ego_polyline());
    let mut out = CrossingResult::default();
    for ca in close {
        if index.crosses(&trace.actor_polyline(ca.actor_id)) {
            if ca.distance <= critical_distance {
                out.critical_crossing.push(*ca);
            } else {
                out.crossing.push(*ca);
            }
        } else {
            out.non_crossing.push(*ca);
        }
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Per-frame (speed, yaw-rate) errors of the k-th perturbation.
fn draw_errors(n: usize, cfg: &PerturbationConfig, k: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(k as u64);
    let bias = (
        draw(&mut rng, cfg.speed_error_bound),
        draw(&mut rng, cfg.yaw_rate_error_bound),
    );
    (0..n)
        .map(|_| match cfg.mode {
            PerturbationMode::PerFrame => (
                draw(&mut rng, cfg.speed_error_bound),
                draw(&mut rng, cfg.yaw_rate_error_bound),
            ),
            PerturbationMode::ConstantBias => bias,
        })
        .collect()
}

/// Re-integrate the ego over frames `from..=to` starting at its recorded
/// pose at `from`, with the simulator's own integration rule.
#[allow(clippy::needless_range_loop)]
fn integrate(trace: &Trace, errors: &[(f64, f64)], from: usize, to: usize) -> Vec<Pose> {
    let dt = trace.dt();
    let speed = |i: usize| (trace.frames[i].ego.speed + errors[i].0).max(0.0);
    let mut pose = trace.frames[from].ego.pose;
    let mut poses = Vec::with_capacity(to + 1 - from);
    poses.push(pose);
    for i in from + 1..=to {
        let yaw_rate = trace.frames[i].ego.yaw_rate + errors[i].1;
        pose = advance_pose(pose, speed(i - 1), speed(i), yaw_rate, dt);
        poses.push(pose);
    }
    poses
}

/// The k-th perturbed ego trajectory over the whole trace.
///
/// Recorded per-frame speed and yaw rate receive additive uniform errors and
/// are re-integrated from the recorded initial pose, so zero bounds
/// reproduce the recorded poses exactly.
pub fn perturb_ego_trajectory(trace: &Trace, cfg: &PerturbationConfig, k: usize) -> Vec<Pose> {
    perturb_ego_window(trace, cfg, k, 0, trace.frames.len().saturating_sub(1))
}

/// The k-th perturbed ego trajectory over frames `from..=to`, anchored at
/// the recorded pose of frame `from`. Frame i always receives the same error
/// whatever the anchor.
pub fn perturb_ego_window(trace: &Trace, cfg: &PerturbationConfig, k: usize, from: usize, to: usize) -> Vec<Pose> {
    if trace.frames.is_empty() {
        return Vec::new();
    }
    let to = to.min(trace.frames.len() - 1);
    let errors = draw_errors(trace.frames.len(), cfg, k);
    integrate(trace, &errors, from.min(to), to)
}

/// Frames examined for an NPC: `horizon` seconds either side of its closest
/// approach, or the whole trace when the horizon is zero.
fn analysis_window(trace: &Trace, ca: &ClosestApproach, horizon: f64) -> (usize, usize) {
    let last = trace.frames.len() - 1;
    if horizon <= 0.0 {
        return (0, last);
    }
    let h = (horizon * trace.tick_rate).round() as usize;
    (ca.frame.saturating_sub(h), (ca.frame + h).min(last))
}

/// A non-crossing NPC is critical when any perturbed ego trajectory
/// comes within the critical distance of it at the same frame.
pub fn analyze_non_crossing(
    trace: &Trace,
    non_crossing: &[ClosestApproach],
    cfg: &PerturbationConfig,
) -> (Vec<ClosestApproach>, Vec<ClosestApproach>) {
    if non_crossing.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let ego = trace.ego_info();
    let errors: Vec<Vec<(f64, f64)>> = (0..cfg.n_perturbations)
        .map(|k| draw_errors(trace.frames.len(), cfg, k))
        .collect();
    let (mut critical, mut non_critical) = (Vec::new(), Vec::new());
    for ca in non_crossing {
        let (from, to) = analysis_window(trace, ca, cfg.horizon);
        let hit = trace.actor(ca.actor_id).is_some_and(|info| {
            errors.iter().any(|err| {
                let poses = integrate(trace, err, from, to);
                poses.iter().zip(from..=to).any(|(p, i)| {
                    trace.frames[i].npcs.get(&ca.actor_id).is_some_and(|state| {
                        let rect = Rect::new(p.position, p.heading, ego.length, ego.width);
                        rect.distance(&info.footprint(state)) <= cfg.critical_distance
                    })
                })
            })
        });
        if hit {
            critical.push(*ca);
        } else {
            non_critical.push(*ca);
        }
    }
    (critical, non_critical)
}

/// Order risky NPCs by tier (critical crossing, critical, crossing),
/// then pedestrians before vehicles, then closest approach, then actor id.
pub fn rank(
    crossing: &[ClosestApproach],
    critical_crossing: &[ClosestApproach],
    critical: &[ClosestApproach],
    trace: &Trace,
) -> Vec<RiskyPoint> {
    let tagged = critical_crossing
        .iter()
        .map(|c| (c, NpcCategory::CriticalCrossing))
        .chain(critical.iter().map(|c| (c, NpcCategory::Critical)))
        .chain(crossing.iter().map(|c| (c, NpcCategory::Crossing)));
    let mut points: Vec<RiskyPoint> = tagged
        .map(|(ca, category)| RiskyPoint {
            actor_id: ca.actor_id,
            frame: ca.frame,
            category,
            actor_class: trace.actor(ca.actor_id).map_or(ActorClass::Car, |a| a.class),
            closest_distance: ca.distance,
            score: 0,
        })
        .collect();
    points.sort_by(|a, b| {
        b.category
            .tier()
            .cmp(&a.category.tier())
            .then_with(|| {
                let ped = |p: &RiskyPoint| p.actor_class != ActorClass::Pedestrian;
                ped(a).cmp(&ped(b))
            })
            .then_with(|| a.closest_distance.total_cmp(&b.closest_distance))
            .then_with(|| a.actor_id.cmp(&b.actor_id))
    });
    for (i, p) in points.iter_mut().enumerate() {
        p.score = i;
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub risky_points: Vec<RiskyPoint>,
    /// Terminal category of every NPC in the trace.
    pub categories: BTreeMap<ActorId, NpcCategory>,
    pub close: Vec<ClosestApproach>,
}

/// Full forecasting pipeline over one failure-free trace.
pub fn forecast(trace: &Trace, cfg: &ForecastConfig) -> Result<Forecast> {
    cfg.perturbation.validate()?;
    let proximity = identify_proximity(trace, &cfg.thresholds)?;
    let crossing = identify_crossing(trace, &proximity.close, cfg.perturbation.critical_distance);
    let (critical, non_critical) = analyze_non_crossing(trace, &crossing.non_crossing, &cfg.perturbation);
    let mut categories = BTreeMap::new();
    for &id in &proximity.discarded {
        categories.insert(id, NpcCategory::Discarded);
    }
    let groups = [
        (&non_critical, NpcCategory::NonCritical),
        (&critical, NpcCategory::Critical),
        (&crossing.crossing, NpcCategory::Crossing),
        (&crossing.critical_crossing, NpcCategory::CriticalCrossing),
    ];
    for (set, cat) in groups {
        for ca in set {
            categories.insert(ca.actor_id, cat);
        }
    }
    let risky_points = rank(&crossing.crossing, &crossing.critical_crossing, &critical, trace);
    Ok(Forecast {
        risky_points,
        categories,
        close: proximity.close,
    })
}
