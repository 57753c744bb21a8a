//! Clip mutation: NPC model swaps and steering overrides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clipper::{spawn_validity_check, ClippedScenario};
use crate::error::{Error, Result};
use crate::model::{catalog, ActorId, ActorModel};
use crate::scenario::{Origin, Scenario};

/// Draws tried before a model swap gives up.
pub const MAX_SWAP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MutationOp {
    ModelSwap { actor_id: ActorId, new_model_id: String },
    SteeringPerturb { actor_id: ActorId, value: f64 },
}

impl MutationOp {
    pub fn actor_id(&self) -> ActorId {
        match self {
            MutationOp::ModelSwap { actor_id, .. } | MutationOp::SteeringPerturb { actor_id, .. } => *actor_id,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MutationOp::ModelSwap { .. } => "model_swap",
            MutationOp::SteeringPerturb { .. } => "steering_perturb",
        }
    }
}

impl std::fmt::Display for MutationOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MutationOp::ModelSwap { actor_id, new_model_id } => {
                write!(f, "model_swap({actor_id}->{new_model_id})")
            }
            MutationOp::SteeringPerturb { actor_id, value } => {
                write!(f, "steering_perturb({actor_id},{value:.6})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Child {
    pub scenario: Scenario,
    pub op: MutationOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationBatch {
    pub parent: String,
    pub children: Vec<Child>,
    pub seed: u64,
}

/// Model-swap target: the relevant NPC with the smallest distance to the ego
/// inside the window (lowest id on ties).
pub fn select_swap_target(clipped: &ClippedScenario) -> Result<ActorId> {
    let info = &clipped.info;
    info.relevant_npcs
        .iter()
        .filter_map(|id| info.npc_stats.get(id).map(|s| (*id, s.window_min_distance)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
        .ok_or(Error::NoRelevantNpc)
}

/// Steering target: the vehicle closest to the ego at the window start.
pub fn select_steering_target(clipped: &ClippedScenario) -> Option<ActorId> {
    clipped
        .info
        .npc_stats
        .iter()
        .filter(|(id, _)| {
            clipped
                .scenario
                .npc(**id)
                .is_some_and(|n| n.actor.class.is_vehicle())
        })
        .filter_map(|(id, s)| s.start_distance.map(|d| (*id, d)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Replace the target's model in `scenario`, keeping its pose. Speeds in the
/// spawn state and plan are capped at the new model's top speed.
pub fn apply_model(scenario: &mut Scenario, target: ActorId, model: &ActorModel) -> Result<()> {
    let npc = scenario.npc_mut(target).ok_or(Error::UnknownActor(target))?;
    npc.actor = model.clone();
    npc.spawn.speed = npc.spawn.speed.min(model.max_speed);
    for step in &mut npc.plan {
        step.target_speed = step.target_speed.min(model.max_speed);
    }
    Ok(())
}

/// Swap the target's model for a uniformly drawn different model of an
/// allowed substitute class, redrawing when the result fails the spawn check.
pub fn swap_model(
    clipped: &ClippedScenario,
    target: ActorId,
    models: &[ActorModel],
    rng: &mut impl Rng,
) -> Result<(Scenario, MutationOp)> {
    let npc = clipped.scenario.npc(target).ok_or(Error::UnknownActor(target))?;
    let current = &npc.actor;
    let allowed = current.class.substitutes();
    let candidates: Vec<&ActorModel> = models
        .iter()
        .filter(|m| m.model_id != current.model_id && allowed.contains(&m.class))
        .filter(|m| npc.steering_override.is_none() || m.class.is_vehicle())
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoValidModel(target));
    }
    for _ in 0..MAX_SWAP_ATTEMPTS {
        let model = candidates[rng.random_range(0..candidates.len())];
        let mut child = clipped.scenario.clone();
        apply_model(&mut child, target, model)?;
        if spawn_validity_check(&child).is_empty() {
            let op = MutationOp::ModelSwap {
                actor_id: target,
                new_model_id: model.model_id.clone(),
            };
            return Ok((child, op));
        }
    }
    Err(Error::NoValidModel(target))
}

/// Give the target a persistent steering override drawn from [-1, 1].
pub fn perturb_steering(
    clipped: &ClippedScenario,
    target: ActorId,
    rng: &mut impl Rng,
) -> Result<(Scenario, MutationOp)> {
    let mut child = clipped.scenario.clone();
    let npc = child.npc_mut(target).ok_or(Error::UnknownActor(target))?;
    if !npc.actor.class.is_vehicle() {
        return Err(Error::TargetNotVehicle(target));
    }
    let value = rng.random_range(-1.0..=1.0);
    npc.steering_override = Some(value);
    Ok((
        child,
        MutationOp::SteeringPerturb {
            actor_id: target,
            value,
        },
    ))
}

/// Generate `c` children, alternating model swaps (even index) and steering
/// overrides (odd index). Child `i` draws from its own random stream.
pub fn generate_children(clipped: &ClippedScenario, c: usize, seed: u64) -> Result<MutationBatch> {
    generate_children_with(clipped, c, seed, &catalog())
}

pub fn generate_children_with(
    clipped: &ClippedScenario,
    c: usize,
    seed: u64,
    models: &[ActorModel],
) -> Result<MutationBatch> {
    if c == 0 {
        return Err(Error::InvalidConfig("children per clip must be >= 1".into()));
    }
    let violations = spawn_validity_check(&clipped.scenario);
    if !violations.is_empty() {
        return Err(Error::InvalidClip(format!("{violations:?}")));
    }
    let swap_target = select_swap_target(clipped)?;
    let steer_target = select_steering_target(clipped);
    let mut swap_exhausted = false;
    let mut children = Vec::with_capacity(c);
    for i in 0..c {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let want_swap = i % 2 == 0 || steer_target.is_none();
        let mut result = None;
        if want_swap && !swap_exhausted {
            match swap_model(clipped, swap_target, models, &mut rng) {
                Ok(r) => result = Some(r),
                Err(Error::NoValidModel(_)) if steer_target.is_some() => swap_exhausted = true,
                Err(e) => return Err(e),
            }
        }
        let (mut scenario, op) = match (result, steer_target) {
            (Some(r), _) => r,
            (None, Some(target)) => perturb_steering(clipped, target, &mut rng)?,
            (None, None) => return Err(Error::NoValidModel(swap_target)),
        };
        scenario.id = format!("{}#c{i}", clipped.scenario.id);
        scenario.origin = Some(Origin::Mutation {
            parent_id: clipped.scenario.id.clone(),
            op: op.clone(),
            seed,
            child_index: i,
            clip: clipped.info.clone(),
        });
        children.push(Child { scenario, op });
    }
    Ok(MutationBatch {
        parent: clipped.scenario.id.clone(),
        children,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::clipper::{clip, ClipInfo, ClipWindow, NpcWindowStats};
    use crate::forecaster::{forecast, ForecastConfig};
    use crate::geom::Vec2;
    use crate::library::lookup;
    use crate::model::{catalog_model, ActorClass};
    use crate::sim::run;
    use crate::testkit::{add_npc, line, road};

    fn stats(min: f64, start: Option<f64>) -> NpcWindowStats {
        NpcWindowStats {
            window_min_distance: min,
            window_min_frame: 10,
            start_distance: start,
        }
    }

    /// `(id, model, x, y, min, start)`
    type HandNpc<'a> = (u32, &'a str, f64, f64, f64, Option<f64>);

    /// Hand-built clip over `road()` with NPCs heading east.
    fn hand_clip(npcs: &[HandNpc]) -> ClippedScenario {
        let mut s = road();
        s.id = "hand".into();
        let mut info = ClipInfo {
            parent_id: "parent".into(),
            window: ClipWindow::new(100, 3.0, 3.0, 20.0, 400).unwrap(),
            relevant_npcs: Vec::new(),
            npc_stats: BTreeMap::new(),
        };
        for &(id, model, x, y, min, start) in npcs {
            let path = line(Vec2::new(x, y), Vec2::new(x + 100.0, y), 5.0);
            add_npc(&mut s, id, model, &path, 5.0, 0.0);
            info.relevant_npcs.push(ActorId(id));
            info.npc_stats.insert(ActorId(id), stats(min, start));
        }
        s.origin = Some(Origin::Clip(info.clone()));
        ClippedScenario { info, scenario: s }
    }

    fn builtin_clip(name: &str) -> ClippedScenario {
        let s = lookup(name).unwrap();
        let t = run(&s).unwrap();
        let rp = forecast(&t, &ForecastConfig::default()).unwrap().risky_points[0].frame;
        clip(&s, &t, rp, 5.0, 5.0).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Number of NPC scripts that differ between two scenarios.
    fn changed_npcs(a: &Scenario, b: &Scenario) -> Vec<ActorId> {
        assert_eq!(a.npcs.len(), b.npcs.len());
        a.npcs.iter().zip(&b.npcs).filter(|(x, y)| x != y).map(|(x, _)| x.id).collect()
    }

    #[test]
    fn single_relevant_npc_is_both_targets() {
        let c = hand_clip(&[(1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0))]);
        assert_eq!(select_swap_target(&c).unwrap(), ActorId(1));
        assert_eq!(select_steering_target(&c), Some(ActorId(1)));
    }

    #[test]
    fn swap_targets_smallest_window_minimum() {
        let c = hand_clip(&[
            (1, "car.sedan", 40.0, 3.5, 5.0, Some(30.0)),
            (2, "car.suv", 80.0, 3.5, 1.0, Some(70.0)),
        ]);
        assert_eq!(select_swap_target(&c).unwrap(), ActorId(2));
    }

    #[test]
    fn swap_and_steering_targets_can_differ() {
        let s = lookup("crossing-ahead/1").unwrap();
        let t = run(&s).unwrap();
        let rp = forecast(&t, &ForecastConfig::default()).unwrap().risky_points[0].frame;
        let c = clip(&s, &t, rp, 5.0, 5.0).unwrap();
        // Independent scan of the parent trace.
        let w = c.window();
        let dist = |id: ActorId, f: usize| t.distance(f, id).ok();
        let vehicles: Vec<ActorId> = c
            .scenario
            .npcs
            .iter()
            .filter(|n| n.actor.class.is_vehicle())
            .map(|n| n.id)
            .collect();
        let nearest_at_start = vehicles
            .iter()
            .filter_map(|id| dist(*id, w.start_frame).map(|d| (*id, d)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id);
        assert_eq!(select_steering_target(&c), nearest_at_start);
        let min_in_window = c
            .relevant_npcs()
            .iter()
            .map(|id| {
                let m = (w.start_frame..=w.end_frame)
                    .filter_map(|f| dist(*id, f))
                    .fold(f64::INFINITY, f64::min);
                (*id, m)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id);
        assert_eq!(Some(select_swap_target(&c).unwrap()), min_in_window);

        let mut hand = hand_clip(&[
            (1, "car.sedan", 30.0, 3.5, 6.0, Some(20.0)),
            (2, "car.suv", 90.0, 3.5, 1.0, Some(80.0)),
        ]);
        assert_eq!(select_steering_target(&hand), Some(ActorId(1)));
        assert_eq!(select_swap_target(&hand).unwrap(), ActorId(2));
        hand.info.relevant_npcs.clear();
        assert!(matches!(select_swap_target(&hand), Err(Error::NoRelevantNpc)));
    }

    #[test]
    fn two_car_catalog_forces_the_other_model() {
        let c = hand_clip(&[(1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0))]);
        let models = vec![catalog_model("car.sedan").unwrap(), catalog_model("car.suv").unwrap()];
        for seed in 0..20 {
            let (child, op) = swap_model(&c, ActorId(1), &models, &mut rng(seed)).unwrap();
            assert_eq!(child.npc(ActorId(1)).unwrap().actor.model_id, "car.suv");
            assert_eq!(
                op,
                MutationOp::ModelSwap {
                    actor_id: ActorId(1),
                    new_model_id: "car.suv".into()
                }
            );
        }
        let single = vec![catalog_model("car.sedan").unwrap()];
        assert!(matches!(
            swap_model(&c, ActorId(1), &single, &mut rng(0)),
            Err(Error::NoValidModel(_))
        ));
    }

    #[test]
    fn swaps_never_cross_the_car_boundary() {
        let c = hand_clip(&[
            (1, "bicycle.city", 40.0, 3.5, 2.0, Some(30.0)),
            (2, "car.sedan", 90.0, -3.5, 8.0, Some(80.0)),
        ]);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            for target in [ActorId(1), ActorId(2)] {
                let before = c.scenario.npc(target).unwrap();
                let (child, _) = swap_model(&c, target, &catalog(), &mut rng(seed)).unwrap();
                let after = child.npc(target).unwrap();
                assert_ne!(after.actor.model_id, before.actor.model_id);
                assert_eq!(after.actor.class == ActorClass::Car, before.actor.class == ActorClass::Car);
                assert_eq!(after.spawn.pose, before.spawn.pose);
                assert!(after.spawn.speed <= after.actor.max_speed);
                if target == ActorId(1) {
                    seen.insert(after.actor.model_id.clone());
                }
            }
        }
        // Every non-car model other than the original is reachable.
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn oversized_replacements_are_redrawn() {
        // A car 3.0 m ahead of the bicycle's centre: the cargo bike overlaps it.
        let mut c = hand_clip(&[
            (1, "bicycle.city", 40.0, 3.5, 2.0, Some(30.0)),
            (2, "car.compact", 43.0, 3.5, 4.0, Some(33.0)),
        ]);
        c.info.relevant_npcs = vec![ActorId(1)];
        assert!(spawn_validity_check(&c.scenario).is_empty());
        let mut probe = c.scenario.clone();
        apply_model(&mut probe, ActorId(1), &catalog_model("bicycle.cargo").unwrap()).unwrap();
        assert!(!spawn_validity_check(&probe).is_empty());
        for seed in 0..300 {
            let (child, _) = swap_model(&c, ActorId(1), &catalog(), &mut rng(seed)).unwrap();
            assert_ne!(child.npc(ActorId(1)).unwrap().actor.model_id, "bicycle.cargo");
            assert!(spawn_validity_check(&child).is_empty());
        }
    }

    #[test]
    fn steering_override_is_seeded_and_vehicle_only() {
        let c = hand_clip(&[
            (1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0)),
            (2, "pedestrian.adult", 60.0, 8.0, 3.0, Some(50.0)),
        ]);
        let (a, op_a) = perturb_steering(&c, ActorId(1), &mut rng(7)).unwrap();
        let (b, op_b) = perturb_steering(&c, ActorId(1), &mut rng(7)).unwrap();
        assert_eq!((a, &op_a), (b, &op_b));
        assert!(matches!(
            perturb_steering(&c, ActorId(2), &mut rng(7)),
            Err(Error::TargetNotVehicle(_))
        ));
        assert!(matches!(
            perturb_steering(&c, ActorId(9), &mut rng(7)),
            Err(Error::UnknownActor(_))
        ));
    }

    #[test]
    fn full_left_override_turns_counter_clockwise() {
        let mut c = hand_clip(&[(1, "car.sedan", 40.0, 20.0, 2.0, Some(30.0))]);
        c.scenario.npc_mut(ActorId(1)).unwrap().steering_override = Some(-1.0);
        let t = run(&c.scenario).unwrap();
        let first = t.frames[0].npcs[&ActorId(1)];
        let later = t.frames[10].npcs[&ActorId(1)];
        assert!(later.pose.heading > first.pose.heading);
        assert!(later.pose.position.y > first.pose.position.y);
    }

    #[test]
    fn steering_draws_are_uniform() {
        let c = hand_clip(&[(1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0))]);
        let mut r = rng(42);
        let mut draws: Vec<f64> = (0..1000)
            .map(|_| match perturb_steering(&c, ActorId(1), &mut r).unwrap().1 {
                MutationOp::SteeringPerturb { value, .. } => value,
                op => panic!("unexpected {op}"),
            })
            .collect();
        assert!(draws.iter().all(|v| (-1.0..=1.0).contains(v)));
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let cdf = (v + 1.0) / 2.0;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at alpha = 0.01.
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn two_children_alternate_operators() {
        let c = hand_clip(&[(1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0))]);
        let batch = generate_children(&c, 2, 3).unwrap();
        let ops: Vec<_> = batch.children.iter().map(|ch| ch.op.name()).collect();
        assert_eq!(ops, ["model_swap", "steering_perturb"]);
        assert_eq!(batch.parent, "hand");
        assert_eq!(batch.children[1].scenario.id, "hand#c1");
        assert!(matches!(generate_children(&c, 0, 3), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn pedestrian_only_clip_gets_swaps_only() {
        let c = hand_clip(&[
            (1, "pedestrian.adult", 40.0, 6.0, 2.0, Some(30.0)),
            (2, "pedestrian.child", 60.0, 6.0, 3.0, Some(50.0)),
        ]);
        let batch = generate_children(&c, 7, 1).unwrap();
        assert_eq!(batch.children.len(), 7);
        assert!(batch.children.iter().all(|ch| ch.op.name() == "model_swap"));
    }

    #[test]
    fn exhausted_catalog_falls_back_to_steering() {
        let c = hand_clip(&[(1, "car.sedan", 40.0, 3.5, 2.0, Some(30.0))]);
        let models = vec![catalog_model("car.sedan").unwrap()];
        let batch = generate_children_with(&c, 4, 0, &models).unwrap();
        assert!(batch.children.iter().all(|ch| ch.op.name() == "steering_perturb"));
    }

    #[test]
    fn batches_are_seed_deterministic() {
        let c = builtin_clip("crossing-ahead/1");
        assert_eq!(generate_children(&c, 10, 5).unwrap(), generate_children(&c, 10, 5).unwrap());
        assert_ne!(generate_children(&c, 10, 5).unwrap(), generate_children(&c, 10, 6).unwrap());
    }

    #[test]
    fn builtin_children_are_minimal_and_valid() {
        for name in ["crossing-ahead/1", "unprotected-left/0", "right-turn-yield/0"] {
            let c = builtin_clip(name);
            let batch = generate_children(&c, 10, 11).unwrap();
            assert_eq!(batch.children.len(), 10);
            for (i, ch) in batch.children.iter().enumerate() {
                assert!(spawn_validity_check(&ch.scenario).is_empty(), "{name} child {i}");
                assert_eq!(changed_npcs(&c.scenario, &ch.scenario), [ch.op.actor_id()]);
                let before = c.scenario.npc(ch.op.actor_id()).unwrap();
                let after = ch.scenario.npc(ch.op.actor_id()).unwrap();
                match &ch.op {
                    MutationOp::ModelSwap { new_model_id, .. } => {
                        assert_eq!(&after.actor.model_id, new_model_id);
                        assert_eq!(after.steering_override, before.steering_override);
                    }
                    MutationOp::SteeringPerturb { value, .. } => {
                        assert_eq!(after.steering_override, Some(*value));
                        assert_eq!(after.actor, before.actor);
                    }
                }
                assert!(matches!(
                    &ch.scenario.origin,
                    Some(Origin::Mutation { parent_id, child_index, .. }) if parent_id == &c.scenario.id && *child_index == i
                ));
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn children_keep_invariants(seed in proptest::prelude::any::<u64>(), c in 1usize..12, bike in proptest::prelude::any::<bool>()) {
            let first = if bike { "bicycle.cargo" } else { "car.van" };
            let clip = hand_clip(&[
                (1, first, 40.0, 3.5, 1.5, Some(30.0)),
                (2, "car.sedan", 70.0, -3.5, 4.0, Some(60.0)),
                (3, "pedestrian.elderly", 55.0, 7.0, 6.0, Some(45.0)),
            ]);
            let batch = generate_children(&clip, c, seed).unwrap();
            proptest::prop_assert_eq!(batch.children.len(), c);
            for ch in &batch.children {
                proptest::prop_assert!(spawn_validity_check(&ch.scenario).is_empty());
                proptest::prop_assert_eq!(changed_npcs(&clip.scenario, &ch.scenario), vec![ch.op.actor_id()]);
                let before = clip.scenario.npc(ch.op.actor_id()).unwrap();
                let after = ch.scenario.npc(ch.op.actor_id()).unwrap();
                proptest::prop_assert_eq!(before.actor.class == ActorClass::Car, after.actor.class == ActorClass::Car);
                if let MutationOp::SteeringPerturb { value, .. } = ch.op {
                    proptest::prop_assert!((-1.0..=1.0).contains(&value));
                }
            }
        }
    }
}
