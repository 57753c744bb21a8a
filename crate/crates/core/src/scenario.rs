//! Scenario description and its JSON file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clipper::ClipInfo;
use crate::error::{Error, Result};
use crate::kinematics::KinematicState;
use crate::map::{WaypointId, WaypointMap};
use crate::model::{ActorId, ActorModel};
use crate::mutator::MutationOp;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub start: WaypointId,
    pub end: WaypointId,
    #[serde(default)]
    pub via: Vec<WaypointId>,
}

impl Route {
    pub fn anchors(&self) -> Vec<WaypointId> {
        let mut ids = Vec::with_capacity(self.via.len() + 2);
        ids.push(self.start);
        ids.extend_from_slice(&self.via);
        ids.push(self.end);
        ids
    }
}

/// Tuning of the rule-based ego driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    /// Cruise speed along the route, m/s.
    pub target_speed: f64,
    /// When false the driver never brakes for other actors.
    pub braking: bool,
    /// Full braking when the forecast time-to-collision drops to this, s.
    pub ttc_brake: f64,
    /// Constant-velocity rollout horizon, s.
    pub ttc_horizon: f64,
    /// Rollout step, s.
    pub ttc_step: f64,
    /// Half-angle of the forward perception cone, rad.
    pub cone_half_angle: f64,
    /// Perception range, m.
    pub look_ahead_range: f64,
    /// Speed floor used when forecasting TTC, so that a stopped ego keeps
    /// holding behind a close obstacle, m/s.
    pub min_forecast_speed: f64,
    /// Footprint inflation used in the TTC rollout, m.
    pub safety_margin: f64,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
    pub speed_gain: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            target_speed: 10.0,
            braking: true,
            ttc_brake: 1.5,
            ttc_horizon: 4.0,
            ttc_step: 0.1,
            cone_half_angle: 30f64.to_radians(),
            look_ahead_range: 40.0,
            min_forecast_speed: 2.0,
            safety_margin: 0.3,
            lookahead_min: 4.0,
            lookahead_gain: 0.5,
            speed_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub waypoint: WaypointId,
    /// Speed held while driving toward `waypoint`. A zero target on the final
    /// step makes the NPC stop at that waypoint and stay there.
    pub target_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMode {
    /// The override replaces the scripted steering.
    #[default]
    Replace,
    /// The override is added to the scripted steering.
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcScript {
    pub id: ActorId,
    pub actor: ActorModel,
    pub spawn: KinematicState,
    pub plan: Vec<PlanStep>,
    #[serde(default)]
    pub trigger_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_override: Option<f64>,
    #[serde(default)]
    pub steering_mode: SteeringMode,
}

/// Provenance annotation for derived scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Clip(ClipInfo),
    Mutation {
        parent_id: String,
        op: MutationOp,
        seed: u64,
        child_index: usize,
        clip: ClipInfo,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    pub map: WaypointMap,
    pub route: Route,
    pub ego_model: ActorModel,
    pub ego_spawn: KinematicState,
    #[serde(default)]
    pub npcs: Vec<NpcScript>,
    pub duration_limit: f64,
    pub tick_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    /// Set how every NPC applies a steering override.
    pub fn with_steering_mode(mut self, mode: SteeringMode) -> Self {
        for npc in &mut self.npcs {
            npc.steering_mode = mode;
        }
        self
    }

    pub fn npc(&self, id: ActorId) -> Option<&NpcScript> {
        self.npcs.iter().find(|n| n.id == id)
    }

    pub fn npc_mut(&mut self, id: ActorId) -> Option<&mut NpcScript> {
        self.npcs.iter_mut().find(|n| n.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.duration_limit.is_finite() && self.duration_limit > 0.0) {
            return Err(bad("duration_limit must be positive"));
        }
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(bad("tick_rate must be positive"));
        }
        self.map.validate()?;
        self.ego_model.validate()?;
        check_state(&self.ego_spawn, "ego spawn")?;
        let idx = self.map.index();
        for id in self.route.anchors() {
            if !idx.contains_key(&id) {
                return Err(bad(format!("route waypoint {id} not in map")));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for npc in &self.npcs {
            if npc.id == ActorId::EGO || !ids.insert(npc.id) {
                return Err(bad(format!("invalid or duplicate NPC id {}", npc.id)));
            }
            npc.actor.validate()?;
            check_state(&npc.spawn, &format!("NPC {} spawn", npc.id))?;
            if !(npc.trigger_time.is_finite() && npc.trigger_time >= 0.0) {
                return Err(bad(format!("NPC {} trigger_time must be >= 0", npc.id)));
            }
            if npc.plan.is_empty() {
                return Err(bad(format!("NPC {} has an empty plan", npc.id)));
            }
            for step in &npc.plan {
                if !idx.contains_key(&step.waypoint) {
                    return Err(bad(format!(
                        "NPC {} plan waypoint {} not in map",
                        npc.id, step.waypoint
                    )));
                }
                if !(step.target_speed >= 0.0 && step.target_speed <= npc.actor.max_speed + 1e-9) {
                    return Err(bad(format!(
                        "NPC {} target speed {} outside [0, {}]",
                        npc.id, step.target_speed, npc.actor.max_speed
                    )));
                }
            }
            if let Some(s) = npc.steering_override {
                if !(-1.0..=1.0).contains(&s) {
                    return Err(bad(format!("NPC {} steering override {s} outside [-1, 1]", npc.id)));
                }
                if !npc.actor.class.is_vehicle() {
                    return Err(bad(format!("NPC {} is not a vehicle but has a steering override", npc.id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json_string()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn check_state(s: &KinematicState, what: &str) -> Result<()> {
    if !s.pose.position.is_finite() || !s.pose.heading.is_finite() || !s.yaw_rate.is_finite() {
        return Err(bad(format!("{what} is not finite")));
    }
    if !(s.speed.is_finite() && s.speed >= 0.0) {
        return Err(bad(format!("{what} speed must be >= 0")));
    }
    Ok(())
}
