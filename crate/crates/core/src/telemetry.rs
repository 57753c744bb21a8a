//! Recorded traces: per-tick kinematic telemetry, footprint distances,
//! closest approaches and the CSV trace format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use crate::kinematics::{KinematicState, Pose};
use crate::model::{ActorClass, ActorId, ActorModel};
use crate::scenario::SCHEMA_VERSION;
use crate::sim::Outcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorInfo {
    pub id: ActorId,
    pub class: ActorClass,
    pub model_id: String,
    pub length: f64,
    pub width: f64,
}

impl ActorInfo {
    pub fn of(id: ActorId, model: &ActorModel) -> Self {
        Self {
            id,
            class: model.class,
            model_id: model.model_id.clone(),
            length: model.length,
            width: model.width,
        }
    }

    pub fn footprint(&self, state: &KinematicState) -> Rect {
        state.footprint(self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub t: f64,
    pub tick: usize,
    pub ego: KinematicState,
    /// NPCs alive at this tick; despawned or not-yet-spawned actors are absent.
    pub npcs: BTreeMap<ActorId, KinematicState>,
}

impl TraceFrame {
    pub fn state(&self, id: ActorId) -> Option<&KinematicState> {
        if id == ActorId::EGO {
            Some(&self.ego)
        } else {
            self.npcs.get(&id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario_id: String,
    pub tick_rate: f64,
    /// Ego first, then every NPC of the scenario.
    pub actors: Vec<ActorInfo>,
    pub frames: Vec<TraceFrame>,
    pub outcome: Outcome,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosestApproach {
    pub actor_id: ActorId,
    pub frame: usize,
    pub distance: f64,
}

impl Trace {
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    /// Simulated duration covered by the frames, s.
    pub fn duration(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.t)
    }

    pub fn actor(&self, id: ActorId) -> Option<&ActorInfo> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn ego_info(&self) -> &ActorInfo {
        &self.actors[0]
    }

    pub fn npc_ids(&self) -> impl Iterator<Item = ActorId> + '_ {
        self.actors
            .iter()
            .map(|a| a.id)
            .filter(|&id| id != ActorId::EGO)
    }

    pub fn ego_footprint(&self, frame: usize) -> Rect {
        self.ego_info().footprint(&self.frames[frame].ego)
    }

    pub fn footprint(&self, frame: usize, id: ActorId) -> Option<Rect> {
        let info = self.actor(id)?;
        self.frames[frame].state(id).map(|s| info.footprint(s))
    }

    /// Edge-to-edge distance between the ego and `id` footprints at `frame`.
    pub fn distance(&self, frame: usize, id: ActorId) -> Result<f64> {
        let ego = self.ego_footprint(frame);
        let other = self.footprint(frame, id).ok_or(Error::UnknownActor(id))?;
        Ok(ego.distance(&other))
    }

    /// Frame where `id` comes closest to the ego; earliest frame on ties.
    pub fn closest_approach(&self, id: ActorId) -> Result<ClosestApproach> {
        let info = self.actor(id).ok_or(Error::UnknownActor(id))?;
        let mut best: Option<ClosestApproach> = None;
        for (i, frame) in self.frames.iter().enumerate() {
            let Some(state) = frame.npcs.get(&id) else {
                continue;
            };
            let d = self.ego_footprint(i).distance(&info.footprint(state));
            if best.is_none_or(|b| d < b.distance) {
                best = Some(ClosestApproach {
                    actor_id: id,
                    frame: i,
                    distance: d,
                });
            }
        }
        best.ok_or(Error::UnknownActor(id))
    }

    pub fn ego_polyline(&self) -> Vec<Vec2> {
        self.frames.iter().map(|f| f.ego.pose.position).collect()
    }

    /// Positions of `id` in tick order over the frames where it is present.
    pub fn actor_polyline(&self, id: ActorId) -> Vec<Vec2> {
        self.frames
            .iter()
            .filter_map(|f| f.npcs.get(&id).map(|s| s.pose.position))
            .collect()
    }

    pub fn first_appearance(&self, id: ActorId) -> Option<usize> {
        self.frames.iter().position(|f| f.npcs.contains_key(&id))
    }

    /// Frame index for a tick (frames start at tick 0 and are contiguous).
    pub fn frame_at_time(&self, t: f64) -> usize {
        let idx = (t * self.tick_rate).round().max(0.0) as usize;
        idx.min(self.frames.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::TraceFormat("trace has no frames".into()));
        }
        if self.actors.first().map(|a| a.id) != Some(ActorId::EGO) {
            return Err(Error::TraceFormat("first actor must be the ego".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.tick != i {
                return Err(Error::TraceFormat(format!(
                    "tick {} at position {i}: ticks must start at 0 and increase by 1",
                    f.tick
                )));
            }
        }
        Ok(())
    }
}

/// Sidecar record stored next to a CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    pub scenario_id: String,
    pub tick_rate: f64,
    pub actors: Vec<ActorInfo>,
    pub frame_count: usize,
    pub outcome: Outcome,
    pub wall_time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    tick: usize,
    t: f64,
    actor_id: u32,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    yaw_rate: f64,
}

/// Path of the outcome sidecar belonging to a CSV trace file.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("outcome.json")
}

impl Trace {
    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            schema_version: SCHEMA_VERSION,
            scenario_id: self.scenario_id.clone(),
            tick_rate: self.tick_rate,
            actors: self.actors.clone(),
            frame_count: self.frames.len(),
            outcome: self.outcome,
            wall_time: self.wall_time,
        }
    }

    /// One row per (tick, actor). Floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for f in &self.frames {
            let rows = std::iter::once((ActorId::EGO, &f.ego)).chain(f.npcs.iter().map(|(k, v)| (*k, v)));
            for (id, s) in rows {
                w.serialize(CsvRow {
                    tick: f.tick,
                    t: f.t,
                    actor_id: id.0,
                    x: s.pose.position.x,
                    y: s.pose.position.y,
                    heading: s.pose.heading,
                    speed: s.speed,
                    yaw_rate: s.yaw_rate,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild a trace from its CSV rows and sidecar, rejecting gaps and
    /// non-monotonic ticks.
    pub fn read_csv<R: Read>(reader: R, meta: TraceMeta) -> Result<Trace> {
        let mut r = csv::Reader::from_reader(reader);
        let mut frames: Vec<TraceFrame> = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row?;
            let state = KinematicState {
                pose: Pose {
                    position: Vec2::new(row.x, row.y),
                    heading: row.heading,
                },
                speed: row.speed,
                yaw_rate: row.yaw_rate,
            };
            let id = ActorId(row.actor_id);
            match frames.last_mut() {
                Some(f) if f.tick == row.tick => {
                    if id == ActorId::EGO || f.npcs.insert(id, state).is_some() {
                        return Err(Error::TraceFormat(format!(
                            "duplicate row for actor {id} at tick {}",
                            row.tick
                        )));
                    }
                }
                last => {
                    let expected = last.map_or(0, |f| f.tick + 1);
                    if row.tick != expected {
                        return Err(Error::TraceFormat(format!(
                            "expected tick {expected}, found {}",
                            row.tick
                        )));
                    }
                    if id != ActorId::EGO {
                        return Err(Error::TraceFormat(format!(
                            "tick {} does not start with the ego row",
                            row.tick
                        )));
                    }
                    frames.push(TraceFrame {
                        t: row.t,
                        tick: row.tick,
                        ego: state,
                        npcs: BTreeMap::new(),
                    });
                }
            }
        }
        if frames.len() != meta.frame_count {
            return Err(Error::TraceFormat(format!(
                "sidecar declares {} frames, CSV has {}",
                meta.frame_count,
                frames.len()
            )));
        }
        let trace = Trace {
            scenario_id: meta.scenario_id,
            tick_rate: meta.tick_rate,
            actors: meta.actors,
            frames,
            outcome: meta.outcome,
            wall_time: meta.wall_time,
        };
        trace.validate()?;
        for f in &trace.frames {
            if let Some(id) = f.npcs.keys().find(|id| trace.actor(**id).is_none()) {
                return Err(Error::TraceFormat(format!("actor {id} missing from sidecar")));
            }
        }
        Ok(trace)
    }

    /// Write `<path>` (CSV) and its `.outcome.json` sidecar.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(std::fs::File::create(csv_path)?)?;
        let mut meta = serde_json::to_string_pretty(&self.meta())?;
        meta.push('\n');
        std::fs::write(sidecar_path(csv_path), meta)?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>) -> Result<Trace> {
        let csv_path = csv_path.as_ref();
        let meta: TraceMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
        Trace::read_csv(std::fs::File::open(csv_path)?, meta)
    }
}
