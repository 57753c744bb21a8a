//! Waypoint maps and route resolution.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};

/// Longest straight connector allowed between waypoints on different lanes.
pub const MAX_CONNECTOR_LENGTH: f64 = 25.0;
/// Minimum spacing between consecutive waypoints of a lane.
pub const MIN_WAYPOINT_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WaypointId(pub u32);

impl fmt::Display for WaypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wp{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: WaypointId,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub name: String,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    Pole,
    Pavement,
    Barrier,
    Building,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub id: u32,
    pub class: ObstacleClass,
    pub shape: Rect,
}

/// Invisible map entity. Never collides during simulation, but spawning an
/// actor on top of one is rejected as a phantom-object hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    pub id: u32,
    pub shape: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointMap {
    pub lanes: Vec<Lane>,
    pub lane_width: f64,
    #[serde(default)]
    pub static_obstacles: Vec<StaticObstacle>,
    #[serde(default)]
    pub exclusion_zones: Vec<ExclusionZone>,
}

/// Location of a waypoint inside the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointRef {
    pub lane: usize,
    pub index: usize,
    pub position: Vec2,
}

impl WaypointMap {
    pub fn index(&self) -> HashMap<WaypointId, WaypointRef> {
        let mut idx = HashMap::new();
        for (lane_i, lane) in self.lanes.iter().enumerate() {
            for (i, wp) in lane.waypoints.iter().enumerate() {
                idx.insert(
                    wp.id,
                    WaypointRef {
                        lane: lane_i,
                        index: i,
                        position: wp.position,
                    },
                );
            }
        }
        idx
    }

    pub fn waypoint(&self, id: WaypointId) -> Option<Vec2> {
        self.lanes
            .iter()
            .flat_map(|l| l.waypoints.iter())
            .find(|w| w.id == id)
            .map(|w| w.position)
    }

    pub fn waypoints(&self) -> impl Iterator<Item = &Waypoint> {
        self.lanes.iter().flat_map(|l| l.waypoints.iter())
    }

    pub fn max_waypoint_id(&self) -> Option<WaypointId> {
        self.waypoints().map(|w| w.id).max()
    }

    /// Append a lane through `points`, numbering its waypoints after the
    /// largest id in the map. Returns the new ids in lane order.
    pub fn add_lane(&mut self, name: &str, points: &[Vec2]) -> Vec<WaypointId> {
        let first = self.max_waypoint_id().map_or(0, |w| w.0 + 1);
        let waypoints: Vec<Waypoint> = points
            .iter()
            .enumerate()
            .map(|(i, &position)| Waypoint {
                id: WaypointId(first + i as u32),
                position,
            })
            .collect();
        let ids = waypoints.iter().map(|w| w.id).collect();
        self.lanes.push(Lane {
            name: name.into(),
            waypoints,
        });
        ids
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width.is_finite() && self.lane_width > 0.0) {
            return Err(Error::InvalidScenario("lane_width must be positive".into()));
        }
        let mut seen = HashMap::new();
        for lane in &self.lanes {
            for w in &lane.waypoints {
                if !w.position.is_finite() {
                    return Err(Error::InvalidScenario(format!("{} is not finite", w.id)));
                }
                if seen.insert(w.id, ()).is_some() {
                    return Err(Error::InvalidScenario(format!("duplicate waypoint {}", w.id)));
                }
            }
            for pair in lane.waypoints.windows(2) {
                if pair[0].position.distance(pair[1].position) < MIN_WAYPOINT_SPACING {
                    return Err(Error::InvalidScenario(format!(
                        "waypoints {} and {} on lane {} are closer than {MIN_WAYPOINT_SPACING} m",
                        pair[0].id, pair[1].id, lane.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Expand a list of anchor waypoints into the full ordered polyline.
    ///
    /// Consecutive anchors on the same lane (in forward order) expand to every
    /// lane waypoint between them; anchors on different lanes are joined by a
    /// straight connector no longer than [`MAX_CONNECTOR_LENGTH`].
    pub fn resolve_path(&self, anchors: &[WaypointId]) -> Result<Vec<Waypoint>> {
        let idx = self.index();
        let lookup = |id: WaypointId| {
            idx.get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidScenario(format!("unknown waypoint {id}")))
        };
        let Some(&first) = anchors.first() else {
            return Err(Error::InvalidScenario("empty route".into()));
        };
        let mut out = vec![Waypoint {
            id: first,
            position: lookup(first)?.position,
        }];
        for pair in anchors.windows(2) {
            let (a, b) = (lookup(pair[0])?, lookup(pair[1])?);
            if a.lane == b.lane && a.index < b.index {
                let lane = &self.lanes[a.lane];
                out.extend_from_slice(&lane.waypoints[a.index + 1..=b.index]);
            } else if pair[0] == pair[1] {
                continue;
            } else {
                let gap = a.position.distance(b.position);
                if gap > MAX_CONNECTOR_LENGTH {
                    return Err(Error::InvalidScenario(format!(
                        "{} is unreachable from {} ({gap:.1} m gap)",
                        pair[1], pair[0]
                    )));
                }
                out.push(Waypoint {
                    id: pair[1],
                    position: b.position,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lane(name: &str, first_id: u32, pts: &[(f64, f64)]) -> Lane {
        Lane {
            name: name.into(),
            waypoints: pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| Waypoint {
                    id: WaypointId(first_id + i as u32),
                    position: Vec2::new(x, y),
                })
                .collect(),
        }
    }

    fn two_lane_map() -> WaypointMap {
        WaypointMap {
            lanes: vec![
                lane("a", 0, &[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (15.0, 0.0)]),
                lane("b", 100, &[(20.0, 0.0), (25.0, 0.0)]),
            ],
            lane_width: 3.5,
            static_obstacles: vec![],
            exclusion_zones: vec![],
        }
    }

    #[test]
    fn same_lane_anchors_expand() {
        let map = two_lane_map();
        let path = map.resolve_path(&[WaypointId(0), WaypointId(3)]).unwrap();
        assert_eq!(path.len(), 4);
    }

    #[test]
    fn connector_joins_lanes_and_rejects_long_gaps() {
        let map = two_lane_map();
        let path = map
            .resolve_path(&[WaypointId(0), WaypointId(3), WaypointId(101)])
            .unwrap();
        assert_eq!(path.last().unwrap().id, WaypointId(101));
        let mut far = two_lane_map();
        far.lanes[1].waypoints[1].position = Vec2::new(200.0, 0.0);
        assert!(far
            .resolve_path(&[WaypointId(3), WaypointId(101)])
            .is_err());
    }

    #[test]
    fn validation_rejects_duplicate_ids_and_tight_spacing() {
        let mut map = two_lane_map();
        map.lanes[1].waypoints[0].id = WaypointId(1);
        assert!(map.validate().is_err());
        let mut map = two_lane_map();
        map.lanes[0].waypoints[1].position = Vec2::new(0.2, 0.0);
        assert!(map.validate().is_err());
    }
}
