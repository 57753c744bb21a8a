//! Actor identities, classes and the vehicle model catalog.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation-wide actor identifier. The ego vehicle is always [`ActorId::EGO`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorId(pub u32);

impl ActorId {
    pub const EGO: ActorId = ActorId(0);
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Car,
    Bicycle,
    Pedestrian,
}

impl ActorClass {
    /// Cars and bicycles follow the bicycle model and accept steering input.
    pub fn is_vehicle(self) -> bool {
        !matches!(self, ActorClass::Pedestrian)
    }

    /// Classes a model of this class may be swapped with.
    pub fn substitutes(self) -> &'static [ActorClass] {
        match self {
            ActorClass::Car => &[ActorClass::Car],
            ActorClass::Bicycle | ActorClass::Pedestrian => {
                &[ActorClass::Bicycle, ActorClass::Pedestrian]
            }
        }
    }
}

/// Physical and kinematic limits of one actor model.
///
/// For vehicles `max_steer` is the front-wheel steering limit in radians.
/// Pedestrians have no steering linkage; for them `max_steer` is the maximum
/// turn rate in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorModel {
    pub model_id: String,
    pub class: ActorClass,
    pub length: f64,
    pub width: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub max_steer: f64,
}

impl ActorModel {
    pub fn wheelbase(&self) -> f64 {
        match self.class {
            ActorClass::Car => 0.6 * self.length,
            ActorClass::Bicycle => 0.65 * self.length,
            ActorClass::Pedestrian => self.length,
        }
    }

    pub fn max_yaw_rate(&self) -> f64 {
        if self.class.is_vehicle() {
            self.max_speed * self.max_steer.tan() / self.wheelbase()
        } else {
            self.max_steer
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("width", self.width),
            ("max_speed", self.max_speed),
            ("max_decel", self.max_decel),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "model {}: {name} must be positive, got {v}",
                    self.model_id
                )));
            }
        }
        if !(self.max_accel.is_finite() && self.max_accel >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "model {}: max_accel must be non-negative",
                self.model_id
            )));
        }
        let steer_ok = self.max_steer.is_finite()
            && self.max_steer > 0.0
            && (!self.class.is_vehicle() || self.max_steer < std::f64::consts::FRAC_PI_2);
        if !steer_ok {
            return Err(Error::InvalidScenario(format!(
                "model {}: max_steer out of range",
                self.model_id
            )));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn model(
    id: &str,
    class: ActorClass,
    length: f64,
    width: f64,
    max_speed: f64,
    max_accel: f64,
    max_decel: f64,
    max_steer: f64,
) -> ActorModel {
    ActorModel {
        model_id: id.to_string(),
        class,
        length,
        width,
        max_speed,
        max_accel,
        max_decel,
        max_steer,
    }
}

/// Built-in catalog: six cars, three bicycles, three pedestrians.
pub fn catalog() -> Vec<ActorModel> {
    use ActorClass::*;
    vec![
        model("car.compact", Car, 3.8, 1.7, 14.0, 2.2, 6.5, 0.62),
        model("car.sedan", Car, 4.6, 1.85, 18.0, 3.2, 7.0, 0.58),
        model("car.hatchback", Car, 4.1, 1.75, 16.0, 4.2, 7.5, 0.6),
        model("car.suv", Car, 4.9, 2.0, 17.0, 2.7, 6.0, 0.55),
        model("car.van", Car, 5.4, 2.05, 14.5, 1.8, 5.5, 0.52),
        model("car.sport", Car, 4.4, 1.9, 25.0, 5.5, 8.5, 0.6),
        model("bicycle.city", Bicycle, 1.8, 0.6, 6.0, 1.2, 3.0, 0.7),
        model("bicycle.road", Bicycle, 1.75, 0.5, 9.0, 2.0, 3.5, 0.65),
        model("bicycle.cargo", Bicycle, 2.5, 0.8, 5.0, 0.8, 2.5, 0.6),
        model("pedestrian.adult", Pedestrian, 0.5, 0.6, 2.2, 1.5, 3.0, 4.0),
        model("pedestrian.child", Pedestrian, 0.4, 0.45, 1.8, 1.2, 2.5, 5.0),
        model("pedestrian.elderly", Pedestrian, 0.5, 0.6, 1.3, 0.7, 1.5, 3.0),
    ]
}

pub fn catalog_model(model_id: &str) -> Option<ActorModel> {
    catalog().into_iter().find(|m| m.model_id == model_id)
}

/// Ego vehicle model used by the built-in scenarios.
pub fn default_ego_model() -> ActorModel {
    model("ego.sedan", ActorClass::Car, 4.6, 1.85, 20.0, 3.0, 7.0, 0.6)
}
