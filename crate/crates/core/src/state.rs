//! Planar world state: SE(2) poses with one auxiliary coordinate per entity
//! (gripper opening for the robot, orientation flag for objects), and the
//! frame constructions that anchor task-parameterized models to poses.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Frame;

/// Dimension of every entity state vector: (x, y, theta, aux).
pub const POSE_DIM: usize = 4;

/// Reserved entity id for the robot / end-effector.
pub const ROBOT_ID: &str = "robot";

pub type EntityId = String;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Absolute angular distance on the circle.
pub fn angle_dist(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Pose of one entity: planar position, yaw, and an auxiliary coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub aux: f64,
}

impl EntityPose {
    pub fn new(x: f64, y: f64, theta: f64, aux: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            aux,
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_vec(vec![self.x, self.y, self.theta, self.aux])
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(Error::DimensionMismatch {
                expected: POSE_DIM,
                got: v.len(),
            });
        }
        Ok(Self::new(v[0], v[1], v[2], v[3]))
    }

    /// Observation frame anchored at this pose. The rotation acts on (x, y);
    /// yaw and the aux coordinate compose additively, so both pass-through
    /// behavior and fixed aux changes are constants in the anchor's frame.
    pub fn frame(&self) -> Frame {
        let (s, c) = self.theta.sin_cos();
        let mut a = DMatrix::identity(POSE_DIM, POSE_DIM);
        a[(0, 0)] = c;
        a[(0, 1)] = -s;
        a[(1, 0)] = s;
        a[(1, 1)] = c;
        let b = DVector::from_vec(vec![self.x, self.y, self.theta, self.aux]);
        Frame::new(a, b).expect("rotation frames are always invertible")
    }

    /// Composes a local offset pose into this pose's coordinates. The result
    /// keeps the offset's aux value.
    pub fn compose(&self, local: &EntityPose) -> EntityPose {
        let (s, c) = self.theta.sin_cos();
        EntityPose::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.theta + local.theta,
            local.aux,
        )
    }

    /// This pose expressed in `base`'s coordinates.
    pub fn relative_to(&self, base: &EntityPose) -> EntityPose {
        let (s, c) = base.theta.sin_cos();
        let dx = self.x - base.x;
        let dy = self.y - base.y;
        EntityPose::new(
            c * dx + s * dy,
            -s * dx + c * dy,
            self.theta - base.theta,
            self.aux,
        )
    }

    pub fn planar_dist(&self, other: &EntityPose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Full system state: robot plus object poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: EntityPose,
    pub objects: BTreeMap<EntityId, EntityPose>,
}

impl WorldState {
    pub fn new(robot: EntityPose, objects: BTreeMap<EntityId, EntityPose>) -> Self {
        Self { robot, objects }
    }

    pub fn entity(&self, id: &str) -> Result<&EntityPose> {
        if id == ROBOT_ID {
            Ok(&self.robot)
        } else {
            self.objects
                .get(id)
                .ok_or_else(|| Error::MissingEntity(id.to_string()))
        }
    }

    pub fn set_entity(&mut self, id: &str, pose: EntityPose) -> Result<()> {
        if id == ROBOT_ID {
            self.robot = pose;
        } else {
            let slot = self
                .objects
                .get_mut(id)
                .ok_or_else(|| Error::MissingEntity(id.to_string()))?;
            *slot = pose;
        }
        Ok(())
    }

    /// Robot first, then objects in key order.
    pub fn entity_ids(&self) -> Vec<EntityId> {
        let mut ids = vec![ROBOT_ID.to_string()];
        ids.extend(self.objects.keys().cloned());
        ids
    }

    /// Quantized key used for state merging during search: positions and aux
    /// coordinates at `pos_tol`, yaw at `rot_tol`.
    pub fn merge_key(&self, pos_tol: f64, rot_tol: f64) -> Vec<i64> {
        let mut key = Vec::with_capacity((1 + self.objects.len()) * POSE_DIM);
        let mut push = |p: &EntityPose| {
            key.push((p.x / pos_tol).round() as i64);
            key.push((p.y / pos_tol).round() as i64);
            key.push((wrap_angle(p.theta) / rot_tol).round() as i64);
            key.push((p.aux / pos_tol).round() as i64);
        };
        push(&self.robot);
        for pose in self.objects.values() {
            push(pose);
        }
        key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_angle_lands_in_half_open_interval() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
        assert!(wrap_angle(7.0) < std::f64::consts::PI);
    }

    #[test]
    fn frame_observe_inverts_apply() {
        let pose = EntityPose::new(1.0, -0.5, 0.7, 0.0);
        let f = pose.frame();
        let x = DVector::from_vec(vec![0.3, 0.8, -0.2, 1.0]);
        let back = f.observe(&f.apply(&x));
        assert_relative_eq!(back, x, epsilon = 1e-12);
    }

    #[test]
    fn compose_and_relative_round_trip() {
        let base = EntityPose::new(2.0, 1.0, 0.9, 0.0);
        let local = EntityPose::new(0.4, -0.3, 0.2, 1.0);
        let global = base.compose(&local);
        let again = global.relative_to(&base);
        assert_relative_eq!(again.x, local.x, epsilon = 1e-12);
        assert_relative_eq!(again.y, local.y, epsilon = 1e-12);
        assert_relative_eq!(again.theta, local.theta, epsilon = 1e-12);
    }

    #[test]
    fn frame_matches_compose_on_pose_vectors() {
        // compose() keeps the local aux verbatim; the frame shifts it by the
        // anchor's aux, so compare the SE(2) part only.
        let base = EntityPose::new(-1.0, 0.5, -0.6, 0.0);
        let local = EntityPose::new(0.2, 0.9, 0.4, 0.7);
        let via_frame = base.frame().apply(&local.to_vector());
        let via_compose = base.compose(&local).to_vector();
        for i in 0..3 {
            assert_relative_eq!(via_frame[i], via_compose[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn merge_key_groups_nearby_states() {
        let mut objects = BTreeMap::new();
        objects.insert("letter".to_string(), EntityPose::new(1.0, 2.0, 0.5, 1.0));
        let a = WorldState::new(EntityPose::new(0.0, 0.0, 0.0, 0.0), objects.clone());
        let mut b = a.clone();
        b.objects.get_mut("letter").unwrap().x += 0.01;
        assert_eq!(a.merge_key(0.05, 0.1), b.merge_key(0.05, 0.1));
        b.objects.get_mut("letter").unwrap().x += 0.2;
        assert_ne!(a.merge_key(0.05, 0.1), b.merge_key(0.05, 0.1));
    }
}
