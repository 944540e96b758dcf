//! Euler-angle convention for the body-to-navigation rotation.
//!
//! Body axes are right/forward/up. Yaw is the heading measured from north,
//! positive clockwise seen from above; pitch is nose-up about the body x axis;
//! roll is right-wing-down about the body y axis. The rotation is
//! `C_b^n = Rz(-yaw) * Rx(pitch) * Ry(roll)`.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};

use crate::earth::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn level(yaw: f64) -> Self {
        Self::new(0.0, 0.0, wrap_angle(yaw))
    }

    /// Body-to-navigation rotation.
    pub fn to_quaternion(self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -self.yaw)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.pitch)
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.roll)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self::from_rotation(&q.to_rotation_matrix())
    }

    pub fn from_rotation(r: &Rotation3<f64>) -> Self {
        let c = r.matrix();
        let pitch = c[(2, 1)].clamp(-1.0, 1.0).asin();
        let roll = (-c[(2, 0)]).atan2(c[(2, 2)]);
        let yaw = c[(0, 1)].atan2(c[(1, 1)]);
        Self::new(roll, pitch, wrap_angle(yaw))
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }
}
