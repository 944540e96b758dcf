//! Forward strapdown mechanization in the ENU frame.
//!
//! One step integrates the interval between two consecutive IMU samples:
//!
//! * attitude: quaternion exponential of the body rate relative to the
//!   navigation frame, `w_nb = w_ib - C_n^b (w_ie + w_en)`, with the gyro
//!   averaged over the interval and the frame-rate term averaged between the
//!   start attitude and a predicted end attitude;
//! * velocity: trapezoidal average of the rotated specific force, Coriolis and
//!   gravity evaluated at a predicted midpoint;
//! * position: trapezoidal velocity through the position-rate matrix.
//!
//! No coning or sculling corrections are applied.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::attitude::Attitude;
use crate::earth::{
    advance_position, earth_rate_enu, gravity_enu, lla_to_enu, position_increment,
    transport_rate_enu, EarthModel, EnuVector, GeodeticPosition, PositionAccumulator,
};
use crate::error::{Error, Result};
use crate::imu::{ImuSample, ImuSeries};
use crate::trajectory::TrajectorySample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub position: GeodeticPosition,
    pub velocity: EnuVector,
    /// Body-to-navigation rotation.
    pub attitude: UnitQuaternion<f64>,
}

impl NavState {
    pub fn from_reference(sample: &TrajectorySample) -> Self {
        Self {
            position: sample.position,
            velocity: sample.velocity,
            attitude: sample.attitude.to_quaternion(),
        }
    }

    pub fn c_bn(&self) -> Matrix3<f64> {
        *self.attitude.to_rotation_matrix().matrix()
    }

    pub fn euler(&self) -> Attitude {
        Attitude::from_quaternion(&self.attitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavSeries {
    pub dt: f64,
    pub origin: GeodeticPosition,
    pub times: Vec<f64>,
    pub states: Vec<NavState>,
}

impl NavSeries {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Local-tangent ENU position of every state relative to the run origin.
    pub fn enu_positions(&self, earth: &EarthModel) -> Result<Vec<EnuVector>> {
        self.states
            .iter()
            .enumerate()
            .map(|(index, s)| {
                lla_to_enu(&s.position, &self.origin, earth).map_err(|e| Error::StepFailed {
                    index,
                    cause: Box::new(e),
                })
            })
            .collect()
    }

    /// Keeps every `factor`-th state starting at index 0.
    pub fn decimate(&self, factor: usize) -> Result<NavSeries> {
        if factor == 0 {
            return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
        }
        Ok(NavSeries {
            dt: self.dt * factor as f64,
            origin: self.origin,
            times: self.times.iter().step_by(factor).copied().collect(),
            states: self.states.iter().step_by(factor).copied().collect(),
        })
    }
}

/// Attitude held as `base * (1 + delta)` with `delta` small.
///
/// Per-step rotations in steady flight are below one ulp of the quaternion
/// components and would be rounded away by a direct product.
#[derive(Debug, Clone, Copy)]
struct AttitudeAccumulator {
    base: UnitQuaternion<f64>,
    delta: Quaternion<f64>,
}

impl AttitudeAccumulator {
    const FOLD_NORM: f64 = 1e-3;

    fn new(base: UnitQuaternion<f64>) -> Self {
        Self {
            base,
            delta: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    fn rotate(&mut self, rotation: &Vector3<f64>) -> UnitQuaternion<f64> {
        let angle = rotation.norm();
        let half = 0.5 * angle;
        let inc = if angle == 0.0 {
            Quaternion::new(0.0, 0.0, 0.0, 0.0)
        } else {
            let s = (0.5 * half).sin();
            let v = rotation * (half.sin() / angle);
            Quaternion::new(-2.0 * s * s, v.x, v.y, v.z)
        };
        self.delta = self.delta + inc + self.delta * inc;
        let full = UnitQuaternion::new_normalize(self.base.into_inner() + self.base.into_inner() * self.delta);
        if self.delta.norm() > Self::FOLD_NORM {
            *self = Self::new(full);
        }
        full
    }
}

fn frame_rate(pos: &GeodeticPosition, v: &Vector3<f64>, earth: &EarthModel) -> Result<Vector3<f64>> {
    Ok(earth_rate_enu(pos.latitude, earth) + transport_rate_enu(pos, v, earth)?)
}

/// Integrates the interval from `prev` to `imu`.
pub fn step(
    state: &NavState,
    prev: &ImuSample,
    imu: &ImuSample,
    dt: f64,
    earth: &EarthModel,
) -> Result<NavState> {
    let mut acc = Accumulators::new(state);
    step_accumulated(state, &mut acc, prev, imu, dt, earth)
}

struct Accumulators {
    position: PositionAccumulator,
    attitude: AttitudeAccumulator,
}

impl Accumulators {
    fn new(state: &NavState) -> Self {
        Self {
            position: PositionAccumulator::new(state.position),
            attitude: AttitudeAccumulator::new(state.attitude),
        }
    }
}

// `acc` must agree with `state`; it is advanced in place.
fn step_accumulated(
    state: &NavState,
    acc: &mut Accumulators,
    prev: &ImuSample,
    imu: &ImuSample,
    dt: f64,
    earth: &EarthModel,
) -> Result<NavState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !prev.is_finite() || !imu.is_finite() {
        return Err(Error::NonFinite(format!("IMU sample at t = {}", imu.t)));
    }
    let pos = state.position;
    let v = state.velocity.to_vector();
    let q = state.attitude;

    // predictor over the whole interval with the start attitude rates
    let w_ib = 0.5 * (prev.angular_rate_b + imu.angular_rate_b);
    let w_in_start = frame_rate(&pos, &v, earth)?;
    let q_pred = q * UnitQuaternion::from_scaled_axis((w_ib - q.inverse() * w_in_start) * dt);
    let accel = |f_n: &Vector3<f64>, p: &GeodeticPosition, v: &Vector3<f64>| -> Result<Vector3<f64>> {
        let w_ie = earth_rate_enu(p.latitude, earth);
        let w_en = transport_rate_enu(p, v, earth)?;
        Ok(f_n - (2.0 * w_ie + w_en).cross(v) + gravity_enu(p, earth)?)
    };
    let f_pred = 0.5 * (q * prev.specific_force_b + q_pred * imu.specific_force_b);
    let v_pred = v + accel(&f_pred, &pos, &v)? * dt;
    let p_pred = advance_position(&pos, &v, &v_pred, dt, earth)?;
    let w_in_end = frame_rate(&p_pred, &v_pred, earth)?;

    // attitude
    let w_nb = w_ib - 0.5 * (q.inverse() * w_in_start + q_pred.inverse() * w_in_end);
    let q_next = acc.attitude.rotate(&(w_nb * dt));

    // velocity
    let f_n = 0.5 * (q * prev.specific_force_b + q_next * imu.specific_force_b);
    let v_guess = v + accel(&f_n, &pos, &v)? * dt;
    let v_mid = 0.5 * (v + v_guess);
    let pos_mid = advance_position(&pos, &v, &v_guess, 0.5 * dt, earth)?;
    let v_next = v + accel(&f_n, &pos_mid, &v_mid)? * dt;

    if !v_next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("velocity".into()));
    }
    // position
    let p_next = acc.position.add(&position_increment(&pos, &v, &v_next, dt, earth)?)?;
    Ok(NavState {
        position: p_next,
        velocity: EnuVector::from_vector(&v_next),
        attitude: q_next,
    })
}

/// Dead-reckons the whole IMU series from `init`, emitting one state per sample.
pub fn run(
    imu: &ImuSeries,
    init: NavState,
    origin: GeodeticPosition,
    earth: &EarthModel,
) -> Result<NavSeries> {
    let first = imu
        .samples
        .first()
        .ok_or(Error::SeriesTooShort { needed: 1, got: 0 })?;
    let mut times = Vec::with_capacity(imu.len());
    let mut states = Vec::with_capacity(imu.len());
    times.push(first.t);
    states.push(init);
    let mut state = init;
    let mut acc = Accumulators::new(&init);
    for (i, pair) in imu.samples.windows(2).enumerate() {
        state = step_accumulated(&state, &mut acc, &pair[0], &pair[1], imu.dt, earth).map_err(|e| Error::StepFailed {
            index: i + 1,
            cause: Box::new(e),
        })?;
        times.push(pair[1].t);
        states.push(state);
    }
    Ok(NavSeries {
        dt: imu.dt,
        origin,
        times,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::earth::normal_gravity;

    fn earth() -> EarthModel {
        EarthModel::wgs84()
    }

    fn level_state(lat: f64) -> NavState {
        NavState {
            position: GeodeticPosition::new(lat, 0.2, 0.0),
            velocity: EnuVector::ZERO,
            attitude: UnitQuaternion::identity(),
        }
    }

    fn stationary_sample(lat: f64, t: f64) -> ImuSample {
        let e = earth();
        ImuSample {
            t,
            specific_force_b: Vector3::new(0.0, 0.0, normal_gravity(lat, 0.0, &e).unwrap()),
            angular_rate_b: earth_rate_enu(lat, &e),
            warmup: false,
        }
    }

    #[test]
    fn stationary_fixed_point() {
        let lat = 0.7;
        let s0 = level_state(lat);
        let imu = stationary_sample(lat, 0.0);
        let s1 = step(&s0, &imu, &imu, 0.01, &earth()).unwrap();
        let e = earth();
        let d = lla_to_enu(&s1.position, &s0.position, &e).unwrap();
        assert!(d.norm() < 1e-9);
        assert!(s1.velocity.norm() < 1e-9);
        assert!(s1.attitude.angle_to(&s0.attitude) < 1e-12);
    }

    #[test]
    fn zero_dt_rejected() {
        let s0 = level_state(0.3);
        let imu = stationary_sample(0.3, 0.0);
        assert!(step(&s0, &imu, &imu, 0.0, &earth()).is_err());
        let mut bad = imu;
        bad.angular_rate_b.x = f64::NAN;
        assert!(matches!(
            step(&s0, &imu, &bad, 0.01, &earth()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn vertical_thrust() {
        let lat = 0.3;
        let s0 = level_state(lat);
        let mut imu = stationary_sample(lat, 0.0);
        imu.specific_force_b.z += 1.0;
        let dt = 0.01;
        let s1 = step(&s0, &imu, &imu, dt, &earth()).unwrap();
        assert!((s1.velocity.up - dt).abs() < 1e-6);
    }

    #[test]
    fn single_sample_run() {
        let imu = ImuSeries {
            dt: 0.01,
            warmup_time: 0.0,
            samples: vec![stationary_sample(0.1, 0.0)],
        };
        let init = level_state(0.1);
        let nav = run(&imu, init, init.position, &earth()).unwrap();
        assert_eq!(nav.states, vec![init]);
    }

    #[test]
    fn failure_reports_index() {
        let mut samples: Vec<_> = (0..5).map(|k| stationary_sample(0.1, k as f64 * 0.01)).collect();
        samples[3].specific_force_b.x = f64::INFINITY;
        let imu = ImuSeries {
            dt: 0.01,
            warmup_time: 0.0,
            samples,
        };
        let init = level_state(0.1);
        match run(&imu, init, init.position, &earth()) {
            Err(Error::StepFailed { index, .. }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attitude_accumulator_keeps_tiny_rotations() {
        let base = UnitQuaternion::from_euler_angles(0.1, -0.2, 1.3);
        let mut acc = AttitudeAccumulator::new(base);
        let step = Vector3::new(1e-17, -2e-17, 3e-17);
        let mut last = base;
        for _ in 0..1_000_000 {
            last = acc.rotate(&step);
        }
        let expected = base * UnitQuaternion::from_scaled_axis(step * 1e6);
        assert!(last.angle_to(&expected) < 1e-15);
        assert!(expected.angle_to(&base) > 3e-11);
    }

    #[test]
    fn attitude_accumulator_matches_direct_product_for_large_steps() {
        let mut acc = AttitudeAccumulator::new(UnitQuaternion::identity());
        let mut direct = UnitQuaternion::identity();
        let step = Vector3::new(0.01, 0.02, -0.005);
        for _ in 0..500 {
            acc.rotate(&step);
            direct *= UnitQuaternion::from_scaled_axis(step);
        }
        let last = acc.rotate(&Vector3::zeros());
        assert!(last.angle_to(&direct) < 1e-12);
    }

    #[test]
    fn stationary_drift_is_small() {
        let lat = 0.5;
        let samples: Vec<_> = (0..60_001)
            .map(|k| stationary_sample(lat, k as f64 * 0.01))
            .collect();
        let imu = ImuSeries {
            dt: 0.01,
            warmup_time: 0.0,
            samples,
        };
        let init = level_state(lat);
        let nav = run(&imu, init, init.position, &earth()).unwrap();
        let e = earth();
        for s in nav.states.iter().step_by(100) {
            let d = lla_to_enu(&s.position, &init.position, &e).unwrap();
            assert!(d.east.hypot(d.north) < 0.5);
            let c = s.c_bn();
            assert!((c.determinant() - 1.0).abs() < 1e-9);
            assert!((c.transpose() * c - Matrix3::identity()).amax() < 1e-9);
        }
    }
}
