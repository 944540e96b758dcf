//! Ground-truth trajectory generation from a script of motion segments.
//!
//! Each segment holds horizontal speed, yaw rate and vertical rate constant.
//! Steps between segments are smoothed by a raised-cosine transition of width
//! [`TRANSITION_SECONDS`] centred on the boundary, so acceleration stays
//! continuous while the integrated heading and climb match the unsmoothed
//! script exactly. Before the first and after the last segment the channels
//! hold their end values. Attitude is level (roll = pitch = 0); yaw follows
//! the heading.

use nalgebra::Vector3;

use crate::attitude::Attitude;
use crate::earth::{position_increment, EarthModel, EnuVector, GeodeticPosition, PositionAccumulator};
use crate::error::{Error, Result};

/// Width of the smoothing window applied at segment boundaries, seconds.
pub const TRANSITION_SECONDS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Straight,
    /// Coordinated level turn; `rate` is the yaw rate in rad/s (positive turns right).
    Turn { rate: f64 },
    /// Constant vertical rate in m/s on top of the horizontal speed.
    Climb { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    pub duration: f64,
    /// Horizontal speed, m/s.
    pub speed: f64,
}

impl SegmentSpec {
    pub fn straight(duration: f64, speed: f64) -> Self {
        Self {
            kind: SegmentKind::Straight,
            duration,
            speed,
        }
    }

    pub fn turn(duration: f64, speed: f64, rate: f64) -> Self {
        Self {
            kind: SegmentKind::Turn { rate },
            duration,
            speed,
        }
    }

    pub fn climb(duration: f64, speed: f64, rate: f64) -> Self {
        Self {
            kind: SegmentKind::Climb { rate },
            duration,
            speed,
        }
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidSegment {
                index,
                reason: reason.to_string(),
            })
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.speed.is_finite() && self.speed >= 0.0) {
            return bad("speed must be nonnegative");
        }
        match self.kind {
            SegmentKind::Turn { rate } if !(rate.is_finite() && rate != 0.0) => {
                bad("turn rate must be finite and nonzero")
            }
            SegmentKind::Climb { rate } if !rate.is_finite() => bad("climb rate must be finite"),
            _ => Ok(()),
        }
    }

    fn yaw_rate(&self) -> f64 {
        match self.kind {
            SegmentKind::Turn { rate } => rate,
            _ => 0.0,
        }
    }

    fn climb_rate(&self) -> f64 {
        match self.kind {
            SegmentKind::Climb { rate } => rate,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: GeodeticPosition,
    pub velocity: EnuVector,
    pub attitude: Attitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    pub dt: f64,
    pub origin: GeodeticPosition,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectorySeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Raised-cosine smoothed unit step centred at zero.
fn smooth_step(u: f64, width: f64) -> f64 {
    let h = 0.5 * width;
    if u <= -h {
        0.0
    } else if u >= h {
        1.0
    } else {
        0.5 + u / width + (std::f64::consts::TAU * u / width).sin() / std::f64::consts::TAU
    }
}

/// Integral of [`smooth_step`] from minus infinity to `u`.
fn smooth_ramp(u: f64, width: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let h = 0.5 * width;
    if u <= -h {
        0.0
    } else if u >= h {
        u
    } else {
        let four_pi2 = 4.0 * PI * PI;
        u / 2.0 + u * u / (2.0 * width) - width * (TAU * u / width).cos() / four_pi2 + width / 8.0
            - width / four_pi2
    }
}

/// A piecewise-constant channel with smoothed steps.
struct Channel {
    initial: f64,
    /// (boundary time, jump)
    steps: Vec<(f64, f64)>,
}

impl Channel {
    fn new(segments: &[SegmentSpec], value: impl Fn(&SegmentSpec) -> f64) -> Self {
        let initial = segments.first().map_or(0.0, &value);
        let mut steps = Vec::new();
        let mut start = 0.0;
        for pair in segments.windows(2) {
            start += pair[0].duration;
            let jump = value(&pair[1]) - value(&pair[0]);
            if jump != 0.0 {
                steps.push((start, jump));
            }
        }
        Self { initial, steps }
    }

    fn value(&self, t: f64) -> f64 {
        self.initial
            + self
                .steps
                .iter()
                .map(|&(tb, jump)| jump * smooth_step(t - tb, TRANSITION_SECONDS))
                .sum::<f64>()
    }

    /// Integral of the channel over [0, t].
    fn integral(&self, t: f64) -> f64 {
        self.initial * t
            + self
                .steps
                .iter()
                .map(|&(tb, jump)| {
                    jump * (smooth_ramp(t - tb, TRANSITION_SECONDS)
                        - smooth_ramp(-tb, TRANSITION_SECONDS))
                })
                .sum::<f64>()
    }
}

/// Generates a kinematically consistent trajectory sampled every `dt` seconds.
pub fn generate(
    origin: GeodeticPosition,
    initial_yaw: f64,
    segments: &[SegmentSpec],
    dt: f64,
    earth: &EarthModel,
) -> Result<TrajectorySeries> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    for (i, s) in segments.iter().enumerate() {
        s.validate(i)?;
    }
    let origin = origin.normalized()?;
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    let steps = (total / dt + 1e-9).floor() as usize;

    let yaw_rate = Channel::new(segments, SegmentSpec::yaw_rate);
    let speed = Channel::new(segments, |s| s.speed);
    let climb = Channel::new(segments, SegmentSpec::climb_rate);

    let kinematics = |t: f64| {
        let yaw = initial_yaw + yaw_rate.integral(t);
        let s = speed.value(t);
        let v = Vector3::new(s * yaw.sin(), s * yaw.cos(), climb.value(t));
        (yaw, v)
    };

    let mut samples = Vec::with_capacity(steps + 1);
    let (yaw0, v0) = kinematics(0.0);
    samples.push(TrajectorySample {
        t: 0.0,
        position: origin,
        velocity: EnuVector::from_vector(&v0),
        attitude: Attitude::level(yaw0),
    });
    let mut acc = PositionAccumulator::new(origin);
    let mut v_prev = v0;
    for k in 1..=steps {
        let t = k as f64 * dt;
        let (yaw, v) = kinematics(t);
        let pos = acc.add(&position_increment(&acc.position(), &v_prev, &v, dt, earth)?)?;
        samples.push(TrajectorySample {
            t,
            position: pos,
            velocity: EnuVector::from_vector(&v),
            attitude: Attitude::level(yaw),
        });
        v_prev = v;
    }
    Ok(TrajectorySeries {
        dt,
        origin,
        samples,
    })
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn decimate(series: &TrajectorySeries, factor: usize) -> Result<TrajectorySeries> {
    if factor == 0 {
        return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
    }
    Ok(TrajectorySeries {
        dt: series.dt * factor as f64,
        origin: series.origin,
        samples: series.samples.iter().step_by(factor).copied().collect(),
    })
}

/// The stock 3000 s scenario: straights, +/-3 deg/s turns and two climbs at 15 m/s.
pub fn default_segments() -> Vec<SegmentSpec> {
    let v = 15.0;
    let turn = 3f64.to_radians();
    vec![
        SegmentSpec::straight(295.0, v),
        SegmentSpec::turn(30.0, v, turn),
        SegmentSpec::straight(400.0, v),
        SegmentSpec::turn(60.0, v, -turn),
        SegmentSpec::straight(300.0, v),
        SegmentSpec::climb(100.0, v, 2.0),
        SegmentSpec::straight(200.0, v),
        SegmentSpec::turn(30.0, v, turn),
        SegmentSpec::straight(400.0, v),
        SegmentSpec::turn(60.0, v, turn),
        SegmentSpec::straight(300.0, v),
        SegmentSpec::climb(100.0, v, -1.5),
        SegmentSpec::straight(300.0, v),
        SegmentSpec::turn(30.0, v, -turn),
        SegmentSpec::straight(395.0, v),
    ]
}

/// Default origin of the stock scenario.
pub fn default_origin() -> GeodeticPosition {
    GeodeticPosition::from_degrees(30.4, -9.6, 50.0)
}
