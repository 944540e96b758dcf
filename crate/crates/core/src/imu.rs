//! Ideal IMU synthesis from a reference trajectory and MEMS error injection.
//!
//! The ideal specific force and angular rate invert the navigation equations
//! along the reference path. Corruption applies, per axis and per sample,
//! `measured = (1 + SF) * true + b + eta` with white Gaussian `eta`.
//!
//! Noise is drawn from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), whose
//! stream is fixed and platform independent. For every sample the draws are
//! taken in the order gyro x, y, z then accelerometer x, y, z.

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::earth::{earth_rate_enu, gravity_enu, transport_rate_enu, EarthModel};
use crate::error::{Error, Result};
use crate::trajectory::TrajectorySeries;

/// Standard gravity used to convert micro-g figures.
pub const STANDARD_GRAVITY: f64 = 9.806_65;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Accelerometer output (specific force), body frame, m/s^2.
    pub specific_force_b: Vector3<f64>,
    /// Gyroscope output, body frame, rad/s.
    pub angular_rate_b: Vector3<f64>,
    pub warmup: bool,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.specific_force_b.iter().all(|x| x.is_finite())
            && self.angular_rate_b.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSeries {
    pub dt: f64,
    pub warmup_time: f64,
    pub samples: Vec<ImuSample>,
}

impl ImuSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Error parameters of one sensor triad, in SI units (rad/s or m/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriadErrorModel {
    pub bias: Vector3<f64>,
    pub scale_factor: Vector3<f64>,
    /// White-noise density, units/sqrt(Hz).
    pub noise_density: f64,
    pub sample_rate: f64,
    /// The bias ramps from zero to its full value over this interval, seconds.
    pub warmup: f64,
}

impl TriadErrorModel {
    pub fn ideal(sample_rate: f64) -> Self {
        Self {
            bias: Vector3::zeros(),
            scale_factor: Vector3::zeros(),
            noise_density: 0.0,
            sample_rate,
            warmup: 0.0,
        }
    }

    /// Simulated MEMS gyro triad: 5 % scale factor, 100 deg/h bias,
    /// 0.1 deg/s/sqrt(Hz) noise, 100 Hz, 5 s warm-up.
    pub fn mems_gyro() -> Self {
        Self {
            bias: Vector3::repeat(deg_per_hour(100.0)),
            scale_factor: Vector3::repeat(0.05),
            noise_density: 0.1f64.to_radians(),
            sample_rate: 100.0,
            warmup: 5.0,
        }
    }

    /// Simulated MEMS accelerometer triad: 1 % scale factor, 1000 ug bias,
    /// 500 ug/sqrt(Hz) noise, 100 Hz, 5 s warm-up.
    pub fn mems_accel() -> Self {
        Self {
            bias: Vector3::repeat(micro_g(1000.0)),
            scale_factor: Vector3::repeat(0.01),
            noise_density: micro_g(500.0),
            sample_rate: 100.0,
            warmup: 5.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("{name}: {m}")));
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be positive, got {}", self.sample_rate));
        }
        if !(self.noise_density.is_finite() && self.noise_density >= 0.0) {
            return bad(format!("noise_density must be >= 0, got {}", self.noise_density));
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return bad(format!("warmup must be >= 0, got {}", self.warmup));
        }
        if self.scale_factor.iter().any(|s| !(s.is_finite() && *s > -1.0)) {
            return bad("scale_factor components must exceed -1".into());
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return bad("bias must be finite".into());
        }
        Ok(())
    }

    /// Bias at time `t`, including the warm-up ramp.
    pub fn bias_at(&self, t: f64) -> Vector3<f64> {
        if self.warmup > 0.0 && t < self.warmup {
            self.bias * (t / self.warmup)
        } else {
            self.bias
        }
    }

    fn apply(&self, truth: &Vector3<f64>, t: f64, noise: &Vector3<f64>) -> Vector3<f64> {
        let sigma = noise_sigma(self.noise_density, self.sample_rate);
        truth + truth.component_mul(&self.scale_factor) + self.bias_at(t) + noise * sigma
    }
}

pub fn deg_per_hour(x: f64) -> f64 {
    x.to_radians() / 3600.0
}

pub fn micro_g(x: f64) -> f64 {
    x * 1e-6 * STANDARD_GRAVITY
}

/// Per-sample white-noise standard deviation for a density sampled at `sample_rate`.
pub fn noise_sigma(density: f64, sample_rate: f64) -> f64 {
    density * sample_rate.sqrt()
}

/// Body-frame angular rate relative to the navigation frame that carries
/// attitude `from` to `to` over `interval` seconds.
fn relative_rate(
    from: &UnitQuaternion<f64>,
    to: &UnitQuaternion<f64>,
    interval: f64,
) -> Vector3<f64> {
    rotation_log(&(from.inverse() * to)) / interval
}

/// Rotation vector of a unit quaternion, accurate for small angles.
pub fn rotation_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    let v = q.imag();
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    v * (2.0 * s.atan2(q.w) / s)
}

/// Ideal sensor outputs along the reference trajectory.
pub fn derive_ideal(traj: &TrajectorySeries, earth: &EarthModel) -> Result<ImuSeries> {
    let n = traj.samples.len();
    if n < 3 {
        return Err(Error::SeriesTooShort { needed: 3, got: n });
    }
    let dt = traj.dt;
    let att: Vec<UnitQuaternion<f64>> = traj
        .samples
        .iter()
        .map(|s| s.attitude.to_quaternion())
        .collect();
    let vel: Vec<Vector3<f64>> = traj.samples.iter().map(|s| s.velocity.to_vector()).collect();

    let mut samples = Vec::with_capacity(n);
    for (k, smp) in traj.samples.iter().enumerate() {
        let (lo, hi) = match k {
            0 => (0, 1),
            k if k == n - 1 => (k - 1, k),
            k => (k - 1, k + 1),
        };
        let span = (hi - lo) as f64 * dt;
        let v_dot = (vel[hi] - vel[lo]) / span;
        let w_nb_b = relative_rate(&att[lo], &att[hi], span);

        let pos = &smp.position;
        let v = &vel[k];
        let w_ie = earth_rate_enu(pos.latitude, earth);
        let w_en = transport_rate_enu(pos, v, earth)?;
        let g = gravity_enu(pos, earth)?;
        let c_nb = att[k].inverse();

        let f_n = v_dot + (2.0 * w_ie + w_en).cross(v) - g;
        samples.push(ImuSample {
            t: smp.t,
            specific_force_b: c_nb * f_n,
            angular_rate_b: c_nb * (w_ie + w_en) + w_nb_b,
            warmup: false,
        });
    }
    Ok(ImuSeries {
        dt,
        warmup_time: 0.0,
        samples,
    })
}

/// Applies scale factor, bias and white noise to both triads.
pub fn corrupt(
    series: &ImuSeries,
    gyro: &TriadErrorModel,
    accel: &TriadErrorModel,
    seed: u64,
) -> Result<ImuSeries> {
    gyro.validate("gyro")?;
    accel.validate("accel")?;
    let series_hz = 1.0 / series.dt;
    for model in [gyro, accel] {
        if ((model.sample_rate - series_hz) / series_hz).abs() > 1e-9 {
            return Err(Error::RateMismatch {
                model_hz: model.sample_rate,
                series_hz,
            });
        }
    }
    let warmup_time = gyro.warmup.max(accel.warmup);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vector3<f64> {
        Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        )
    };
    let samples = series
        .samples
        .iter()
        .map(|s| {
            let eta_g = draw();
            let eta_a = draw();
            ImuSample {
                t: s.t,
                angular_rate_b: gyro.apply(&s.angular_rate_b, s.t, &eta_g),
                specific_force_b: accel.apply(&s.specific_force_b, s.t, &eta_a),
                warmup: s.t < warmup_time,
            }
        })
        .collect();
    Ok(ImuSeries {
        dt: series.dt,
        warmup_time,
        samples,
    })
}
