//! CSV and model files. Numbers are written with 17 significant digits so
//! every `f64` reads back bit for bit. Files are replaced atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::attitude::Attitude;
use crate::convnet::Model;
use crate::earth::{lla_to_enu, EarthModel, EnuVector, GeodeticPosition};
use crate::error::{Error, Result};
use crate::experiment::{CorrectedRow, EvalReport};
use crate::imu::{ImuSample, ImuSeries};
use crate::strapdown::{NavSeries, NavState};
use crate::trajectory::{TrajectorySample, TrajectorySeries};

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "t", "lat_rad", "lon_rad", "alt_m", "ve_mps", "vn_mps", "vu_mps", "roll_rad", "pitch_rad",
    "yaw_rad",
];
pub const IMU_HEADER: [&str; 8] = [
    "t", "fx_mps2", "fy_mps2", "fz_mps2", "wx_radps", "wy_radps", "wz_radps", "warmup",
];
/// The attitude quaternion trails the position/velocity columns so a nav
/// file restores the full state.
pub const NAV_HEADER: [&str; 14] = [
    "t", "lat_rad", "lon_rad", "alt_m", "east_m", "north_m", "up_m", "ve_mps", "vn_mps", "vu_mps",
    "qw", "qx", "qy", "qz",
];
pub const CORRECTED_HEADER: [&str; 10] = [
    "t", "east_ref", "north_ref", "up_ref", "east_ins", "north_ins", "up_ins", "east_corr",
    "north_corr", "up_corr",
];
pub const REPORT_HEADER: [&str; 7] = [
    "variant", "rmse_e", "rmse_n", "rmse_u", "rmse_3d_avg", "accuracy_pct", "train_seconds",
];

/// Lossless decimal form of an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn csv_error(path: &Path, message: impl ToString) -> Error {
    Error::Csv {
        path: PathBuf::from(path),
        message: message.to_string(),
    }
}

fn write_csv<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_error(path, e))?;
    write_atomic(path, &bytes)
}

/// Parsed rows of a CSV whose header must equal `header`.
fn read_csv<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let found = r.headers().map_err(|e| csv_error(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(csv_error(
            path,
            format!("expected header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    r.records()
        .map(|rec| rec.map_err(|e| csv_error(path, e)))
        .collect()
}

fn field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let line = rec.position().map_or(0, |p| p.line());
    let s = rec
        .get(i)
        .ok_or_else(|| csv_error(path, format!("line {line}: missing column {i}")))?;
    s.trim()
        .parse()
        .map_err(|_| csv_error(path, format!("line {line}: '{s}' is not a number")))
}

fn fields<const N: usize>(path: &Path, rec: &csv::StringRecord) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (i, o) in out.iter_mut().enumerate() {
        *o = field(path, rec, i)?;
    }
    Ok(out)
}

/// Step size from the first two timestamps.
fn step_of(path: &Path, times: &[f64]) -> Result<f64> {
    match times {
        [t0, t1, ..] if t1 > t0 => Ok(t1 - t0),
        [_, _, ..] => Err(csv_error(path, "timestamps must increase")),
        _ => Err(csv_error(path, "need at least two rows")),
    }
}

pub fn write_trajectory(path: &Path, traj: &TrajectorySeries) -> Result<()> {
    write_csv(
        path,
        TRAJECTORY_HEADER,
        traj.samples.iter().map(|s| {
            [
                s.t,
                s.position.latitude,
                s.position.longitude,
                s.position.altitude,
                s.velocity.east,
                s.velocity.north,
                s.velocity.up,
                s.attitude.roll,
                s.attitude.pitch,
                s.attitude.yaw,
            ]
            .map(fmt_f64)
            .to_vec()
        }),
    )
}

/// The first row is taken as the run origin.
pub fn read_trajectory(path: &Path) -> Result<TrajectorySeries> {
    let samples = read_csv(path, TRAJECTORY_HEADER)?
        .iter()
        .map(|rec| {
            let [t, lat, lon, alt, ve, vn, vu, roll, pitch, yaw] = fields(path, rec)?;
            Ok(TrajectorySample {
                t,
                position: GeodeticPosition::new(lat, lon, alt),
                velocity: EnuVector::new(ve, vn, vu),
                attitude: Attitude::new(roll, pitch, yaw),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    Ok(TrajectorySeries {
        dt: step_of(path, &times)?,
        origin: samples[0].position,
        samples,
    })
}

pub fn write_imu(path: &Path, imu: &ImuSeries) -> Result<()> {
    write_csv(
        path,
        IMU_HEADER,
        imu.samples.iter().map(|s| {
            let f = &s.specific_force_b;
            let w = &s.angular_rate_b;
            let mut row = [s.t, f.x, f.y, f.z, w.x, w.y, w.z].map(fmt_f64).to_vec();
            row.push(u8::from(s.warmup).to_string());
            row
        }),
    )
}

/// The warm-up time is recovered as the first timestamp without the flag.
pub fn read_imu(path: &Path) -> Result<ImuSeries> {
    let samples = read_csv(path, IMU_HEADER)?
        .iter()
        .map(|rec| {
            let [t, fx, fy, fz, wx, wy, wz, flag] = fields(path, rec)?;
            if flag != 0.0 && flag != 1.0 {
                return Err(csv_error(path, format!("warmup flag must be 0 or 1, got {flag}")));
            }
            Ok(ImuSample {
                t,
                specific_force_b: Vector3::new(fx, fy, fz),
                angular_rate_b: Vector3::new(wx, wy, wz),
                warmup: flag == 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let dt = step_of(path, &times)?;
    let warmup_time = if samples[0].warmup {
        samples
            .iter()
            .find(|s| !s.warmup)
            .map_or(times[times.len() - 1] + dt, |s| s.t)
    } else {
        0.0
    };
    Ok(ImuSeries {
        dt,
        warmup_time,
        samples,
    })
}

pub fn write_nav(path: &Path, nav: &NavSeries, earth: &EarthModel) -> Result<()> {
    let enu = nav.enu_positions(earth)?;
    write_csv(
        path,
        NAV_HEADER,
        nav.times.iter().zip(&nav.states).zip(&enu).map(|((t, s), e)| {
            let q = s.attitude.quaternion();
            [
                *t,
                s.position.latitude,
                s.position.longitude,
                s.position.altitude,
                e.east,
                e.north,
                e.up,
                s.velocity.east,
                s.velocity.north,
                s.velocity.up,
                q.w,
                q.i,
                q.j,
                q.k,
            ]
            .map(fmt_f64)
            .to_vec()
        }),
    )
}

/// The ENU columns are derived data and are ignored; `origin` must be the
/// run origin they were computed against.
pub fn read_nav(path: &Path, origin: GeodeticPosition) -> Result<NavSeries> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in read_csv(path, NAV_HEADER)?.iter() {
        let [t, lat, lon, alt, _, _, _, ve, vn, vu, qw, qx, qy, qz] = fields(path, rec)?;
        times.push(t);
        states.push(NavState {
            position: GeodeticPosition::new(lat, lon, alt),
            velocity: EnuVector::new(ve, vn, vu),
            attitude: UnitQuaternion::new_unchecked(Quaternion::new(qw, qx, qy, qz)),
        });
    }
    Ok(NavSeries {
        dt: step_of(path, &times)?,
        origin,
        times,
        states,
    })
}

pub fn write_corrected(path: &Path, rows: &[CorrectedRow]) -> Result<()> {
    write_csv(
        path,
        CORRECTED_HEADER,
        rows.iter().map(|r| {
            [
                r.t,
                r.reference.east,
                r.reference.north,
                r.reference.up,
                r.ins.east,
                r.ins.north,
                r.ins.up,
                r.corrected.east,
                r.corrected.north,
                r.corrected.up,
            ]
            .map(fmt_f64)
            .to_vec()
        }),
    )
}

pub fn read_corrected(path: &Path) -> Result<Vec<CorrectedRow>> {
    read_csv(path, CORRECTED_HEADER)?
        .iter()
        .map(|rec| {
            let [t, er, nr, ur, ei, ni, ui, ec, nc, uc] = fields(path, rec)?;
            Ok(CorrectedRow {
                t,
                reference: EnuVector::new(er, nr, ur),
                ins: EnuVector::new(ei, ni, ui),
                corrected: EnuVector::new(ec, nc, uc),
            })
        })
        .collect()
}

/// One row per variant plus an `uncorrected` baseline row (accuracy 0,
/// no training time).
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let u = &report.uncorrected;
    let baseline = std::iter::once(
        std::iter::once("uncorrected".to_string())
            .chain([u.east, u.north, u.up, u.average(), 0.0, 0.0].map(fmt_f64))
            .collect(),
    );
    let variants = report.variants.iter().map(|v| {
        std::iter::once(v.variant.to_string())
            .chain(
                [
                    v.rmse.east,
                    v.rmse.north,
                    v.rmse.up,
                    v.rmse_3d_avg,
                    v.accuracy_pct,
                    v.train_seconds,
                ]
                .map(fmt_f64),
            )
            .collect()
    });
    write_csv(path, REPORT_HEADER, baseline.chain(variants))
}

pub fn write_loss_history(path: &Path, history: &[f64], train_seconds: f64) -> Result<()> {
    write_csv(
        path,
        ["epoch", "mean_loss", "train_seconds"],
        history
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), fmt_f64(*l), fmt_f64(train_seconds)]),
    )
}

/// Loss history and the recorded training wall time.
pub fn read_loss_history(path: &Path) -> Result<(Vec<f64>, f64)> {
    let rows = read_csv(path, ["epoch", "mean_loss", "train_seconds"])?;
    let mut seconds = 0.0;
    let history = rows
        .iter()
        .map(|rec| {
            seconds = field(path, rec, 2)?;
            field(path, rec, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((history, seconds))
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &model.to_bytes())
}

pub fn read_model(path: &Path) -> Result<Model> {
    Model::from_bytes(&fs::read(path)?)
}

/// ENU positions of a trajectory relative to its origin.
pub fn trajectory_enu(traj: &TrajectorySeries, earth: &EarthModel) -> Result<Vec<EnuVector>> {
    traj.samples
        .iter()
        .map(|s| lla_to_enu(&s.position, &traj.origin, earth))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{ExperimentConfig, simulate};
    use crate::imu::{corrupt, derive_ideal, TriadErrorModel};
    use crate::strapdown::run;

    fn dir() -> PathBuf {
        let d = std::env::temp_dir().join(format!("insdepth-io-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn short_run() -> (TrajectorySeries, ImuSeries, NavSeries) {
        let e = EarthModel::wgs84();
        let cfg = ExperimentConfig {
            duration: Some(20.0),
            ..ExperimentConfig::default()
        };
        let traj = simulate(&cfg, &e).unwrap();
        let ideal = derive_ideal(&traj, &e).unwrap();
        let imu = corrupt(&ideal, &TriadErrorModel::mems_gyro(), &TriadErrorModel::mems_accel(), 3).unwrap();
        let nav = run(&imu, NavState::from_reference(&traj.samples[0]), traj.origin, &e).unwrap();
        (traj, imu, nav)
    }

    #[test]
    fn round_trips_are_bitwise() {
        let d = dir();
        let e = EarthModel::wgs84();
        let (traj, imu, nav) = short_run();

        let p = d.join("trajectory.csv");
        write_trajectory(&p, &traj).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), traj);

        let p = d.join("imu.csv");
        write_imu(&p, &imu).unwrap();
        let back = read_imu(&p).unwrap();
        assert_eq!(back.samples, imu.samples);
        assert_eq!(back.dt, imu.dt);
        assert_eq!(back.warmup_time, 5.0);

        let p = d.join("nav.csv");
        write_nav(&p, &nav, &e).unwrap();
        assert_eq!(read_nav(&p, traj.origin).unwrap(), nav);
    }

    #[test]
    fn numbers_keep_every_bit() {
        for x in [0.1, -0.0, 1e-300, f64::MAX, std::f64::consts::PI, 5e-324, 123456.789] {
            let y: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(y.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn wrong_header_and_bad_numbers_rejected() {
        let d = dir();
        let p = d.join("bad.csv");
        fs::write(&p, "t,x\n0,1\n").unwrap();
        assert!(matches!(read_imu(&p), Err(Error::Csv { .. })));
        fs::write(
            &p,
            format!("{}\n0,1,2,3,4,5,6,0\n0.01,1,2,x,4,5,6,0\n", IMU_HEADER.join(",")),
        )
        .unwrap();
        let err = read_imu(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let d = dir();
        let p = d.join("atomic.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let leftovers = fs::read_dir(&d)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }
}
