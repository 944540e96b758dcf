//! Scenario files: sectioned TOML with a `schema_version` key.
//!
//! Every key is optional; missing keys take the stock scenario, the
//! simulated MEMS error table and the default training setup. Units are
//! degrees for angles, deg/h and deg/s/sqrt(Hz) for the gyro, micro-g and
//! micro-g/sqrt(Hz) for the accelerometer.

use std::fmt;
use std::path::{Path, PathBuf};

use insdepth_core::convnet::{build_variant, Optimizer, TrainConfig};
use insdepth_core::earth::GeodeticPosition;
use insdepth_core::experiment::ExperimentConfig;
use insdepth_core::imu::{deg_per_hour, micro_g, TriadErrorModel};
use insdepth_core::trajectory::SegmentSpec;
use nalgebra::Vector3;
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Load or validation failure. `key` is the dotted path of the offending
/// entry, empty for syntax errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(key: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    #[serde(default)]
    trajectory: RawTrajectory,
    #[serde(default)]
    errors: RawErrors,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    experiment: RawExperiment,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    origin: Option<RawOrigin>,
    initial_yaw_deg: Option<f64>,
    dt: Option<f64>,
    duration: Option<f64>,
    segments: Option<Vec<RawSegment>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOrigin {
    lat_deg: f64,
    lon_deg: f64,
    alt_m: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    kind: String,
    duration: f64,
    speed: f64,
    /// deg/s for turns, m/s for climbs.
    rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawErrors {
    #[serde(default)]
    gyro: RawTriad,
    #[serde(default)]
    accel: RawTriad,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum PerAxis {
    Same(f64),
    Axes([f64; 3]),
}

impl PerAxis {
    fn vector(self) -> Vector3<f64> {
        match self {
            PerAxis::Same(x) => Vector3::repeat(x),
            PerAxis::Axes(a) => Vector3::from(a),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTriad {
    bias: Option<PerAxis>,
    scale_factor: Option<PerAxis>,
    noise_density: Option<f64>,
    sample_rate: Option<f64>,
    warmup: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    variants: Option<Vec<String>>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    window: Option<usize>,
    seed: Option<u64>,
    optimizer: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    train_fraction: Option<f64>,
    output_dir: Option<PathBuf>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioConfig {
    pub experiment: ExperimentConfig,
    pub output_dir: Option<PathBuf>,
}

/// Reads a scenario file. The name `default` selects the built-in scenario.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    if path.as_os_str() == "default" {
        return Ok(ScenarioConfig::default());
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| invalid("", e.to_string().trim_end()))?;
    build(raw)
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

fn build(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    match raw.schema_version {
        None | Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
            ))
        }
    }
    let mut cfg = ExperimentConfig::default();

    let t = raw.trajectory;
    if let Some(o) = t.origin {
        if !(o.lat_deg.abs() < 90.0) {
            return Err(invalid("trajectory.origin.lat_deg", "must lie strictly between -90 and 90"));
        }
        if !o.lon_deg.is_finite() || !o.alt_m.is_finite() {
            return Err(invalid("trajectory.origin", "lon_deg and alt_m must be finite"));
        }
        cfg.origin = GeodeticPosition::from_degrees(o.lat_deg, o.lon_deg, o.alt_m);
    }
    if let Some(y) = t.initial_yaw_deg {
        if !y.is_finite() {
            return Err(invalid("trajectory.initial_yaw_deg", "must be finite"));
        }
        cfg.initial_yaw = y.to_radians();
    }
    if let Some(dt) = t.dt {
        cfg.dt = positive("trajectory.dt", dt)?;
        cfg.decimation().map_err(|e| invalid("trajectory.dt", e))?;
    }
    if let Some(segs) = t.segments {
        if segs.is_empty() {
            return Err(invalid("trajectory.segments", "must not be empty"));
        }
        cfg.segments = segs
            .iter()
            .enumerate()
            .map(|(i, s)| segment(i, s))
            .collect::<Result<_, _>>()?;
    }
    if let Some(d) = t.duration {
        positive("trajectory.duration", d)?;
        let total: f64 = cfg.segments.iter().map(|s| s.duration).sum();
        if d > total + 1e-9 {
            return Err(invalid(
                "trajectory.duration",
                format!("{d} s exceeds the segment script ({total} s)"),
            ));
        }
        cfg.duration = Some(d);
    }

    cfg.gyro = triad("errors.gyro", &raw.errors.gyro, cfg.gyro, deg_per_hour, |d| d.to_radians())?;
    cfg.accel = triad("errors.accel", &raw.errors.accel, cfg.accel, micro_g, micro_g)?;
    let hz = 1.0 / cfg.dt;
    for (key, m) in [("errors.gyro.sample_rate", &cfg.gyro), ("errors.accel.sample_rate", &cfg.accel)] {
        if ((m.sample_rate - hz) / hz).abs() > 1e-9 {
            return Err(invalid(
                key,
                format!("{} Hz does not match trajectory.dt ({hz} Hz)", m.sample_rate),
            ));
        }
    }

    let tr = raw.train;
    if let Some(names) = tr.variants {
        if names.is_empty() {
            return Err(invalid("train.variants", "must not be empty"));
        }
        cfg.variants = names
            .iter()
            .map(|n| n.parse().map_err(|e| invalid("train.variants", e)))
            .collect::<Result<_, _>>()?;
    }
    let mut train = TrainConfig::default();
    if let Some(e) = tr.epochs {
        train.epochs = e;
    }
    if let Some(b) = tr.batch {
        if b == 0 {
            return Err(invalid("train.batch", "must be >= 1"));
        }
        train.batch_size = b;
    }
    if let Some(lr) = tr.lr {
        train.learning_rate = positive("train.lr", lr)?;
    }
    if let Some(o) = tr.optimizer {
        train.optimizer = match o.as_str() {
            "adam" => Optimizer::ADAM,
            "sgd" => Optimizer::Sgd,
            _ => return Err(invalid("train.optimizer", format!("unknown optimizer '{o}' (adam, sgd)"))),
        };
    }
    train.validate().map_err(|e| invalid("train", e))?;
    cfg.train = train;
    if let Some(s) = tr.seed {
        cfg.seed = s;
    }
    if let Some(w) = tr.window {
        cfg.window = w;
    }
    for v in &cfg.variants {
        build_variant(*v, cfg.window).map_err(|e| invalid("train.window", e))?;
    }

    let ex = raw.experiment;
    if let Some(f) = ex.train_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("experiment.train_fraction", format!("must lie in (0, 1), got {f}")));
        }
        cfg.train_fraction = f;
    }
    cfg.validate().map_err(|e| invalid("", e))?;
    Ok(ScenarioConfig {
        experiment: cfg,
        output_dir: ex.output_dir,
    })
}

fn segment(i: usize, s: &RawSegment) -> Result<SegmentSpec, ConfigError> {
    let key = format!("trajectory.segments[{i}]");
    let rate = |unit: &str| {
        s.rate
            .ok_or_else(|| invalid(format!("{key}.rate"), format!("required for {} segments ({unit})", s.kind)))
    };
    let spec = match s.kind.as_str() {
        "straight" => {
            if s.rate.is_some() {
                return Err(invalid(format!("{key}.rate"), "not allowed on straight segments"));
            }
            SegmentSpec::straight(s.duration, s.speed)
        }
        "turn" => SegmentSpec::turn(s.duration, s.speed, rate("deg/s")?.to_radians()),
        "climb" => SegmentSpec::climb(s.duration, s.speed, rate("m/s")?),
        other => {
            return Err(invalid(
                format!("{key}.kind"),
                format!("unknown kind '{other}' (straight, turn, climb)"),
            ))
        }
    };
    spec.validate(i).map_err(|e| invalid(&key, e))?;
    Ok(spec)
}

fn triad(
    key: &str,
    raw: &RawTriad,
    mut model: TriadErrorModel,
    bias_unit: fn(f64) -> f64,
    noise_unit: fn(f64) -> f64,
) -> Result<TriadErrorModel, ConfigError> {
    if let Some(b) = raw.bias {
        let b = b.vector();
        if b.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("{key}.bias"), "must be finite"));
        }
        model.bias = b.map(bias_unit);
    }
    if let Some(sf) = raw.scale_factor {
        let sf = sf.vector();
        if sf.iter().any(|x| !(x.is_finite() && *x > -1.0)) {
            return Err(invalid(format!("{key}.scale_factor"), "components must exceed -1"));
        }
        model.scale_factor = sf;
    }
    if let Some(n) = raw.noise_density {
        if !(n.is_finite() && n >= 0.0) {
            return Err(invalid(format!("{key}.noise_density"), format!("must be >= 0, got {n}")));
        }
        model.noise_density = noise_unit(n);
    }
    if let Some(r) = raw.sample_rate {
        model.sample_rate = positive(&format!("{key}.sample_rate"), r)?;
    }
    if let Some(w) = raw.warmup {
        if !(w.is_finite() && w >= 0.0) {
            return Err(invalid(format!("{key}.warmup"), format!("must be >= 0, got {w}")));
        }
        model.warmup = w;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use insdepth_core::trajectory::default_segments;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.experiment.gyro, TriadErrorModel::mems_gyro());
        assert_eq!(cfg.experiment.accel, TriadErrorModel::mems_accel());
        assert_eq!(cfg.experiment.segments, default_segments());
    }

    #[test]
    fn negative_duration_names_key() {
        let err = parse_config("[trajectory]\nduration = -5.0\n").unwrap_err();
        assert_eq!(err.key, "trajectory.duration");
    }

    #[test]
    fn deep_window_8_rejected() {
        let err = parse_config("[train]\nwindow = 8\nvariants = [\"deep\"]\n").unwrap_err();
        assert_eq!(err.key, "train.window");
        assert!(parse_config("[train]\nwindow = 8\nvariants = [\"superficial\"]\n").is_ok());
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = parse_config("schema_version = 1\n[train]\nepochs = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(parse_config("[train]\nepoch = 3\n").is_err());
        assert_eq!(parse_config("schema_version = 2\n").unwrap_err().key, "schema_version");
    }

    #[test]
    fn units_are_converted() {
        let cfg = parse_config(
            "[errors.gyro]\nbias = [1.0, 2.0, 3.0]\nnoise_density = 0.5\n[errors.accel]\nbias = 10.0\nscale_factor = 0.0\n",
        )
        .unwrap()
        .experiment;
        assert_eq!(cfg.gyro.bias, Vector3::new(1.0, 2.0, 3.0).map(deg_per_hour));
        assert_eq!(cfg.gyro.noise_density, 0.5f64.to_radians());
        assert_eq!(cfg.accel.bias, Vector3::repeat(micro_g(10.0)));
        assert_eq!(cfg.accel.scale_factor, Vector3::zeros());
    }

    #[test]
    fn segment_errors_are_indexed() {
        let text = "[[trajectory.segments]]\nkind = \"straight\"\nduration = 10.0\nspeed = 5.0\n\
                    [[trajectory.segments]]\nkind = \"turn\"\nduration = 10.0\nspeed = 5.0\n";
        assert_eq!(parse_config(text).unwrap_err().key, "trajectory.segments[1].rate");
        let text = "[[trajectory.segments]]\nkind = \"hover\"\nduration = 10.0\nspeed = 5.0\n";
        assert_eq!(parse_config(text).unwrap_err().key, "trajectory.segments[0].kind");
    }

    #[test]
    fn rate_mismatch_names_sensor() {
        let err = parse_config("[trajectory]\ndt = 0.005\n").unwrap_err();
        assert_eq!(err.key, "errors.gyro.sample_rate");
        assert!(parse_config(
            "[trajectory]\ndt = 0.005\n[errors.gyro]\nsample_rate = 200.0\n[errors.accel]\nsample_rate = 200.0\n"
        )
        .is_ok());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
    }
}
