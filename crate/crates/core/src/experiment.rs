//! End-to-end pipeline: simulate, corrupt, mechanize, window, train the
//! three depth variants and score their corrections on held-out data.

use std::time::Instant;

use crate::convnet::{
    build_variant, train, ChannelStats, Model, Network, Normalization, Sample, Tensor,
    TrainConfig, Variant, INPUT_CHANNELS,
};
use crate::earth::{lla_to_enu, EarthModel, EnuVector, GeodeticPosition};
use crate::error::{Error, Result};
use crate::imu::{self, ImuSeries, TriadErrorModel};
use crate::strapdown::{self, NavSeries, NavState};
use crate::trajectory::{self, SegmentSpec, TrajectorySeries};

/// Reference values of the depth study as published (metres, percent).
/// Displayed next to our results, never used as thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedRow {
    pub variant: Variant,
    pub rmse: AxisRmse,
    pub accuracy_pct: f64,
}

pub const PUBLISHED: [PublishedRow; 3] = [
    PublishedRow {
        variant: Variant::Superficial,
        rmse: AxisRmse { east: 23.63, north: 22.10, up: 81.50 },
        accuracy_pct: 69.70,
    },
    PublishedRow {
        variant: Variant::Medium,
        rmse: AxisRmse { east: 5.08, north: 6.93, up: 66.47 },
        accuracy_pct: 70.20,
    },
    PublishedRow {
        variant: Variant::Deep,
        rmse: AxisRmse { east: 2.39, north: 6.31, up: 14.10 },
        accuracy_pct: 91.72,
    },
];

/// One step of the splitmix64 sequence.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named stage: splitmix64 of the master seed, then one
/// splitmix64 round per byte of `tag` xored into the state.
pub fn mix_seed(seed: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(seed), |h, b| splitmix64(h ^ u64::from(b)))
}

/// Everything needed to run the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub origin: GeodeticPosition,
    pub initial_yaw: f64,
    pub segments: Vec<SegmentSpec>,
    pub dt: f64,
    /// Truncates the script to this many seconds when set.
    pub duration: Option<f64>,
    pub gyro: TriadErrorModel,
    pub accel: TriadErrorModel,
    pub variants: Vec<Variant>,
    pub window: usize,
    /// `seed` is ignored; each variant gets sub-seeds of [`Self::seed`].
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            origin: trajectory::default_origin(),
            initial_yaw: 0.0,
            segments: trajectory::default_segments(),
            dt: 0.01,
            duration: None,
            gyro: TriadErrorModel::mems_gyro(),
            accel: TriadErrorModel::mems_accel(),
            variants: Variant::ALL.to_vec(),
            window: 32,
            train: TrainConfig::default(),
            train_fraction: 0.5,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    /// Number of simulation steps per 1 Hz evaluation sample.
    pub fn decimation(&self) -> Result<usize> {
        let f = 1.0 / self.dt;
        let n = f.round();
        if !(self.dt.is_finite() && self.dt > 0.0) || n < 1.0 || (f - n).abs() > 1e-9 * n {
            return Err(Error::InvalidArgument(format!(
                "dt {} does not divide one second",
                self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn warmup_time(&self) -> f64 {
        self.gyro.warmup.max(self.accel.warmup)
    }

    pub fn validate(&self) -> Result<()> {
        self.decimation()?;
        for (i, s) in self.segments.iter().enumerate() {
            s.validate(i)?;
        }
        let total: f64 = self.segments.iter().map(|s| s.duration).sum();
        if let Some(d) = self.duration {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidArgument(format!("duration must be positive, got {d}")));
            }
            if d > total + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "duration {d} s exceeds the segment script ({total} s)"
                )));
            }
        }
        self.gyro.validate("gyro")?;
        self.accel.validate("accel")?;
        let hz = 1.0 / self.dt;
        for m in [&self.gyro, &self.accel] {
            if ((m.sample_rate - hz) / hz).abs() > 1e-9 {
                return Err(Error::RateMismatch {
                    model_hz: m.sample_rate,
                    series_hz: hz,
                });
            }
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("no variants selected".into()));
        }
        for v in &self.variants {
            build_variant(*v, self.window)?;
        }
        self.train.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Ground-truth trajectory, truncated to `duration` if set.
pub fn simulate(cfg: &ExperimentConfig, earth: &EarthModel) -> Result<TrajectorySeries> {
    let mut traj = trajectory::generate(cfg.origin, cfg.initial_yaw, &cfg.segments, cfg.dt, earth)?;
    if let Some(d) = cfg.duration {
        traj.samples.retain(|s| s.t <= d + 1e-9);
    }
    Ok(traj)
}

pub fn corrupt(ideal: &ImuSeries, cfg: &ExperimentConfig) -> Result<ImuSeries> {
    imu::corrupt(ideal, &cfg.gyro, &cfg.accel, mix_seed(cfg.seed, "corrupt"))
}

/// Dead reckoning initialised from the first reference sample. Fails if
/// the track leaves the local-tangent domain of its ENU positions.
pub fn mechanize(imu: &ImuSeries, reference: &TrajectorySeries, earth: &EarthModel) -> Result<NavSeries> {
    let first = reference
        .samples
        .first()
        .ok_or(Error::SeriesTooShort { needed: 1, got: 0 })?;
    let nav = strapdown::run(imu, NavState::from_reference(first), reference.origin, earth)?;
    nav.enu_positions(earth)?;
    Ok(nav)
}

/// One sliding window over the 1 Hz INS track.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Time of the window's last sample.
    pub t: f64,
    /// Raw `[W, 3]` INS ENU positions, metres.
    pub input: Tensor,
    pub ins: EnuVector,
    pub reference: EnuVector,
}

impl Window {
    /// Reference minus INS at the last sample.
    pub fn residual(&self) -> [f64; 3] {
        [
            self.reference.east - self.ins.east,
            self.reference.north - self.ins.north,
            self.reference.up - self.ins.up,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub window: usize,
    pub windows: Vec<Window>,
    /// Identity until [`temporal_split`] fits it on the training side.
    pub normalization: Normalization,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Normalized inputs and residual targets.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        self.windows
            .iter()
            .map(|w| {
                let mut input = w.input.clone();
                self.normalization.input.normalize(input.data_mut());
                let mut target = w.residual().to_vec();
                self.normalization.target.normalize(&mut target);
                Ok(Sample {
                    input,
                    target: Tensor::new(vec![3], target)?,
                })
            })
            .collect()
    }
}

/// Sliding windows (stride 1) of INS ENU positions with the residual at the
/// last sample as target. Both series must share timestamps.
pub fn make_windows(
    ins: &NavSeries,
    reference: &TrajectorySeries,
    window: usize,
    earth: &EarthModel,
) -> Result<WindowDataset> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    if ins.len() != reference.len() {
        return Err(Error::Misaligned(format!(
            "INS has {} samples, reference {}",
            ins.len(),
            reference.len()
        )));
    }
    for (i, (t, r)) in ins.times.iter().zip(&reference.samples).enumerate() {
        if (t - r.t).abs() > 1e-9 {
            return Err(Error::Misaligned(format!(
                "sample {i}: INS t = {t}, reference t = {}",
                r.t
            )));
        }
    }
    if ins.len() < window {
        return Err(Error::SeriesTooShort {
            needed: window,
            got: ins.len(),
        });
    }
    let origin = reference.origin;
    let ins_enu = ins
        .states
        .iter()
        .map(|s| lla_to_enu(&s.position, &origin, earth))
        .collect::<Result<Vec<_>>>()?;
    let ref_enu = reference
        .samples
        .iter()
        .map(|s| lla_to_enu(&s.position, &origin, earth))
        .collect::<Result<Vec<_>>>()?;
    let windows = (window - 1..ins.len())
        .map(|end| {
            let rows = &ins_enu[end + 1 - window..=end];
            let data = rows.iter().flat_map(|p| [p.east, p.north, p.up]).collect();
            Ok(Window {
                t: ins.times[end],
                input: Tensor::new(vec![window, INPUT_CHANNELS], data)?,
                ins: ins_enu[end],
                reference: ref_enu[end],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowDataset {
        window,
        windows,
        normalization: identity_normalization(),
    })
}

fn identity_normalization() -> Normalization {
    Normalization {
        input: ChannelStats::identity(INPUT_CHANNELS),
        target: ChannelStats::identity(3),
    }
}

/// First `floor(fraction * n)` windows train, the rest test. Both sides get
/// normalization fitted on the training windows only.
pub fn temporal_split(ds: WindowDataset, fraction: f64) -> Result<(WindowDataset, WindowDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.windows.len();
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "split of {n} windows at {fraction} leaves one side empty"
        )));
    }
    let mut train_w = ds.windows;
    let test_w = train_w.split_off(n_train);
    let inputs: Vec<f64> = train_w.iter().flat_map(|w| w.input.data().iter().copied()).collect();
    let targets: Vec<f64> = train_w.iter().flat_map(|w| w.residual()).collect();
    let normalization = Normalization {
        input: ChannelStats::fit(&inputs, INPUT_CHANNELS)?,
        target: ChannelStats::fit(&targets, 3)?,
    };
    Ok((
        WindowDataset {
            window: ds.window,
            windows: train_w,
            normalization: normalization.clone(),
        },
        WindowDataset {
            window: ds.window,
            windows: test_w,
            normalization,
        },
    ))
}

/// Root-mean-square difference of two equally long sequences.
pub fn rmse(reference: &[f64], predicted: &[f64]) -> Result<f64> {
    if reference.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "rmse of {} vs {} values",
            reference.len(),
            predicted.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ss: f64 = reference
        .iter()
        .zip(predicted)
        .map(|(r, p)| (r - p) * (r - p))
        .sum();
    Ok((ss / reference.len() as f64).sqrt())
}

/// Relative RMSE reduction in percent, floored at zero.
pub fn accuracy_pct(corrected: f64, uncorrected: f64) -> Result<f64> {
    if !(uncorrected > 0.0 && uncorrected.is_finite()) || !(corrected >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "accuracy needs uncorrected > 0 and corrected >= 0, got {corrected} / {uncorrected}"
        )));
    }
    Ok((1.0 - corrected / uncorrected).max(0.0) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRmse {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl AxisRmse {
    pub fn between(reference: &[EnuVector], estimate: &[EnuVector]) -> Result<Self> {
        let axis = |f: fn(&EnuVector) -> f64| {
            let r: Vec<f64> = reference.iter().map(f).collect();
            let e: Vec<f64> = estimate.iter().map(f).collect();
            rmse(&r, &e)
        };
        Ok(Self {
            east: axis(|p| p.east)?,
            north: axis(|p| p.north)?,
            up: axis(|p| p.up)?,
        })
    }

    /// Mean of the three axes.
    pub fn average(&self) -> f64 {
        (self.east + self.north + self.up) / 3.0
    }
}

/// Windows split into training and test sides, warm-up excluded.
pub fn prepare_dataset(
    nav: &NavSeries,
    reference: &TrajectorySeries,
    cfg: &ExperimentConfig,
    earth: &EarthModel,
) -> Result<(WindowDataset, WindowDataset)> {
    let factor = cfg.decimation()?;
    let warmup = cfg.warmup_time();
    let mut ins = nav.decimate(factor)?;
    let mut reference = trajectory::decimate(reference, factor)?;
    let keep = ins.times.iter().take_while(|t| **t < warmup).count();
    ins.times.drain(..keep);
    ins.states.drain(..keep);
    let keep_ref = reference.samples.iter().take_while(|s| s.t < warmup).count();
    reference.samples.drain(..keep_ref);
    let ds = make_windows(&ins, &reference, cfg.window, earth)?;
    temporal_split(ds, cfg.train_fraction)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub loss_history: Vec<f64>,
    pub train_seconds: f64,
}

/// Initialises and trains one variant on the training side.
pub fn train_variant(
    train_ds: &WindowDataset,
    variant: Variant,
    cfg: &ExperimentConfig,
) -> Result<TrainedModel> {
    let spec = build_variant(variant, train_ds.window)?;
    let mut network = Network::init(spec, mix_seed(cfg.seed, &format!("init/{variant}")))?;
    let samples = train_ds.samples()?;
    let train_cfg = TrainConfig {
        seed: mix_seed(cfg.seed, &format!("shuffle/{variant}")),
        ..cfg.train
    };
    let start = Instant::now();
    let loss_history = train(&mut network, &samples, &train_cfg)?;
    let train_seconds = start.elapsed().as_secs_f64();
    Ok(TrainedModel {
        model: Model {
            network,
            normalization: train_ds.normalization.clone(),
        },
        loss_history,
        train_seconds,
    })
}

/// Reference, raw INS and corrected position at one test window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedRow {
    pub t: f64,
    pub reference: EnuVector,
    pub ins: EnuVector,
    pub corrected: EnuVector,
}

pub fn apply_model(model: &Model, test: &WindowDataset) -> Result<Vec<CorrectedRow>> {
    test.windows
        .iter()
        .map(|w| {
            let c = model.predict(&w.input)?;
            Ok(CorrectedRow {
                t: w.t,
                reference: w.reference,
                ins: w.ins,
                corrected: EnuVector::new(w.ins.east + c[0], w.ins.north + c[1], w.ins.up + c[2]),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub variant: Variant,
    pub rmse: AxisRmse,
    pub rmse_3d_avg: f64,
    pub accuracy_pct: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub uncorrected: AxisRmse,
    pub variants: Vec<VariantReport>,
}

impl EvalReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

pub fn uncorrected_rmse(test: &WindowDataset) -> Result<AxisRmse> {
    let r: Vec<EnuVector> = test.windows.iter().map(|w| w.reference).collect();
    let e: Vec<EnuVector> = test.windows.iter().map(|w| w.ins).collect();
    AxisRmse::between(&r, &e)
}

/// Scores corrected rows against the uncorrected baseline.
pub fn score(
    variant: Variant,
    rows: &[CorrectedRow],
    uncorrected: &AxisRmse,
    train_seconds: f64,
) -> Result<VariantReport> {
    let r: Vec<EnuVector> = rows.iter().map(|c| c.reference).collect();
    let e: Vec<EnuVector> = rows.iter().map(|c| c.corrected).collect();
    let rmse = AxisRmse::between(&r, &e)?;
    let avg = rmse.average();
    Ok(VariantReport {
        variant,
        rmse,
        rmse_3d_avg: avg,
        accuracy_pct: accuracy_pct(avg, uncorrected.average())?,
        train_seconds,
    })
}

/// All intermediate products of a full run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trajectory: TrajectorySeries,
    pub ideal_imu: ImuSeries,
    pub imu: ImuSeries,
    pub nav: NavSeries,
    pub models: Vec<(Variant, TrainedModel)>,
    pub corrected: Vec<(Variant, Vec<CorrectedRow>)>,
    pub report: EvalReport,
}

/// Runs every stage. Errors carry the name of the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig, earth: &EarthModel) -> Result<ExperimentOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let trajectory = simulate(cfg, earth).map_err(|e| e.in_stage("simulate"))?;
    let ideal_imu = imu::derive_ideal(&trajectory, earth).map_err(|e| e.in_stage("derive-imu"))?;
    let imu = corrupt(&ideal_imu, cfg).map_err(|e| e.in_stage("corrupt"))?;
    let nav = mechanize(&imu, &trajectory, earth).map_err(|e| e.in_stage("mechanize"))?;
    let (train_ds, test_ds) =
        prepare_dataset(&nav, &trajectory, cfg, earth).map_err(|e| e.in_stage("train"))?;
    let models = cfg
        .variants
        .iter()
        .map(|v| Ok((*v, train_variant(&train_ds, *v, cfg)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("train"))?;
    let eval = || -> Result<_> {
        let uncorrected = uncorrected_rmse(&test_ds)?;
        let mut corrected = Vec::new();
        let mut variants = Vec::new();
        for (v, m) in &models {
            let rows = apply_model(&m.model, &test_ds)?;
            variants.push(score(*v, &rows, &uncorrected, m.train_seconds)?);
            corrected.push((*v, rows));
        }
        Ok((corrected, EvalReport { uncorrected, variants }))
    };
    let (corrected, report) = eval().map_err(|e| e.in_stage("evaluate"))?;
    Ok(ExperimentOutput {
        trajectory,
        ideal_imu,
        imu,
        nav,
        models,
        corrected,
        report,
    })
}
