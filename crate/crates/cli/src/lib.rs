//! Stage commands behind the `insdepth` binary.
//!
//! Artifacts in the output directory:
//!
//! | stage      | reads                               | writes                              |
//! |------------|-------------------------------------|-------------------------------------|
//! | simulate   |                                     | trajectory.csv                      |
//! | derive-imu | trajectory.csv                      | imu_ideal.csv                       |
//! | corrupt    | imu_ideal.csv                       | imu.csv                             |
//! | mechanize  | trajectory.csv, imu.csv             | nav.csv                             |
//! | train      | trajectory.csv, nav.csv             | model_<v>.bin, train_<v>.csv        |
//! | evaluate   | trajectory.csv, nav.csv, models     | corrected_<v>.csv, report.csv       |

pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use insdepth_core::convnet::Variant;
use insdepth_core::earth::EarthModel;
use insdepth_core::experiment::{
    self, apply_model, prepare_dataset, score, train_variant, uncorrected_rmse, EvalReport,
    ExperimentConfig, ExperimentOutput, PUBLISHED,
};
use insdepth_core::imu::{derive_ideal, ImuSeries};
use insdepth_core::io;

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig};

/// Environment variable naming the output directory when neither `--out`
/// nor the scenario sets one.
pub const OUT_DIR_ENV: &str = "INSDEPTH_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    DeriveImu,
    Corrupt,
    Mechanize,
    Train,
    Evaluate,
    RunAll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::DeriveImu => "derive-imu",
            Command::Corrupt => "corrupt",
            Command::Mechanize => "mechanize",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::RunAll => "run-all",
        }
    }
}

/// Resolved invocation: scenario plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Invocation {
    /// Applies `--seed`, `--variant` and the output directory precedence
    /// `--out`, scenario `experiment.output_dir`, `$INSDEPTH_OUT`, `./out`.
    pub fn new(
        scenario: ScenarioConfig,
        seed: Option<u64>,
        variant: Option<Variant>,
        out: Option<PathBuf>,
    ) -> Self {
        let mut config = scenario.experiment;
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(v) = variant {
            config.variants = vec![v];
        }
        let out = out
            .or(scenario.output_dir)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Self { config, out }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn model_file(v: Variant) -> String {
    format!("model_{v}.bin")
}

pub fn train_log_file(v: Variant) -> String {
    format!("train_{v}.csv")
}

pub fn corrected_file(v: Variant) -> String {
    format!("corrected_{v}.csv")
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing input {} (run `{producer}` first)", path.display());
    }
    Ok(())
}

/// Runs one command and returns the report if it produced one. Errors are
/// prefixed with the failing stage.
pub fn dispatch(command: Command, inv: &Invocation) -> Result<Option<EvalReport>> {
    let earth = EarthModel::wgs84();
    let result = match command {
        Command::Simulate => simulate(inv, &earth).map(|_| None),
        Command::DeriveImu => derive_imu(inv, &earth).map(|_| None),
        Command::Corrupt => corrupt(inv).map(|_| None),
        Command::Mechanize => mechanize(inv, &earth).map(|_| None),
        Command::Train => train(inv, &earth).map(|_| None),
        Command::Evaluate => evaluate(inv, &earth).map(Some),
        Command::RunAll => return run_all(inv, &earth).map(Some),
    };
    result.with_context(|| command.name())
}

fn simulate(inv: &Invocation, earth: &EarthModel) -> Result<()> {
    let traj = experiment::simulate(&inv.config, earth)?;
    io::write_trajectory(&inv.path("trajectory.csv"), &traj)?;
    Ok(())
}

fn derive_imu(inv: &Invocation, earth: &EarthModel) -> Result<()> {
    let p = inv.path("trajectory.csv");
    require(&p, "simulate")?;
    let imu = derive_ideal(&io::read_trajectory(&p)?, earth)?;
    io::write_imu(&inv.path("imu_ideal.csv"), &imu)?;
    Ok(())
}

fn corrupt(inv: &Invocation) -> Result<()> {
    let p = inv.path("imu_ideal.csv");
    require(&p, "derive-imu")?;
    let imu = experiment::corrupt(&io::read_imu(&p)?, &inv.config)?;
    io::write_imu(&inv.path("imu.csv"), &imu)?;
    Ok(())
}

/// Corrupted stream if present, else the ideal one, else derived on the fly.
fn mechanize_input(inv: &Invocation, earth: &EarthModel) -> Result<ImuSeries> {
    for name in ["imu.csv", "imu_ideal.csv"] {
        let p = inv.path(name);
        if p.exists() {
            return Ok(io::read_imu(&p)?);
        }
    }
    let p = inv.path("trajectory.csv");
    require(&p, "simulate")?;
    Ok(derive_ideal(&io::read_trajectory(&p)?, earth)?)
}

fn mechanize(inv: &Invocation, earth: &EarthModel) -> Result<()> {
    let p = inv.path("trajectory.csv");
    require(&p, "simulate")?;
    let traj = io::read_trajectory(&p)?;
    let imu = mechanize_input(inv, earth)?;
    let nav = experiment::mechanize(&imu, &traj, earth)?;
    io::write_nav(&inv.path("nav.csv"), &nav, earth)?;
    Ok(())
}

fn datasets(
    inv: &Invocation,
    earth: &EarthModel,
) -> Result<(experiment::WindowDataset, experiment::WindowDataset)> {
    let tp = inv.path("trajectory.csv");
    let np = inv.path("nav.csv");
    require(&tp, "simulate")?;
    require(&np, "mechanize")?;
    let traj = io::read_trajectory(&tp)?;
    let nav = io::read_nav(&np, traj.origin)?;
    Ok(prepare_dataset(&nav, &traj, &inv.config, earth)?)
}

fn train(inv: &Invocation, earth: &EarthModel) -> Result<()> {
    let (train_ds, _) = datasets(inv, earth)?;
    for v in &inv.config.variants {
        let m = train_variant(&train_ds, *v, &inv.config).with_context(|| v.to_string())?;
        io::write_model(&inv.path(&model_file(*v)), &m.model)?;
        io::write_loss_history(&inv.path(&train_log_file(*v)), &m.loss_history, m.train_seconds)?;
    }
    Ok(())
}

fn evaluate(inv: &Invocation, earth: &EarthModel) -> Result<EvalReport> {
    let (_, test_ds) = datasets(inv, earth)?;
    let uncorrected = uncorrected_rmse(&test_ds)?;
    let mut variants = Vec::new();
    for v in &inv.config.variants {
        let mp = inv.path(&model_file(*v));
        require(&mp, "train")?;
        let model = io::read_model(&mp).with_context(|| mp.display().to_string())?;
        let lp = inv.path(&train_log_file(*v));
        require(&lp, "train")?;
        let (_, seconds) = io::read_loss_history(&lp)?;
        let rows = apply_model(&model, &test_ds)?;
        io::write_corrected(&inv.path(&corrected_file(*v)), &rows)?;
        variants.push(score(*v, &rows, &uncorrected, seconds)?);
    }
    let report = EvalReport { uncorrected, variants };
    write_reports(inv, &report)?;
    Ok(report)
}

fn write_reports(inv: &Invocation, report: &EvalReport) -> Result<()> {
    io::write_report(&inv.path("report.csv"), report)?;
    write_published(&inv.path("report_published.csv"))?;
    Ok(())
}

/// Published per-variant values for side-by-side display.
fn write_published(path: &Path) -> Result<()> {
    let mut text = String::from("variant,rmse_e,rmse_n,rmse_u,rmse_3d_avg,accuracy_pct\n");
    for row in PUBLISHED {
        let r = row.rmse;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.variant,
            r.east,
            r.north,
            r.up,
            io::fmt_f64(r.average()),
            row.accuracy_pct
        ));
    }
    Ok(io::write_atomic(path, text.as_bytes())?)
}

/// Core errors from the pipeline already name their stage.
fn run_all(inv: &Invocation, earth: &EarthModel) -> Result<EvalReport> {
    let out = experiment::run_experiment(&inv.config, earth)?;
    write_all(inv, earth, &out).context("write")?;
    Ok(out.report)
}

/// Writes every artifact of a completed run.
pub fn write_all(inv: &Invocation, earth: &EarthModel, out: &ExperimentOutput) -> Result<()> {
    io::write_trajectory(&inv.path("trajectory.csv"), &out.trajectory)?;
    io::write_imu(&inv.path("imu_ideal.csv"), &out.ideal_imu)?;
    io::write_imu(&inv.path("imu.csv"), &out.imu)?;
    io::write_nav(&inv.path("nav.csv"), &out.nav, earth)?;
    for (v, m) in &out.models {
        io::write_model(&inv.path(&model_file(*v)), &m.model)?;
        io::write_loss_history(&inv.path(&train_log_file(*v)), &m.loss_history, m.train_seconds)?;
    }
    for (v, rows) in &out.corrected {
        io::write_corrected(&inv.path(&corrected_file(*v)), rows)?;
    }
    write_reports(inv, &out.report)
}

/// Human-readable summary of `report.csv`.
pub fn summary(report: &EvalReport) -> String {
    let u = &report.uncorrected;
    let mut s = format!(
        "{:<12} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}\n",
        "variant", "rmse_e", "rmse_n", "rmse_u", "3d_avg", "acc_%", "train_s"
    );
    s.push_str(&format!(
        "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>9} {:>9}\n",
        "uncorrected",
        u.east,
        u.north,
        u.up,
        u.average(),
        "-",
        "-"
    ));
    for v in &report.variants {
        s.push_str(&format!(
            "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>9.2} {:>9.2}\n",
            v.variant.name(),
            v.rmse.east,
            v.rmse.north,
            v.rmse.up,
            v.rmse_3d_avg,
            v.accuracy_pct,
            v.train_seconds
        ));
    }
    s.push_str("accuracy_pct = max(0, 1 - corrected_3d_avg / uncorrected_3d_avg) * 100\n");
    s
}
