//! MRCLAM-style multi-robot logs: parsing, writing, resampling and replay.
//!
//! A dataset directory holds, for robots numbered `1..=M`,
//! `Robot{i}_Odometry.dat`, `Robot{i}_Measurement.dat` and
//! `Robot{i}_Groundtruth.dat`, plus `Landmark_Groundtruth.dat` and
//! `Barcodes.dat`. Every file is whitespace-separated numeric columns;
//! lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_filter_with, Belief, FilterStep, MeasurementBatch, Observation, UpdateOptions};
use crate::lie::{se2_left_jacobian, wrap_angle, Rotation2};
use crate::metrics::{InformationAudit, InformationReport, KernelAudit, KernelReport};
use crate::multirobot::{MultiRobotModel, MultiState2, RelativeSubject, RobotPose2, Target};
use crate::slam2d::{OdometryInput2, OdometryNoise};
use crate::{ErrorStateModel, Variant};

/// Sanity bound on forward speed, m/s.
pub const MAX_SPEED: f64 = 0.5;

pub const LANDMARK_FILE: &str = "Landmark_Groundtruth.dat";
pub const BARCODE_FILE: &str = "Barcodes.dat";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryRecord {
    pub time: f64,
    /// Forward velocity, m/s.
    pub v: f64,
    /// Angular velocity, rad/s.
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub time: f64,
    pub barcode: u32,
    pub range: f64,
    pub bearing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRecord {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PoseRecord {
    pub fn pose(&self) -> RobotPose2 {
        RobotPose2::new(self.theta, Vector2::new(self.x, self.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkTruth {
    pub subject: u32,
    pub x: f64,
    pub y: f64,
    pub std_x: f64,
    pub std_y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotLog {
    pub subject: u32,
    pub odometry: Vec<OdometryRecord>,
    pub measurements: Vec<MeasurementRecord>,
    pub groundtruth: Vec<PoseRecord>,
}

/// Measurements dropped while loading, by barcode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkipReport {
    pub unknown_barcodes: BTreeMap<u32, usize>,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.unknown_barcodes.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub robots: Vec<RobotLog>,
    pub landmarks: Vec<LandmarkTruth>,
    /// Barcode to subject, in file order.
    pub barcodes: IndexMap<u32, u32>,
    pub skipped: SkipReport,
}

impl DatasetBundle {
    pub fn subject_of(&self, barcode: u32) -> Option<u32> {
        self.barcodes.get(&barcode).copied()
    }

    pub fn robot(&self, subject: u32) -> Option<&RobotLog> {
        self.robots.iter().find(|r| r.subject == subject)
    }
}

pub fn odometry_file(subject: u32) -> String {
    format!("Robot{subject}_Odometry.dat")
}

pub fn measurement_file(subject: u32) -> String {
    format!("Robot{subject}_Measurement.dat")
}

pub fn groundtruth_file(subject: u32) -> String {
    format!("Robot{subject}_Groundtruth.dat")
}

struct Table {
    path: PathBuf,
    rows: Vec<(usize, Vec<f64>)>,
}

impl Table {
    fn read(path: PathBuf, columns: usize) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| corrupt(&path, i + 1, format!("{e}")))?;
            if values.len() != columns {
                return Err(corrupt(
                    &path,
                    i + 1,
                    format!("expected {columns} columns, found {}", values.len()),
                ));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(corrupt(&path, i + 1, format!("non-finite value {v}")));
            }
            rows.push((i + 1, values));
        }
        Ok(Self { path, rows })
    }

    fn check_sorted(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].1[0] < w[0].1[0] {
                return Err(corrupt(
                    &self.path,
                    w[1].0,
                    format!("timestamp {} precedes {}", w[1].1[0], w[0].1[0]),
                ));
            }
        }
        Ok(())
    }

    fn id(&self, line: usize, v: f64) -> Result<u32> {
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(corrupt(&self.path, line, format!("{v} is not an id")));
        }
        Ok(v as u32)
    }
}

fn corrupt(path: &Path, line: usize, reason: String) -> Error {
    Error::CorruptData {
        path: path.to_path_buf(),
        line,
        reason,
    }
}

/// Parses a dataset directory. Measurements whose barcode is not in the
/// barcode map are dropped and counted in `skipped`.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetBundle> {
    let root = root.as_ref();
    let barcode_table = Table::read(root.join(BARCODE_FILE), 2)?;
    let mut barcodes = IndexMap::new();
    let mut subjects = std::collections::HashSet::new();
    for (line, row) in &barcode_table.rows {
        let subject = barcode_table.id(*line, row[0])?;
        let barcode = barcode_table.id(*line, row[1])?;
        if barcodes.insert(barcode, subject).is_some() || !subjects.insert(subject) {
            return Err(corrupt(
                &barcode_table.path,
                *line,
                format!("barcode map not injective at subject {subject}, barcode {barcode}"),
            ));
        }
    }

    let landmark_table = Table::read(root.join(LANDMARK_FILE), 5)?;
    let mut landmarks = Vec::with_capacity(landmark_table.rows.len());
    for (line, row) in &landmark_table.rows {
        landmarks.push(LandmarkTruth {
            subject: landmark_table.id(*line, row[0])?,
            x: row[1],
            y: row[2],
            std_x: row[3],
            std_y: row[4],
        });
    }

    let mut robots = Vec::new();
    let mut skipped = SkipReport::default();
    let mut subject = 1;
    while root.join(odometry_file(subject)).exists() || subject == 1 {
        robots.push(load_robot(root, subject, &barcodes, &mut skipped)?);
        subject += 1;
    }
    Ok(DatasetBundle {
        robots,
        landmarks,
        barcodes,
        skipped,
    })
}

fn load_robot(
    root: &Path,
    subject: u32,
    barcodes: &IndexMap<u32, u32>,
    skipped: &mut SkipReport,
) -> Result<RobotLog> {
    let odo = Table::read(root.join(odometry_file(subject)), 3)?;
    odo.check_sorted()?;
    let mut odometry = Vec::with_capacity(odo.rows.len());
    for (line, row) in &odo.rows {
        if row[1].abs() > MAX_SPEED {
            return Err(corrupt(
                &odo.path,
                *line,
                format!("forward velocity {} exceeds {MAX_SPEED} m/s", row[1]),
            ));
        }
        odometry.push(OdometryRecord {
            time: row[0],
            v: row[1],
            omega: row[2],
        });
    }

    let meas = Table::read(root.join(measurement_file(subject)), 4)?;
    meas.check_sorted()?;
    let mut measurements = Vec::with_capacity(meas.rows.len());
    for (line, row) in &meas.rows {
        let barcode = meas.id(*line, row[1])?;
        if row[2] < 0.0 {
            return Err(corrupt(&meas.path, *line, format!("negative range {}", row[2])));
        }
        if !barcodes.contains_key(&barcode) {
            *skipped.unknown_barcodes.entry(barcode).or_default() += 1;
            continue;
        }
        measurements.push(MeasurementRecord {
            time: row[0],
            barcode,
            range: row[2],
            bearing: row[3],
        });
    }

    let gt = Table::read(root.join(groundtruth_file(subject)), 4)?;
    gt.check_sorted()?;
    let groundtruth = gt
        .rows
        .iter()
        .map(|(_, r)| PoseRecord {
            time: r[0],
            x: r[1],
            y: r[2],
            theta: r[3],
        })
        .collect();
    Ok(RobotLog {
        subject,
        odometry,
        measurements,
        groundtruth,
    })
}

fn write_file(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

/// Writes a bundle in the layout `load_dataset` reads. Robots must be
/// numbered `1..=M` in order.
pub fn write_dataset(bundle: &DatasetBundle, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|source| Error::Io {
        path: root.to_path_buf(),
        source,
    })?;
    for (i, r) in bundle.robots.iter().enumerate() {
        if r.subject as usize != i + 1 {
            return Err(Error::InvalidInput(format!(
                "robot subjects must be 1..=M in order, found {} at position {}",
                r.subject,
                i + 1
            )));
        }
    }

    let mut text = String::from("# Subject #\tBarcode #\n");
    for (barcode, subject) in &bundle.barcodes {
        let _ = writeln!(text, "{subject}\t{barcode}");
    }
    write_file(root.join(BARCODE_FILE), text)?;

    let mut text = String::from("# Subject #\tx [m]\ty [m]\tx std-dev [m]\ty std-dev [m]\n");
    for l in &bundle.landmarks {
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{}", l.subject, l.x, l.y, l.std_x, l.std_y);
    }
    write_file(root.join(LANDMARK_FILE), text)?;

    for r in &bundle.robots {
        let mut text = String::from("# Time [s]\tforward velocity [m/s]\tangular velocity [rad/s]\n");
        for o in &r.odometry {
            let _ = writeln!(text, "{}\t{}\t{}", o.time, o.v, o.omega);
        }
        write_file(root.join(odometry_file(r.subject)), text)?;

        let mut text = String::from("# Time [s]\tSubject #\trange [m]\tbearing [rad]\n");
        for m in &r.measurements {
            let _ = writeln!(text, "{}\t{}\t{}\t{}", m.time, m.barcode, m.range, m.bearing);
        }
        write_file(root.join(measurement_file(r.subject)), text)?;

        let mut text = String::from("# Time [s]\tx [m]\ty [m]\torientation [rad]\n");
        for g in &r.groundtruth {
            let _ = writeln!(text, "{}\t{}\t{}\t{}", g.time, g.x, g.y, g.theta);
        }
        write_file(root.join(groundtruth_file(r.subject)), text)?;
    }
    Ok(())
}

/// Pose increment of a constant twist held for `duration`, in the body frame
/// at the start.
pub fn constant_twist(v: f64, omega: f64, duration: f64) -> OdometryInput2 {
    let phi = omega * duration;
    OdometryInput2::new(phi, se2_left_jacobian(phi) * Vector2::new(v * duration, 0.0))
}

fn compose(a: &OdometryInput2, b: &OdometryInput2) -> OdometryInput2 {
    OdometryInput2::new(
        a.omega + b.omega,
        a.translation + Rotation2::new(a.omega).rotate(&b.translation),
    )
}

/// Zero-order-hold integration of a velocity stream over `steps` cells of
/// length `period` starting at `start`. Each record holds until the next one;
/// before the first record the robot is at rest.
pub fn discretize_odometry(
    stream: &[OdometryRecord],
    start: f64,
    period: f64,
    steps: usize,
) -> Result<Vec<OdometryInput2>> {
    if !(period > 0.0) {
        return Err(Error::Config(format!("period must be positive, got {period}")));
    }
    // Index of the first record after the one in effect.
    let mut next = stream.partition_point(|r| r.time <= start);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let (a, b) = (start + k as f64 * period, start + (k + 1) as f64 * period);
        let mut t = a;
        let mut acc = OdometryInput2::zero();
        loop {
            let (v, omega) = match next.checked_sub(1).map(|i| &stream[i]) {
                Some(r) => (r.v, r.omega),
                None => (0.0, 0.0),
            };
            let until = stream.get(next).map_or(b, |r| r.time.min(b));
            if until > t {
                acc = compose(&acc, &constant_twist(v, omega, until - t));
                t = until;
            }
            if t >= b {
                break;
            }
            next += 1;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Pose at time `t`, interpolated along the constant twist joining the
/// neighbouring samples. `None` outside the sampled interval.
pub fn interpolate_pose(samples: &[PoseRecord], t: f64) -> Option<RobotPose2> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t < first.time || t > last.time {
        return None;
    }
    let i = samples.partition_point(|r| r.time <= t);
    if i == samples.len() {
        return Some(last.pose());
    }
    let (a, b) = (&samples[i - 1], &samples[i]);
    if t == a.time || b.time == a.time {
        return Some(a.pose());
    }
    let s = (t - a.time) / (b.time - a.time);
    let rot = Rotation2::new(a.theta);
    let dtheta = wrap_angle(b.theta - a.theta);
    let body = rot.inverse().rotate(&Vector2::new(b.x - a.x, b.y - a.y));
    let rho = se2_left_jacobian(dtheta).try_inverse()? * body;
    let p = Vector2::new(a.x, a.y) + rot.rotate(&(se2_left_jacobian(s * dtheta) * (s * rho)));
    Some(RobotPose2::new(a.theta + s * dtheta, p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Filter grid period, seconds.
    pub period: f64,
    /// Odometry std as a fraction of each increment.
    pub odometry_fraction: f64,
    /// Odometry std floors, rad and m per step.
    pub odometry_floor_omega: f64,
    pub odometry_floor_p: f64,
    pub range_std: f64,
    pub bearing_std: f64,
    pub max_range: f64,
    /// Robot subjects to replay; all when absent.
    pub robots: Option<Vec<u32>>,
    /// Window bounds in seconds after the dataset start.
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub initial_std_position: f64,
    pub initial_std_theta: f64,
    /// Chi-square gate probability; no gating when absent.
    pub gate_probability: Option<f64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            period: 0.02,
            odometry_fraction: 0.2,
            odometry_floor_omega: 1e-4,
            odometry_floor_p: 1e-4,
            range_std: 0.5,
            bearing_std: 3f64.to_radians(),
            max_range: 5.0,
            robots: None,
            start: None,
            end: None,
            initial_std_position: 0.1,
            initial_std_theta: 1f64.to_radians(),
            gate_probability: None,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("period", self.period),
            ("odometry_fraction", self.odometry_fraction),
            ("odometry_floor_omega", self.odometry_floor_omega),
            ("odometry_floor_p", self.odometry_floor_p),
            ("range_std", self.range_std),
            ("bearing_std", self.bearing_std),
            ("max_range", self.max_range),
            ("initial_std_position", self.initial_std_position),
            ("initial_std_theta", self.initial_std_theta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("replay.{name} must be positive, got {v}")));
            }
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if !(e > s) {
                return Err(Error::Config(format!("replay window [{s}, {e}] is empty")));
            }
        }
        if let Some(p) = self.gate_probability {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("replay.gate_probability must be in (0, 1), got {p}")));
            }
        }
        if matches!(&self.robots, Some(r) if r.is_empty()) {
            return Err(Error::Config("replay.robots must not be empty".to_string()));
        }
        Ok(())
    }

    pub fn odometry_noise(&self) -> OdometryNoise {
        OdometryNoise::Proportional {
            fraction: self.odometry_fraction,
            floor_omega: self.odometry_floor_omega,
            floor_p: self.odometry_floor_p,
        }
    }

    pub fn measurement_noise(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            self.range_std * self.range_std,
            self.bearing_std * self.bearing_std,
        ]))
    }
}

/// A dataset resampled onto the filter grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayLog {
    pub start: f64,
    pub period: f64,
    /// Replayed robot subjects; filter robot `i` is `robots[i]`.
    pub robots: Vec<u32>,
    pub initial: Vec<RobotPose2>,
    pub steps: Vec<FilterStep<Vec<OdometryInput2>, RelativeSubject>>,
    /// Ground truth at the end of each step, per robot.
    pub truth: Vec<Vec<RobotPose2>>,
    /// Measurements dropped for range, window or robot subset.
    pub dropped: usize,
}

pub fn prepare_replay(bundle: &DatasetBundle, config: &ReplayConfig) -> Result<ReplayLog> {
    config.validate()?;
    let robots: Vec<u32> = match &config.robots {
        Some(r) => r.clone(),
        None => bundle.robots.iter().map(|r| r.subject).collect(),
    };
    let logs = robots
        .iter()
        .map(|s| {
            bundle
                .robot(*s)
                .ok_or_else(|| Error::InvalidInput(format!("robot {s} not in dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut first = f64::NEG_INFINITY;
    let mut last = f64::INFINITY;
    for r in &logs {
        let (Some(a), Some(b)) = (r.groundtruth.first(), r.groundtruth.last()) else {
            return Err(Error::InvalidInput(format!("robot {} has no ground truth", r.subject)));
        };
        first = first.max(a.time);
        last = last.min(b.time);
    }
    let start = first + config.start.unwrap_or(0.0);
    let end = config.end.map_or(last, |e| last.min(first + e));
    if !(end > start) {
        return Err(Error::InvalidInput(format!(
            "no common ground-truth interval in window [{start}, {end}]"
        )));
    }
    let n = ((end - start) / config.period + 1e-9).floor() as usize;
    let grid = |k: usize| start + k as f64 * config.period;

    let inputs = logs
        .iter()
        .map(|r| discretize_odometry(&r.odometry, start, config.period, n))
        .collect::<Result<Vec<_>>>()?;
    let initial = logs
        .iter()
        .map(|r| interpolate_pose(&r.groundtruth, start))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidInput("ground truth does not cover the start".to_string()))?;
    let truth = (1..=n)
        .map(|k| {
            logs.iter()
                .map(|r| interpolate_pose(&r.groundtruth, grid(k)))
                .collect::<Option<Vec<_>>>()
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidInput("ground truth does not cover the window".to_string()))?;

    let noise = config.measurement_noise();
    let mut batches: Vec<Vec<Observation<RelativeSubject>>> = vec![Vec::new(); n];
    let mut dropped = 0;
    for (observer, r) in logs.iter().enumerate() {
        for m in &r.measurements {
            let k = ((m.time - start) / config.period).round();
            let target = bundle.subject_of(m.barcode).and_then(|subject| {
                if bundle.robot(subject).is_some() {
                    robots.iter().position(|s| *s == subject).map(Target::Robot)
                } else {
                    Some(Target::Landmark(subject))
                }
            });
            let in_window = m.time >= start - 0.5 * config.period && k <= n as f64;
            match target {
                Some(target)
                    if in_window
                        && m.range <= config.max_range
                        && target != Target::Robot(observer) =>
                {
                    let k = (k as usize).max(1);
                    batches[k - 1].push(Observation {
                        subject: RelativeSubject { observer, target },
                        value: DVector::from_vec(vec![m.range, wrap_angle(m.bearing)]),
                        noise: noise.clone(),
                    });
                }
                _ => dropped += 1,
            }
        }
    }
    let steps = batches
        .into_iter()
        .enumerate()
        .map(|(k, entries)| FilterStep {
            input: inputs.iter().map(|u| u[k]).collect(),
            batch: MeasurementBatch {
                timestamp: grid(k + 1),
                entries,
            },
        })
        .collect();
    Ok(ReplayLog {
        start,
        period: config.period,
        robots,
        initial,
        steps,
        truth,
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotRmse {
    pub subject: u32,
    /// Root mean square position error over the replay, meters.
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayResult {
    pub variant: Variant,
    pub robots: Vec<RobotRmse>,
    pub steps: usize,
    pub kernel: KernelReport,
    pub information: InformationReport,
}

impl ReplayResult {
    /// Mean over robots of the per-robot RMSE.
    pub fn mean_rmse(&self) -> f64 {
        crate::metrics::mean(&self.robots.iter().map(|r| r.rmse).collect::<Vec<_>>())
    }
}

pub fn initial_belief(log: &ReplayLog, config: &ReplayConfig) -> Belief<MultiState2> {
    let mut diag = Vec::with_capacity(3 * log.initial.len());
    for _ in &log.initial {
        diag.extend([
            config.initial_std_theta.powi(2),
            config.initial_std_position.powi(2),
            config.initial_std_position.powi(2),
        ]);
    }
    Belief::new(
        MultiState2::new(log.initial.clone()),
        DMatrix::from_diagonal(&DVector::from_vec(diag)),
    )
}

pub fn replay_log(log: &ReplayLog, config: &ReplayConfig, variant: Variant) -> Result<ReplayResult> {
    let model = MultiRobotModel::new(variant, config.odometry_noise());
    let initial = initial_belief(log, config);
    let options = UpdateOptions {
        gate_probability: config.gate_probability,
        ..UpdateOptions::default()
    };
    let mut sq = vec![0.0; log.robots.len()];
    let mut kernel = KernelAudit::new(crate::sim::KERNEL_TOLERANCE);
    let mut info = InformationAudit::new(
        &model.unobservable_directions(&initial.estimate),
        &initial.covariance,
        crate::sim::INFORMATION_TOLERANCE,
    )?;
    run_filter_with(&model, &initial, &log.steps, &options, |k, out| {
        for (i, truth) in log.truth[k].iter().enumerate() {
            sq[i] += (out.posterior.estimate.robots[i].position - truth.position).norm_squared();
        }
        kernel.push(&out.record);
        info.push(&out.record, &out.prior.covariance, &out.posterior.covariance)
    })
    .map_err(|e| match e {
        Error::AtStep { step, source } => Error::AtTime {
            time: log.start + (step + 1) as f64 * log.period,
            source,
        },
        e => e,
    })?;
    let n = log.steps.len().max(1) as f64;
    Ok(ReplayResult {
        variant,
        robots: log
            .robots
            .iter()
            .zip(&sq)
            .map(|(s, e)| RobotRmse {
                subject: *s,
                rmse: (e / n).sqrt(),
            })
            .collect(),
        steps: log.steps.len(),
        kernel: kernel.finish(),
        information: info.finish(),
    })
}

pub fn replay(bundle: &DatasetBundle, config: &ReplayConfig, variant: Variant) -> Result<ReplayResult> {
    replay_log(&prepare_replay(bundle, config)?, config, variant)
}

/// Parameters of the synthetic MRCLAM-style fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureConfig {
    pub robots: usize,
    pub landmarks: usize,
    pub duration: f64,
    /// The arena is `[-half_width, half_width] x [-half_height, half_height]`.
    pub half_width: f64,
    pub half_height: f64,
    pub odometry_rate: f64,
    pub groundtruth_rate: f64,
    pub measurement_rate: f64,
    /// Velocity noise std of each logged sample, as a fraction of the
    /// commanded velocity.
    pub odometry_fraction: f64,
    /// Std of the gap between commanded and executed velocity, as a fraction
    /// of the command, drawn once per command segment.
    pub slip_fraction: f64,
    /// Bound on commanded turn rate, rad/s.
    pub max_turn_rate: f64,
    pub range_std: f64,
    pub bearing_std: f64,
    pub max_range: f64,
    /// Half field of view of the camera, rad.
    pub half_fov: f64,
    /// Periodic camera outages, staggered across robots.
    pub outage: Option<Outage>,
    pub start_time: f64,
    pub seed: u64,
}

/// The camera is blind for `duration` seconds out of every `period`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outage {
    pub period: f64,
    pub duration: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            robots: 3,
            landmarks: 15,
            duration: 600.0,
            half_width: 6.0,
            half_height: 3.0,
            odometry_rate: 67.0,
            groundtruth_rate: 100.0,
            measurement_rate: 5.0,
            odometry_fraction: 0.2,
            slip_fraction: 0.2,
            max_turn_rate: 0.4,
            range_std: 0.5,
            bearing_std: 3f64.to_radians(),
            max_range: 5.0,
            half_fov: 60f64.to_radians(),
            outage: None,
            start_time: 1_248_272_272.0,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    /// Noise-free variant of this fixture.
    pub fn noiseless(&self) -> Self {
        Self {
            odometry_fraction: 0.0,
            slip_fraction: 0.0,
            range_std: 0.0,
            bearing_std: 0.0,
            ..self.clone()
        }
    }
}

/// Odometry samples per command segment; commands change on odometry
/// timestamps so the logged velocities hold exactly.
fn segment_samples(cfg: &FixtureConfig) -> usize {
    ((0.5 * cfg.odometry_rate).round() as usize).max(1)
}

/// Number of datasets in the synthetic suite.
pub const SUITE_SIZE: u64 = 9;

/// The synthetic suite: `SUITE_SIZE` fixtures differing only in seed, named
/// `synthetic1`, `synthetic2`, ...
pub fn synthetic_suite() -> Vec<(String, FixtureConfig)> {
    (1..=SUITE_SIZE)
        .map(|seed| {
            (
                format!("synthetic{seed}"),
                FixtureConfig {
                    seed,
                    ..FixtureConfig::default()
                },
            )
        })
        .collect()
}

/// Turn-rate slip is relative to at least this rate, rad/s.
const SLIP_FLOOR: f64 = 0.05;

fn segment(cfg: &FixtureConfig) -> f64 {
    segment_samples(cfg) as f64 / cfg.odometry_rate
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

/// Motion of one robot: the logged commands, the executed ones (commands
/// plus slip) and the executed pose at the end of every segment.
struct Trajectory {
    start: RobotPose2,
    logged: Vec<(f64, f64)>,
    executed: Vec<(f64, f64)>,
    checkpoints: Vec<RobotPose2>,
}

/// Forward speed within the dataset's range; turn rate wanders, steering back
/// into the arena near its walls.
fn drive(cfg: &FixtureConfig, rng: &mut ChaCha8Rng, start: RobotPose2) -> Trajectory {
    let seg = segment(cfg);
    let n = (cfg.duration / seg).ceil() as usize + 1;
    let mut pose = start;
    let mut omega = 0.0;
    let mut t = Trajectory {
        start,
        logged: Vec::with_capacity(n),
        executed: Vec::with_capacity(n),
        checkpoints: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let v = rng.random_range(0.08..0.16);
        let ahead = pose.position + Rotation2::new(pose.theta).rotate(&Vector2::new(1.0, 0.0));
        if ahead.x.abs() > cfg.half_width - 0.5 || ahead.y.abs() > cfg.half_height - 0.5 {
            let to_center = wrap_angle((-pose.position.y).atan2(-pose.position.x) - pose.theta);
            omega = (to_center / (4.0 * seg)).clamp(-cfg.max_turn_rate, cfg.max_turn_rate);
        } else {
            let kick = 0.375 * cfg.max_turn_rate;
            omega = (0.8 * omega + rng.random_range(-kick..kick))
                .clamp(-cfg.max_turn_rate, cfg.max_turn_rate);
        }
        let executed = (
            v * (1.0 + normal(rng, cfg.slip_fraction)),
            omega + normal(rng, cfg.slip_fraction * omega.abs().max(SLIP_FLOOR)),
        );
        let step = constant_twist(executed.0, executed.1, seg);
        pose = RobotPose2::new(
            pose.theta + step.omega,
            pose.position + Rotation2::new(pose.theta).rotate(&step.translation),
        );
        t.logged.push((v, omega));
        t.executed.push(executed);
        t.checkpoints.push(pose);
    }
    t
}

impl Trajectory {
    /// Exact pose `t` seconds after the start.
    fn pose(&self, segment: f64, t: f64) -> RobotPose2 {
        let seg = ((t / segment).floor() as usize).min(self.executed.len() - 1);
        let base = if seg == 0 { &self.start } else { &self.checkpoints[seg - 1] };
        let (v, w) = self.executed[seg];
        let d = constant_twist(v, w, t - seg as f64 * segment);
        RobotPose2::new(
            base.theta + d.omega,
            base.position + Rotation2::new(base.theta).rotate(&d.translation),
        )
    }
}

/// Generates a deterministic MRCLAM-style dataset. Robots are subjects
/// `1..=robots`, landmarks follow.
pub fn synthetic_fixture(cfg: &FixtureConfig) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.robots as u32;

    // Landmarks on a jittered grid covering the arena.
    let cols = (cfg.landmarks as f64 * cfg.half_width / cfg.half_height).sqrt().ceil().max(1.0) as usize;
    let rows = cfg.landmarks.div_ceil(cols);
    let landmarks: Vec<LandmarkTruth> = (0..cfg.landmarks)
        .map(|i| {
            let (c, r) = (i % cols, i / cols);
            let x = -cfg.half_width + (c as f64 + 0.5) * 2.0 * cfg.half_width / cols as f64;
            let y = -cfg.half_height + (r as f64 + 0.5) * 2.0 * cfg.half_height / rows as f64;
            LandmarkTruth {
                subject: m + 1 + i as u32,
                x: x + rng.random_range(-0.3..0.3),
                y: y + rng.random_range(-0.3..0.3),
                std_x: 0.001,
                std_y: 0.001,
            }
        })
        .collect();

    let mut barcodes = IndexMap::new();
    for s in 1..=m + cfg.landmarks as u32 {
        barcodes.insert(5 + 9 * (s - 1), s);
    }
    let barcode_of: BTreeMap<u32, u32> = barcodes.iter().map(|(b, s)| (*s, *b)).collect();

    let mut trajectories = Vec::new();
    for i in 0..cfg.robots {
        let start = RobotPose2::new(
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            Vector2::new(
                -cfg.half_width * 0.5 + cfg.half_width * i as f64 / cfg.robots.max(1) as f64,
                rng.random_range(-cfg.half_height * 0.5..cfg.half_height * 0.5),
            ),
        );
        trajectories.push(drive(cfg, &mut rng, start));
    }
    let pose = |i: usize, t: f64| trajectories[i].pose(segment(cfg), t);

    let mut robots = Vec::with_capacity(cfg.robots);
    for i in 0..cfg.robots {
        let subject = i as u32 + 1;
        let groundtruth = (0..=(cfg.duration * cfg.groundtruth_rate).round() as usize)
            .map(|k| {
                let t = k as f64 / cfg.groundtruth_rate;
                let p = pose(i, t);
                PoseRecord {
                    time: cfg.start_time + t,
                    x: p.position.x,
                    y: p.position.y,
                    theta: p.theta,
                }
            })
            .collect();

        let odometry = (0..(cfg.duration * cfg.odometry_rate) as usize)
            .map(|k| {
                let t = k as f64 / cfg.odometry_rate;
                let logged = &trajectories[i].logged;
                let (v, w) = logged[(k / segment_samples(cfg)).min(logged.len() - 1)];
                OdometryRecord {
                    time: cfg.start_time + t,
                    v: v + normal(&mut rng, cfg.odometry_fraction * v.abs()),
                    omega: w + normal(&mut rng, cfg.odometry_fraction * w.abs()),
                }
            })
            .collect();

        let mut measurements = Vec::new();
        // Camera frames are staggered across robots on a 20 ms clock.
        let offset = ((i as f64 + 0.5) / (cfg.robots as f64 * cfg.measurement_rate) / 0.02).round() * 0.02;
        for k in 0..(cfg.duration * cfg.measurement_rate) as usize {
            let t = offset + k as f64 / cfg.measurement_rate;
            if let Some(o) = &cfg.outage {
                let phase = (t + o.period * i as f64 / cfg.robots as f64) % o.period;
                if phase >= o.period - o.duration {
                    continue;
                }
            }
            let me = pose(i, t);
            let rot = Rotation2::new(me.theta);
            let mut seen: Vec<(u32, Vector2<f64>)> = landmarks
                .iter()
                .map(|l| (l.subject, Vector2::new(l.x, l.y)))
                .collect();
            seen.extend(
                (0..cfg.robots)
                    .filter(|j| *j != i)
                    .map(|j| (j as u32 + 1, pose(j, t).position)),
            );
            for (s, p) in seen {
                let q = rot.inverse().rotate(&(p - me.position));
                let (range, bearing) = (q.norm(), q.y.atan2(q.x));
                if range > cfg.max_range || bearing.abs() > cfg.half_fov {
                    continue;
                }
                measurements.push(MeasurementRecord {
                    time: cfg.start_time + t,
                    barcode: barcode_of[&s],
                    range: (range + normal(&mut rng, cfg.range_std)).max(0.0),
                    bearing: wrap_angle(bearing + normal(&mut rng, cfg.bearing_std)),
                });
            }
        }
        robots.push(RobotLog {
            subject,
            odometry,
            measurements,
            groundtruth,
        });
    }
    DatasetBundle {
        robots,
        landmarks,
        barcodes,
        skipped: SkipReport::default(),
    }
}
