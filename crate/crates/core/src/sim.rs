//! Synthetic planar SLAM worlds and the Monte-Carlo harness.
//!
//! A robot drives circles at constant speed and turn rate through a ring of
//! landmarks, measuring odometry and the range and bearing of every landmark
//! within sensor range. Each run draws fresh noise from a seed derived from
//! the run index; every filter of a run consumes the same data.

use indexmap::IndexMap;
use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_filter_with, Belief, FilterStep, MeasurementBatch, Observation, UpdateOptions};
use crate::metrics::{mean, nees, InformationAudit, InformationReport, KernelAudit, KernelReport};
use crate::lie::{exp_so3, Rotation3};
use crate::slam3d::{observe3, OdometryInput3, OdometryNoise3, Slam3Model, SlamState3};
use crate::slam2d::{
    dynamics2, observe2, LandmarkId, OdometryInput2, OdometryNoise, Slam2Model, SlamState2,
};
use crate::{ErrorStateModel, Variant};

/// Stream of the world generator, kept apart from the per-run noise streams.
const WORLD_STREAM: u64 = 1 << 32;

/// Filters never assume less noise than this, so innovation covariances stay
/// invertible even when the data is noiseless.
pub const MIN_FILTER_STD: f64 = 1e-6;

pub const KERNEL_TOLERANCE: f64 = 1e-9;
pub const INFORMATION_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_loops: usize,
    pub n_landmarks: usize,
    /// Radius of the driven circle, meters.
    pub radius: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// Turn rate, rad/s.
    pub angular_rate: f64,
    pub dt: f64,
    pub max_range: f64,
    /// Landmark ring radius around the circle's center, meters.
    pub landmark_radius: f64,
    /// Landmark distances to the center are jittered uniformly by this much.
    pub landmark_jitter: f64,
    pub sigma_omega: f64,
    pub sigma_p: f64,
    pub range_std: f64,
    pub bearing_std: f64,
    /// Initial heading and position uncertainty.
    pub initial_std_theta: f64,
    pub initial_std_position: f64,
    pub n_runs: usize,
    pub base_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let steps_per_loop = 43.0;
        let dt = 1.0;
        let radius = 7.0;
        let angular_rate = 2.0 * std::f64::consts::PI / (steps_per_loop * dt);
        Self {
            n_loops: 7,
            n_landmarks: 20,
            radius,
            speed: radius * angular_rate,
            angular_rate,
            dt,
            max_range: 5.0,
            landmark_radius: radius,
            landmark_jitter: 1.5,
            sigma_omega: 0.01,
            sigma_p: 0.05,
            range_std: 0.1,
            bearing_std: 1f64.to_radians(),
            initial_std_theta: 0.07,
            initial_std_position: 0.01,
            n_runs: 100,
            base_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_loops", self.n_loops as f64),
            ("n_landmarks", self.n_landmarks as f64),
            ("radius", self.radius),
            ("speed", self.speed),
            ("angular_rate", self.angular_rate),
            ("dt", self.dt),
            ("max_range", self.max_range),
            ("landmark_radius", self.landmark_radius),
            ("n_runs", self.n_runs as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("sim.{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("landmark_jitter", self.landmark_jitter),
            ("sigma_omega", self.sigma_omega),
            ("sigma_p", self.sigma_p),
            ("range_std", self.range_std),
            ("bearing_std", self.bearing_std),
            ("initial_std_theta", self.initial_std_theta),
            ("initial_std_position", self.initial_std_position),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("sim.{name} must be non-negative, got {v}")));
            }
        }
        if self.dt * self.angular_rate >= std::f64::consts::PI {
            return Err(Error::Config(format!(
                "sim.dt * sim.angular_rate must be below pi, got {}",
                self.dt * self.angular_rate
            )));
        }
        let turn_radius = self.speed / self.angular_rate;
        if (turn_radius - self.radius).abs() > 1e-6 * self.radius {
            return Err(Error::Config(format!(
                "sim.speed / sim.angular_rate is {turn_radius} but sim.radius is {}",
                self.radius
            )));
        }
        if self.landmark_jitter >= self.landmark_radius {
            return Err(Error::Config(
                "sim.landmark_jitter must be smaller than sim.landmark_radius".to_string(),
            ));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        let per_loop = 2.0 * std::f64::consts::PI / (self.angular_rate * self.dt);
        (self.n_loops as f64 * per_loop).round() as usize
    }

    pub fn odometry_noise(&self) -> OdometryNoise {
        OdometryNoise::Constant {
            sigma_omega: self.sigma_omega.max(MIN_FILTER_STD),
            sigma_p: self.sigma_p.max(MIN_FILTER_STD),
        }
    }

    pub fn measurement_noise(&self) -> Matrix2<f64> {
        let r = self.range_std.max(MIN_FILTER_STD);
        let b = self.bearing_std.max(MIN_FILTER_STD);
        Matrix2::new(r * r, 0.0, 0.0, b * b)
    }

    pub fn initial_covariance(&self) -> DMatrix<f64> {
        let t = self.initial_std_theta.max(MIN_FILTER_STD);
        let p = self.initial_std_position.max(MIN_FILTER_STD);
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![t * t, p * p, p * p]))
    }
}

/// Noiseless trajectory, inputs and map of one world.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthLog {
    pub dt: f64,
    /// `poses[0]` is the start; `poses[k + 1]` follows `inputs[k]`.
    pub poses: Vec<SlamState2>,
    pub inputs: Vec<OdometryInput2>,
    pub landmarks: IndexMap<LandmarkId, Vector2<f64>>,
}

impl GroundTruthLog {
    pub fn n_steps(&self) -> usize {
        self.inputs.len()
    }

    /// Landmarks within `max_range` of pose `k`.
    pub fn visible(&self, k: usize, max_range: f64) -> Vec<LandmarkId> {
        let p = &self.poses[k].position;
        self.landmarks
            .iter()
            .filter(|(_, l)| (*l - p).norm() <= max_range)
            .map(|(id, _)| *id)
            .collect()
    }

    /// First step at which landmark 0 is seen again after having left the
    /// sensor's range.
    pub fn first_loop_closure(&self, max_range: f64) -> Option<usize> {
        let id = *self.landmarks.keys().next()?;
        let mut seen = false;
        let mut lost = false;
        for k in 1..self.poses.len() {
            let v = self.visible(k, max_range).contains(&id);
            if v && lost {
                return Some(k - 1);
            }
            if v {
                seen = true;
            } else if seen {
                lost = true;
            }
        }
        None
    }
}

/// Constant-twist circles through a jittered ring of landmarks. The circle
/// starts at the origin heading along x, with its center at `(0, radius)`.
pub fn make_world(config: &SimConfig) -> Result<GroundTruthLog> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);
    rng.set_stream(WORLD_STREAM);

    let center = Vector2::new(0.0, config.radius);
    let landmarks = (0..config.n_landmarks)
        .map(|i| {
            let angle = -std::f64::consts::FRAC_PI_2
                + 2.0 * std::f64::consts::PI * i as f64 / config.n_landmarks as f64;
            let jitter = if config.landmark_jitter > 0.0 {
                rng.random_range(-config.landmark_jitter..config.landmark_jitter)
            } else {
                0.0
            };
            let r = config.landmark_radius + jitter;
            (i as LandmarkId, center + Vector2::new(angle.cos(), angle.sin()) * r)
        })
        .collect();

    let phi = config.angular_rate * config.dt;
    let turn_radius = config.speed / config.angular_rate;
    let chord = Vector2::new(turn_radius * phi.sin(), turn_radius * (1.0 - phi.cos()));
    let input = OdometryInput2::new(phi, chord);
    let n = config.n_steps();
    let mut poses = Vec::with_capacity(n + 1);
    poses.push(SlamState2::new(0.0, Vector2::zeros()));
    for k in 0..n {
        poses.push(dynamics2(&poses[k], &input, &Vector3::zeros()));
    }
    Ok(GroundTruthLog {
        dt: config.dt,
        poses,
        inputs: vec![input; n],
        landmarks,
    })
}

/// Noisy data of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimRun {
    pub run_index: usize,
    pub initial: Belief<SlamState2>,
    pub log: Vec<FilterStep<OdometryInput2, LandmarkId>>,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

pub fn run_seed(config: &SimConfig, run_index: usize) -> u64 {
    config.base_seed.wrapping_add(run_index as u64)
}

/// Draws noisy odometry, measurements and an initial estimate for one run.
pub fn simulate_run(world: &GroundTruthLog, config: &SimConfig, run_index: usize) -> SimRun {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(config, run_index));
    let start = &world.poses[0];
    let initial_estimate = SlamState2::new(
        start.theta + normal(&mut rng, config.initial_std_theta),
        start.position
            + Vector2::new(
                normal(&mut rng, config.initial_std_position),
                normal(&mut rng, config.initial_std_position),
            ),
    );
    let noise = config.measurement_noise();
    let noise = DMatrix::from_column_slice(2, 2, noise.as_slice());

    let mut log = Vec::with_capacity(world.n_steps());
    for (k, u) in world.inputs.iter().enumerate() {
        let measured = OdometryInput2::new(
            u.omega + normal(&mut rng, config.sigma_omega),
            u.translation
                + Vector2::new(
                    normal(&mut rng, config.sigma_p),
                    normal(&mut rng, config.sigma_p),
                ),
        );
        let pose = &world.poses[k + 1];
        let mut truth = pose.clone();
        truth.landmarks = world.landmarks.clone();
        let mut entries = Vec::new();
        for id in world.visible(k + 1, config.max_range) {
            let Ok(z) = observe2(&truth, id) else { continue };
            let mut value = z.to_vector();
            value[0] += normal(&mut rng, config.range_std);
            value[1] = crate::lie::wrap_angle(value[1] + normal(&mut rng, config.bearing_std));
            entries.push(Observation {
                subject: id,
                value,
                noise: noise.clone(),
            });
        }
        log.push(FilterStep {
            input: measured,
            batch: MeasurementBatch {
                timestamp: (k + 1) as f64 * world.dt,
                entries,
            },
        });
    }
    SimRun {
        run_index,
        initial: Belief::new(initial_estimate, config.initial_covariance()),
        log,
    }
}

/// Per-step metrics of one filter on one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSeries {
    /// Pose NEES normalized by the pose dimension, in the filter's own error.
    pub nees: Vec<f64>,
    pub position_error: Vec<f64>,
    /// Trace of the robot-position covariance block.
    pub position_variance: Vec<f64>,
    pub kernel: KernelReport,
    pub information: InformationReport,
}

/// Runs one filter over one run's data, scoring it against ground truth.
pub fn score_run(
    variant: Variant,
    config: &SimConfig,
    world: &GroundTruthLog,
    run: &SimRun,
) -> Result<RunSeries> {
    let model = Slam2Model::new(variant, config.odometry_noise());
    let n = run.log.len();
    let mut series = RunSeries {
        nees: Vec::with_capacity(n),
        position_error: Vec::with_capacity(n),
        position_variance: Vec::with_capacity(n),
        kernel: KernelReport::default(),
        information: InformationReport::default(),
    };
    let mut kernel = KernelAudit::new(KERNEL_TOLERANCE);
    let mut info = InformationAudit::new(
        &model.unobservable_directions(&run.initial.estimate),
        &run.initial.covariance,
        INFORMATION_TOLERANCE,
    )?;
    run_filter_with(&model, &run.initial, &run.log, &UpdateOptions::default(), |k, out| {
        let truth = &world.poses[k + 1];
        let est = &out.posterior.estimate;
        let e = model.error(
            &SlamState2::new(truth.theta, truth.position),
            &SlamState2::new(est.theta, est.position),
        )?;
        let p = &out.posterior.covariance;
        series.nees.push(nees(&e, &p.view((0, 0), (3, 3)).into_owned())?.normalized);
        series.position_error.push((est.position - truth.position).norm());
        series.position_variance.push(p[(1, 1)] + p[(2, 2)]);
        kernel.push(&out.record);
        info.push(&out.record, &out.prior.covariance, &out.posterior.covariance)
    })?;
    series.kernel = kernel.finish();
    series.information = info.finish();
    Ok(series)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub numerical: bool,
    pub message: String,
}

/// Aggregate of one filter over a campaign.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSummary {
    pub variant: Variant,
    pub successful_runs: usize,
    pub failures: Vec<RunFailure>,
    pub mean_nees: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Three times the root mean filter-reported position standard deviation.
    pub sigma3: Vec<f64>,
    pub kernel_max_residual: f64,
    pub kernel_violations: usize,
    pub composed_kernel_residual: f64,
    pub info_violations: usize,
    pub info_max_growth: f64,
}

impl FilterSummary {
    pub fn overall_nees(&self) -> f64 {
        mean(&self.mean_nees)
    }

    pub fn overall_rmse(&self) -> f64 {
        mean(&self.rmse)
    }

    /// Mean NEES over the steps from `step` on.
    pub fn nees_from(&self, step: usize) -> f64 {
        mean(self.mean_nees.get(step..).unwrap_or(&[]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub config: SimConfig,
    pub loop_closure: Option<usize>,
    pub filters: Vec<FilterSummary>,
}

impl Campaign {
    pub fn filter(&self, variant: Variant) -> Option<&FilterSummary> {
        self.filters.iter().find(|f| f.variant == variant)
    }
}

fn summarize(variant: Variant, steps: usize, results: &[(usize, &Result<RunSeries>)]) -> FilterSummary {
    let mut nees = vec![0.0; steps];
    let mut err2 = vec![0.0; steps];
    let mut var = vec![0.0; steps];
    let mut summary = FilterSummary {
        variant,
        successful_runs: 0,
        failures: Vec::new(),
        mean_nees: Vec::new(),
        rmse: Vec::new(),
        sigma3: Vec::new(),
        kernel_max_residual: 0.0,
        kernel_violations: 0,
        composed_kernel_residual: 0.0,
        info_violations: 0,
        info_max_growth: 0.0,
    };
    for (run, result) in results {
        match result {
            Ok(s) => {
                summary.successful_runs += 1;
                for k in 0..steps {
                    nees[k] += s.nees[k];
                    err2[k] += s.position_error[k] * s.position_error[k];
                    var[k] += s.position_variance[k];
                }
                summary.kernel_max_residual = summary.kernel_max_residual.max(s.kernel.max_residual());
                summary.kernel_violations += s.kernel.violations;
                summary.composed_kernel_residual =
                    summary.composed_kernel_residual.max(s.kernel.composed_residual);
                summary.info_violations += s.information.violations;
                summary.info_max_growth = summary.info_max_growth.max(s.information.max_growth);
            }
            Err(e) => summary.failures.push(RunFailure {
                run: *run,
                numerical: e.is_numerical(),
                message: e.to_string(),
            }),
        }
    }
    let n = summary.successful_runs.max(1) as f64;
    summary.mean_nees = nees.iter().map(|v| v / n).collect();
    summary.rmse = err2.iter().map(|v| (v / n).sqrt()).collect();
    summary.sigma3 = var.iter().map(|v| 3.0 * (v / n).sqrt()).collect();
    summary
}

/// Runs every filter on `config.n_runs` paired runs, in parallel, and
/// aggregates in run order.
pub fn run_monte_carlo(config: &SimConfig, filters: &[Variant]) -> Result<Campaign> {
    if filters.is_empty() {
        return Err(Error::Config("at least one filter is required".to_string()));
    }
    let world = make_world(config)?;
    let steps = world.n_steps();
    let per_run: Vec<Vec<Result<RunSeries>>> = (0..config.n_runs)
        .into_par_iter()
        .map(|i| {
            let run = simulate_run(&world, config, i);
            filters
                .iter()
                .map(|v| score_run(*v, config, &world, &run).map_err(|e| e.in_run(i)))
                .collect()
        })
        .collect();

    let mut summaries = Vec::with_capacity(filters.len());
    for (f, variant) in filters.iter().enumerate() {
        let results: Vec<_> = per_run
            .iter()
            .enumerate()
            .map(|(i, r)| (i, &r[f]))
            .collect();
        let s = summarize(*variant, steps, &results);
        if !s.failures.is_empty() {
            log::warn!("{variant}: {} of {} runs failed", s.failures.len(), config.n_runs);
        }
        summaries.push(s);
    }
    Ok(Campaign {
        config: config.clone(),
        loop_closure: world.first_loop_closure(config.max_range),
        filters: summaries,
    })
}

/// A short monocular run in 3D: a camera circling a ring of landmarks at
/// mixed heights, looking along its direction of travel. The landmarks start
/// in the state since a single projection cannot initialize them.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRun {
    pub initial: Belief<SlamState3>,
    pub log: Vec<FilterStep<OdometryInput3, LandmarkId>>,
    pub truth: Vec<SlamState3>,
    pub noise: OdometryNoise3,
}

pub const CAMERA_STEPS_PER_LOOP: usize = 40;
const CAMERA_RADIUS: f64 = 6.0;
const CAMERA_LANDMARKS: u32 = 16;
const CAMERA_PIXEL_STD: f64 = 0.01;
const CAMERA_MAX_RANGE: f64 = 8.0;
const CAMERA_HALF_FOV: f64 = 1.0;

/// Body axes of a camera looking along world x: z forward, x right, y down.
fn camera_mount() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

/// Simulates `loops` loops of the camera world with noise drawn from `seed`.
pub fn simulate_camera_run(loops: usize, seed: u64) -> Result<CameraRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = OdometryNoise3 {
        sigma_omega: 0.01,
        sigma_p: 0.05,
    };
    let rate = std::f64::consts::TAU / CAMERA_STEPS_PER_LOOP as f64;
    let mount = camera_mount();
    let pose_at = |k: usize| -> Result<(Rotation3, Vector3<f64>)> {
        let a = rate * k as f64;
        let yaw = Rotation3::from_matrix(
            *exp_so3(&Vector3::new(0.0, 0.0, a + std::f64::consts::FRAC_PI_2))?.matrix() * mount,
        )?;
        let p = Vector3::new(CAMERA_RADIUS * a.cos(), CAMERA_RADIUS * a.sin(), 0.3 * (2.0 * a).sin());
        Ok((yaw, p))
    };
    let landmarks: Vec<(LandmarkId, Vector3<f64>)> = (0..CAMERA_LANDMARKS)
        .map(|i| {
            let a = std::f64::consts::TAU * (i as f64 + 0.5) / CAMERA_LANDMARKS as f64;
            let r = CAMERA_RADIUS + rng.random_range(-2.0..2.0);
            (i, Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(-1.5..1.5)))
        })
        .collect();

    let steps = loops * CAMERA_STEPS_PER_LOOP;
    let (r0, p0) = pose_at(0)?;
    let mut truth = vec![SlamState3::new(r0, p0, landmarks.iter().copied())];
    let pixel = DMatrix::from_diagonal_element(2, 2, CAMERA_PIXEL_STD * CAMERA_PIXEL_STD);
    let mut log = Vec::with_capacity(steps);
    for k in 0..steps {
        let (ra, pa) = pose_at(k)?;
        let (rb, pb) = pose_at(k + 1)?;
        let rel = ra.inverse().compose(&rb);
        let omega = crate::slam3d::log_so3(&rel)?;
        let translation = ra.matrix().transpose() * (pb - pa);
        let state = SlamState3::new(rb, pb, landmarks.iter().copied());
        let mut entries = Vec::new();
        for (id, l) in &landmarks {
            let q = rb.matrix().transpose() * (l - pb);
            if q.norm() > CAMERA_MAX_RANGE {
                continue;
            }
            let Ok(z) = observe3(&state, *id) else { continue };
            if z.u.abs() > CAMERA_HALF_FOV || z.v.abs() > CAMERA_HALF_FOV {
                continue;
            }
            let mut value = z.to_vector();
            value[0] += normal(&mut rng, CAMERA_PIXEL_STD);
            value[1] += normal(&mut rng, CAMERA_PIXEL_STD);
            entries.push(Observation {
                subject: *id,
                value,
                noise: pixel.clone(),
            });
        }
        let w = |rng: &mut ChaCha8Rng, s: f64| Vector3::new(normal(rng, s), normal(rng, s), normal(rng, s));
        let input = OdometryInput3::new(
            omega + w(&mut rng, noise.sigma_omega),
            translation + w(&mut rng, noise.sigma_p),
        );
        log.push(FilterStep {
            input,
            batch: MeasurementBatch {
                timestamp: (k + 1) as f64,
                entries,
            },
        });
        truth.push(state);
    }

    let estimate = SlamState3::new(
        r0,
        p0,
        landmarks.iter().map(|(id, l)| {
            (*id, l + Vector3::new(normal(&mut rng, 0.3), normal(&mut rng, 0.3), normal(&mut rng, 0.3)))
        }),
    );
    let mut diag = vec![1e-4; 3];
    diag.extend([1e-4; 3]);
    diag.extend(std::iter::repeat_n(0.09, 3 * landmarks.len()));
    Ok(CameraRun {
        initial: Belief::new(estimate, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))),
        log,
        truth,
        noise,
    })
}

/// Kernel and information audits of one filter over a 3D camera run.
pub fn audit_camera_run(variant: Variant, run: &CameraRun) -> Result<(KernelReport, InformationReport)> {
    let model = Slam3Model::new(variant, run.noise);
    audit_model(&model, &run.initial, &run.log)
}

/// Runs `model` over `log`, auditing every step.
pub fn audit_model<M: ErrorStateModel>(
    model: &M,
    initial: &Belief<M::State>,
    log: &[FilterStep<M::Input, M::Subject>],
) -> Result<(KernelReport, InformationReport)> {
    let mut kernel = KernelAudit::new(KERNEL_TOLERANCE);
    let mut info = InformationAudit::new(
        &model.unobservable_directions(&initial.estimate),
        &initial.covariance,
        INFORMATION_TOLERANCE,
    )?;
    run_filter_with(model, initial, log, &UpdateOptions::default(), |_, out| {
        kernel.push(&out.record);
        info.push(&out.record, &out.prior.covariance, &out.posterior.covariance)
    })?;
    Ok((kernel.finish(), info.finish()))
}
