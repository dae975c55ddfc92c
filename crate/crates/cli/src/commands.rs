use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use invekf::config::Config;
use invekf::fault::CorruptedHeading;
use invekf::filter::{run_filter_with, Belief, FilterStep, UpdateOptions};
use invekf::metrics::{nees, InformationReport, KernelReport};
use invekf::multirobot::MultiRobotModel;
use invekf::sim::{
    audit_model, make_world, run_monte_carlo, simulate_camera_run, simulate_run, Campaign,
};
use invekf::slam2d::{Slam2Model, SlamState2};
use invekf::slam3d::Slam3Model;
use invekf::utias::{
    initial_belief, load_dataset, odometry_file, prepare_replay, replay, synthetic_fixture,
    synthetic_suite, write_dataset, DatasetBundle, FixtureConfig,
};
use invekf::{ErrorStateModel, Variant};

use crate::output::{ensure_dir, num, out_dir, write_csv};
use crate::{Common, Failure};

/// Window of the multi-robot audit replay, seconds from the dataset start.
const AUDIT_WINDOW: f64 = 120.0;
const AUDIT_CAMERA_LOOPS: usize = 2;

fn load_config(c: &Common) -> Result<Config, Failure> {
    let mut config = match &c.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        config.sim.base_seed = seed;
    }
    if let Some(runs) = c.runs {
        config.sim.n_runs = runs;
    }
    if let Some(robots) = &c.robots {
        config.replay.robots = Some(robots.clone());
    }
    config.validate()?;
    let distinct: BTreeSet<_> = c.filters.iter().collect();
    if distinct.len() != c.filters.len() {
        return Err(Failure::Input("--filters lists a filter twice".to_string()));
    }
    Ok(config)
}

pub fn simulate(c: &Common) -> Result<(), Failure> {
    let config = load_config(c)?;
    let sim = &config.sim;
    let out = out_dir(&c.out)?;
    let world = make_world(sim)?;
    let run = simulate_run(&world, sim, 0);

    let mut trajectory = Vec::new();
    let mut landmarks = Vec::new();
    for &variant in &c.filters {
        let model = Slam2Model::new(variant, sim.odometry_noise());
        let mut row = |step: usize, belief: &Belief<SlamState2>| -> invekf::Result<()> {
            let truth = &world.poses[step];
            let est = &belief.estimate;
            let e = model.error(
                &SlamState2::new(truth.theta, truth.position),
                &SlamState2::new(est.theta, est.position),
            )?;
            let n = nees(&e, &belief.covariance.view((0, 0), (3, 3)).into_owned())?;
            trajectory.push(vec![
                step.to_string(),
                variant.to_string(),
                num(est.position.x),
                num(est.position.y),
                num(est.theta),
                num(truth.position.x),
                num(truth.position.y),
                num(truth.theta),
                num((est.position - truth.position).norm()),
                num(n.normalized),
            ]);
            Ok(())
        };
        row(0, &run.initial)?;
        let last = run_filter_with(&model, &run.initial, &run.log, &UpdateOptions::default(), |k, out| {
            row(k + 1, &out.posterior)
        })
        .map_err(|e| e.in_run(0))?;
        for (id, p) in &last.estimate.landmarks {
            let truth = world.landmarks[id];
            landmarks.push(vec![
                variant.to_string(),
                id.to_string(),
                num(p.x),
                num(p.y),
                num(truth.x),
                num(truth.y),
            ]);
        }
    }
    write_csv(
        &out.join("trajectory.csv"),
        &["step", "filter", "x", "y", "theta", "true_x", "true_y", "true_theta", "position_error", "nees"],
        trajectory,
    )?;
    write_csv(
        &out.join("landmarks.csv"),
        &["filter", "landmark", "x", "y", "true_x", "true_y"],
        landmarks,
    )
}

pub fn benchmark(c: &Common) -> Result<(), Failure> {
    let config = load_config(c)?;
    let out = out_dir(&c.out)?;
    let campaign = run_monte_carlo(&config.sim, &c.filters)?;
    write_campaign(&campaign, &out)?;

    println!("{:<10} {:>10} {:>14} {:>10} {:>6}", "filter", "mean_nees", "nees_closure", "mean_rmse", "runs");
    for f in &campaign.filters {
        let after = campaign.loop_closure.map(|k| f.nees_from(k));
        println!(
            "{:<10} {:>10.3} {:>14} {:>10.3} {:>6}",
            f.variant.name(),
            f.overall_nees(),
            after.map_or("-".to_string(), |v| format!("{v:.3}")),
            f.overall_rmse(),
            f.successful_runs
        );
    }
    if let Some(failure) = campaign.filters.iter().flat_map(|f| &f.failures).next() {
        let total: usize = campaign.filters.iter().map(|f| f.failures.len()).sum();
        let message = format!("{total} run(s) failed; first: {}", failure.message);
        return Err(if failure.numerical {
            Failure::Numerical(message)
        } else {
            Failure::Input(message)
        });
    }
    Ok(())
}

fn write_campaign(campaign: &Campaign, out: &Path) -> Result<(), Failure> {
    let steps = campaign.filters.first().map_or(0, |f| f.mean_nees.len());
    let mut nees_rows = Vec::new();
    let mut rmse_rows = Vec::new();
    for k in 0..steps {
        for f in &campaign.filters {
            nees_rows.push(vec![(k + 1).to_string(), f.variant.to_string(), num(f.mean_nees[k])]);
            rmse_rows.push(vec![
                (k + 1).to_string(),
                f.variant.to_string(),
                num(f.rmse[k]),
                num(f.sigma3[k]),
            ]);
        }
    }
    write_csv(&out.join("nees.csv"), &["step", "filter", "mean_nees"], nees_rows)?;
    write_csv(&out.join("rmse.csv"), &["step", "filter", "rmse", "sigma3_bound"], rmse_rows)?;
    write_csv(
        &out.join("summary.csv"),
        &["filter", "mean_nees", "mean_rmse", "mean_nees_after_closure", "runs", "failed_runs"],
        campaign.filters.iter().map(|f| {
            vec![
                f.variant.to_string(),
                num(f.overall_nees()),
                num(f.overall_rmse()),
                campaign.loop_closure.map_or(String::new(), |k| num(f.nees_from(k))),
                f.successful_runs.to_string(),
                f.failures.len().to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("audit.csv"),
        &["filter", "kernel_max_residual", "info_violation_count"],
        campaign.filters.iter().map(|f| {
            vec![
                f.variant.to_string(),
                num(f.kernel_max_residual),
                f.info_violations.to_string(),
            ]
        }),
    )
}

/// Dataset directories under `path`: `path` itself if it holds robot files,
/// otherwise its immediate subdirectories that do, by name.
fn discover(path: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let is_dataset = |p: &Path| p.join(odometry_file(1)).is_file();
    let name = |p: &Path| {
        p.file_name()
            .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
    };
    if !path.exists() {
        return Err(Failure::Input(format!("dataset path {} does not exist", path.display())));
    }
    if is_dataset(path) {
        return Ok(vec![(name(path), path.to_path_buf())]);
    }
    let entries = std::fs::read_dir(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut found: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_dataset(p))
        .map(|p| (name(&p), p))
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Failure::Input(format!(
            "{}: no {} and no dataset subdirectories",
            path.display(),
            odometry_file(1)
        )));
    }
    Ok(found)
}

fn fixtures(seed: Option<u64>) -> Vec<(String, FixtureConfig)> {
    match seed {
        Some(seed) => vec![(
            format!("synthetic{seed}"),
            FixtureConfig {
                seed,
                ..FixtureConfig::default()
            },
        )],
        None => synthetic_suite(),
    }
}

fn datasets(c: &Common) -> Result<Vec<(String, DatasetBundle)>, Failure> {
    match &c.dataset {
        Some(path) => discover(path)?
            .into_iter()
            .map(|(name, dir)| Ok((name, load_dataset(&dir)?)))
            .collect(),
        None => Ok(fixtures(c.seed)
            .into_iter()
            .map(|(name, cfg)| (name, synthetic_fixture(&cfg)))
            .collect()),
    }
}

fn with_context(name: &str, e: invekf::Error) -> Failure {
    match Failure::from(e) {
        Failure::Numerical(m) => Failure::Numerical(format!("{name}: {m}")),
        Failure::Input(m) => Failure::Input(format!("{name}: {m}")),
        f => f,
    }
}

pub fn utias(c: &Common) -> Result<(), Failure> {
    let config = load_config(c)?;
    let out = out_dir(&c.out)?;
    let mut summary = Vec::new();
    let mut totals = vec![0.0; c.filters.len()];
    let sets = datasets(c)?;
    for (name, bundle) in &sets {
        if bundle.skipped.total() > 0 {
            log::warn!("{name}: skipped {} measurements of unknown barcodes", bundle.skipped.total());
        }
        let mut rows = Vec::new();
        let mut line = vec![name.clone()];
        for (f, &variant) in c.filters.iter().enumerate() {
            let result = replay(bundle, &config.replay, variant).map_err(|e| with_context(name, e))?;
            for r in &result.robots {
                rows.push(vec![r.subject.to_string(), variant.to_string(), num(r.rmse)]);
            }
            let mean = result.mean_rmse();
            println!("{name:<14} {:<9} rmse {mean:.4} m", variant.name());
            totals[f] += mean;
            line.push(num(mean));
        }
        let dir = out.join(name);
        ensure_dir(&dir)?;
        write_csv(&dir.join("rmse_by_robot.csv"), &["robot", "filter", "rmse"], rows)?;
        summary.push(line);
    }
    let mut average = vec!["average".to_string()];
    average.extend(totals.iter().map(|t| num(t / sets.len() as f64)));
    println!("{:<14} {}", "average", average[1..].join(" "));
    summary.push(average);
    let mut header = vec!["dataset"];
    header.extend(c.filters.iter().map(|v| v.name()));
    write_csv(&out.join("summary.csv"), &header, summary)
}

pub fn fixture(c: &Common) -> Result<(), Failure> {
    let out = out_dir(&c.out)?;
    for (name, cfg) in fixtures(c.seed) {
        let dir = out.join(&name);
        write_dataset(&synthetic_fixture(&cfg), &dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

#[derive(Default)]
struct AuditRow {
    kernel: KernelReport,
    info: InformationReport,
}

impl AuditRow {
    fn merge(&mut self, (k, i): (KernelReport, InformationReport)) {
        self.kernel.steps += k.steps;
        self.kernel.violations += k.violations;
        self.kernel.max_observation_residual = self.kernel.max_observation_residual.max(k.max_observation_residual);
        self.kernel.max_transition_residual = self.kernel.max_transition_residual.max(k.max_transition_residual);
        self.kernel.composed_residual = self.kernel.composed_residual.max(k.composed_residual);
        self.info.checks += i.checks;
        self.info.violations += i.violations;
        self.info.max_growth = self.info.max_growth.max(i.max_growth);
    }
}

fn audit_one<M: ErrorStateModel>(
    model: M,
    fault: Option<f64>,
    initial: &Belief<M::State>,
    log: &[FilterStep<M::Input, M::Subject>],
) -> invekf::Result<(KernelReport, InformationReport)> {
    match fault {
        Some(offset) => audit_model(&CorruptedHeading::new(model, offset), initial, log),
        None => audit_model(&model, initial, log),
    }
}

pub fn audit(c: &Common, fault: Option<f64>) -> Result<(), Failure> {
    let config = load_config(c)?;
    let sim = &config.sim;
    let mut rows: Vec<(&str, Variant, AuditRow)> = Vec::new();

    let world = make_world(sim)?;
    let runs: Vec<_> = (0..sim.n_runs).map(|i| simulate_run(&world, sim, i)).collect();
    for &variant in &c.filters {
        let mut row = AuditRow::default();
        for run in &runs {
            let model = Slam2Model::new(variant, sim.odometry_noise());
            row.merge(audit_one(model, fault, &run.initial, &run.log).map_err(|e| e.in_run(run.run_index))?);
        }
        rows.push(("slam2d", variant, row));
    }

    let camera = simulate_camera_run(AUDIT_CAMERA_LOOPS, sim.base_seed)?;
    for &variant in &c.filters {
        let mut row = AuditRow::default();
        row.merge(audit_one(Slam3Model::new(variant, camera.noise), fault, &camera.initial, &camera.log)?);
        rows.push(("slam3d", variant, row));
    }

    let (name, bundle) = match &c.dataset {
        Some(_) => datasets(c)?.swap_remove(0),
        None => {
            let (name, cfg) = fixtures(c.seed.or(Some(1))).swap_remove(0);
            (name, synthetic_fixture(&cfg))
        }
    };
    let mut replay_config = config.replay.clone();
    replay_config.end = Some(replay_config.end.map_or(AUDIT_WINDOW, |e| e.min(AUDIT_WINDOW)));
    let log = prepare_replay(&bundle, &replay_config).map_err(|e| with_context(&name, e))?;
    let initial = initial_belief(&log, &replay_config);
    for &variant in &c.filters {
        let mut row = AuditRow::default();
        let model = MultiRobotModel::new(variant, replay_config.odometry_noise());
        row.merge(audit_one(model, fault, &initial, &log.steps).map_err(|e| with_context(&name, e))?);
        rows.push(("multirobot", variant, row));
    }

    let mut regressions = Vec::new();
    for (model, variant, row) in &rows {
        let ok = row.kernel.passed() && row.info.passed();
        let verdict = match (variant, ok) {
            (_, true) => "ok",
            (Variant::Proposed, false) => "REGRESSION",
            (Variant::Standard, false) => "violations (expected)",
        };
        println!(
            "{model:<10} {:<9} kernel max {:.3e} ({} violations) information {} violations (max growth {:.6}) {verdict}",
            variant.name(),
            row.kernel.max_residual(),
            row.kernel.violations,
            row.info.violations,
            row.info.max_growth,
        );
        if *variant == Variant::Proposed && !ok {
            regressions.push(*model);
        }
    }
    if let Some(out) = &c.out {
        ensure_dir(out)?;
        write_csv(
            &out.join("audit.csv"),
            &["model", "filter", "kernel_max_residual", "kernel_violations", "info_violation_count", "info_max_growth"],
            rows.iter().map(|(model, variant, row)| {
                vec![
                    model.to_string(),
                    variant.to_string(),
                    num(row.kernel.max_residual()),
                    row.kernel.violations.to_string(),
                    row.info.violations.to_string(),
                    num(row.info.max_growth),
                ]
            }),
        )?;
    }
    if regressions.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(format!(
            "proposed filter violates its audits on {}",
            regressions.join(", ")
        )))
    }
}
