use invekf::config::Config;
use invekf::filter::{run_filter, UpdateOptions};
use invekf::sim::{make_world, run_monte_carlo, simulate_run, SimConfig};
use invekf::slam2d::Slam2Model;
use invekf::utias::{
    load_dataset, measurement_file, replay, synthetic_fixture, write_dataset, FixtureConfig,
    ReplayConfig,
};
use invekf::{Error, Variant};

fn noiseless() -> SimConfig {
    SimConfig {
        n_loops: 2,
        n_runs: 3,
        sigma_omega: 0.0,
        sigma_p: 0.0,
        range_std: 0.0,
        bearing_std: 0.0,
        initial_std_theta: 0.0,
        initial_std_position: 0.0,
        ..SimConfig::default()
    }
}

fn short_fixture() -> FixtureConfig {
    FixtureConfig {
        duration: 40.0,
        seed: 3,
        ..FixtureConfig::default()
    }
}

#[test]
fn noiseless_campaign_tracks_the_truth() {
    let campaign = run_monte_carlo(&noiseless(), &Variant::ALL).unwrap();
    for f in &campaign.filters {
        assert!(f.failures.is_empty());
        assert!(f.rmse.iter().all(|e| *e <= 1e-6), "{}: {:e}", f.variant, f.overall_rmse());
    }
}

#[test]
fn campaigns_are_reproducible_and_seeded() {
    let config = SimConfig {
        n_loops: 1,
        n_runs: 6,
        ..SimConfig::default()
    };
    let a = run_monte_carlo(&config, &[Variant::Proposed]).unwrap();
    let b = run_monte_carlo(&config, &[Variant::Proposed]).unwrap();
    assert_eq!(a, b);
    let c = run_monte_carlo(&SimConfig { base_seed: 9, ..config }, &[Variant::Proposed]).unwrap();
    assert_ne!(a.filters[0].rmse, c.filters[0].rmse);
}

#[test]
fn out_of_order_logs_are_rejected() {
    let config = SimConfig { n_loops: 1, ..SimConfig::default() };
    let world = make_world(&config).unwrap();
    let mut run = simulate_run(&world, &config, 0);
    run.log.swap(3, 4);
    let model = Slam2Model::new(Variant::Proposed, config.odometry_noise());
    let err = run_filter(&model, &run.initial, &run.log, &UpdateOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NotTimeOrdered { index: 4 }), "{err}");
}

#[test]
fn config_file_with_dotted_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "sim.n_loops = 3\nsim.base_seed = 12\nreplay.robots = [1, 2]\n").unwrap();
    let c = Config::load(&path).unwrap();
    assert_eq!(c.sim.n_loops, 3);
    assert_eq!(c.sim.base_seed, 12);
    assert_eq!(c.replay.robots, Some(vec![1, 2]));
    assert_eq!(c.sim.n_landmarks, SimConfig::default().n_landmarks);

    std::fs::write(&path, "sim.n_runs = 0\n").unwrap();
    assert!(matches!(Config::load(&path), Err(Error::Config(_))));
    assert!(matches!(Config::load(dir.path().join("missing.toml")), Err(Error::Io { .. })));
}

#[test]
fn dataset_on_disk_replays_like_the_bundle() {
    let bundle = synthetic_fixture(&short_fixture());
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let config = ReplayConfig::default();
    for v in Variant::ALL {
        assert_eq!(replay(&bundle, &config, v).unwrap(), replay(&loaded, &config, v).unwrap());
    }
}

#[test]
fn robot_subsets_replay_only_those_robots() {
    let bundle = synthetic_fixture(&short_fixture());
    let config = ReplayConfig {
        robots: Some(vec![2]),
        ..ReplayConfig::default()
    };
    let r = replay(&bundle, &config, Variant::Proposed).unwrap();
    assert_eq!(r.robots.len(), 1);
    assert_eq!(r.robots[0].subject, 2);
}

#[test]
fn broken_datasets_name_the_problem() {
    let bundle = synthetic_fixture(&short_fixture());
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let file = dir.path().join(measurement_file(2));

    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let bad = lines.iter().rposition(|l| !l.starts_with('#')).unwrap();
    lines[bad] = "12.5 not-a-number 1.0";
    std::fs::write(&file, lines.join("\n")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::CorruptData { path, line, .. }) => {
            assert_eq!(path, file);
            assert_eq!(line, bad + 1);
        }
        other => panic!("expected corrupt data, got {other:?}"),
    }

    std::fs::remove_file(&file).unwrap();
    match load_dataset(dir.path()) {
        Err(e @ Error::Io { .. }) => assert!(e.to_string().contains(&measurement_file(2))),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}
