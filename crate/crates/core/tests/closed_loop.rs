use std::fs::File;
use std::io::{BufReader, Write};

use evasion::eval::io::{
    read_clouds, read_results_jsonl, read_step_log_csv, write_clouds, write_results_jsonl, write_step_log_csv,
};
use evasion::eval::{run_batch, run_trial, simulate, simulate_with, Pipeline, Quadrant, Variant};
use evasion::lidar_percept::LidarTracker;
use evasion::simworld::{spawn_scenario, ObstacleTruth, RobotSpec, ScenarioConfig, Trajectory, WorldState};
use evasion::{Error, RobotState, Vec3};

fn robot() -> RobotState {
    RobotState::at(Vec3::new(0.0, 0.0, 0.3), 0.0)
}

#[test]
fn passing_obstacle_never_triggers_the_reflex() {
    let cfg = ScenarioConfig::default();
    // crosses in front at a 3 m lateral offset
    let o = ObstacleTruth::moving(0, Vec3::new(4.0, 3.0, 0.3), Vec3::new(-1.5, 0.0, 0.0), 0.2, Trajectory::Linear);
    let world = WorldState::new(robot(), RobotSpec::default(), vec![o]);
    for v in [Variant::Full, Variant::NoPrediction, Variant::NoReorient, Variant::LidarOnly] {
        let r = simulate(&cfg, v, world.clone()).unwrap();
        assert!(r.success, "{v}: {r:?}");
        assert!(r.t_trig.is_none(), "{v}");
        assert!(r.log.iter().all(|s| s.beta < cfg.control.beta_trigger), "{v}");
    }
}

#[test]
fn head_on_obstacle_is_avoided() {
    let cfg = ScenarioConfig::default();
    let o = ObstacleTruth::moving(0, Vec3::new(6.0, 0.1, 0.3), Vec3::new(-3.0, 0.0, 0.0), 0.2, Trajectory::Linear);
    let world = WorldState::new(robot(), RobotSpec::default(), vec![o]);
    let r = simulate(&cfg, Variant::Full, world).unwrap();
    assert!(!r.collided, "{r:?}");
    assert!(r.d_min >= 0.0);
    let (t_trig, ttc) = (r.t_trig.unwrap(), r.ttc_at_trig.unwrap());
    assert!(t_trig < r.t_closest && ttc > 0.0);
    // normalized lead is recomputed from the logged quantities
    assert!((r.tnl.unwrap() - (r.t_closest - t_trig) / ttc).abs() < 1e-12);
}

#[test]
fn batch_is_reproducible_and_consistent() {
    let cfg = ScenarioConfig::default().with_seed(100);
    let (report, results) = run_batch(&cfg, Variant::Full, 12).unwrap();
    assert_eq!(report.n_total, 12);
    assert_eq!(report.n_success, results.iter().filter(|r| r.success).count());
    let per_quadrant: usize = Quadrant::ALL.iter().map(|q| report.quadrants[q].n_total).sum();
    assert_eq!(per_quadrant, 12);
    assert!(report.asr_ci.0 <= report.asr && report.asr <= report.asr_ci.1);
    for (k, r) in results.iter().enumerate() {
        assert_eq!(r.seed, 100 + k as u64);
        let single = run_trial(&cfg.with_seed(r.seed), Variant::Full).unwrap();
        assert_eq!(&single, r);
        assert!(!r.success || r.d_min >= 0.0);
    }
}

#[test]
fn result_files_round_trip() {
    let cfg = ScenarioConfig::default().with_seed(3);
    let results: Vec<_> = Variant::ALL.iter().map(|v| run_trial(&cfg, *v).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    write_results_jsonl(File::create(&path).unwrap(), &results).unwrap();
    let back = read_results_jsonl(BufReader::new(File::open(&path).unwrap())).unwrap();
    // the step log is not part of the JSON record
    let stripped: Vec<_> =
        results.iter().map(|r| evasion::eval::TrialResult { log: Vec::new(), ..r.clone() }).collect();
    assert_eq!(back, stripped);
}

#[test]
fn recorded_scans_replay_to_the_same_tracks() {
    let cfg = ScenarioConfig::default().with_seed(11);
    let mut pipeline = Pipeline::new(&cfg, Variant::Full).recording();
    let result = simulate_with(&cfg, &mut pipeline, spawn_scenario(&cfg).unwrap()).unwrap();
    assert_eq!(pipeline.recorded_clouds.len(), cfg.steps());

    let dir = tempfile::tempdir().unwrap();
    let clouds_path = dir.path().join("clouds.bin");
    let steps_path = dir.path().join("steps.csv");
    write_clouds(File::create(&clouds_path).unwrap(), &pipeline.recorded_clouds).unwrap();
    write_step_log_csv(File::create(&steps_path).unwrap(), &result.log).unwrap();
    let clouds = read_clouds(BufReader::new(File::open(&clouds_path).unwrap())).unwrap();
    let rows = read_step_log_csv(File::open(&steps_path).unwrap()).unwrap();
    assert_eq!(clouds.len(), rows.len());

    let mut tracker = LidarTracker::new(cfg.lidar_tracking.clone());
    for (cloud, s) in clouds.iter().zip(&result.log) {
        let robot = RobotState { velocity: s.velocity.extend(0.0), ..RobotState::at(s.position, s.yaw) };
        tracker.process(cloud, &robot).unwrap();
    }
    let live: Vec<u32> = pipeline.lidar_tracks().iter().map(|t| t.id).collect();
    let replayed: Vec<u32> = tracker.tracks().iter().map(|t| t.id).collect();
    assert_eq!(live, replayed);
    for (a, b) in pipeline.lidar_tracks().iter().zip(tracker.tracks()) {
        // coordinates were stored as f32
        assert!(a.position().distance(b.position()) < 1e-3);
    }
}

#[test]
fn config_file_and_overrides() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "seed = 9\nduration = 5.0\n[threat]\nalpha = 0.4").unwrap();
    let cfg = ScenarioConfig::load(f.path()).unwrap();
    assert_eq!((cfg.seed, cfg.duration, cfg.threat.alpha), (9, 5.0, 0.4));
    assert_eq!(cfg.threat.gamma, ScenarioConfig::default().threat.gamma);

    let tuned = cfg.with_override("control.weights.safe=2.5").unwrap();
    assert_eq!(tuned.control.weights.safe, 2.5);
    assert_ne!(tuned.digest(), cfg.digest());
    assert!(matches!(cfg.with_override("threat.nonexistent=1"), Err(Error::Config(_))));
    assert!(matches!(cfg.with_override("threat.alpha=2.0"), Err(Error::Config(_))));

    let mut bad = tempfile::NamedTempFile::new().unwrap();
    writeln!(bad, "seed = \"nine\"").unwrap();
    assert!(matches!(ScenarioConfig::load(bad.path()), Err(Error::Config(_))));
}
