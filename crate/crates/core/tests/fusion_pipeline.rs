use stein_scanmatch::fusion::{run_fusion, FilterConfig, NavState, PropagationMode};
use stein_scanmatch::scenes::{generate_trajectory, SceneKind, SceneSpec, Trajectory, TrajectorySpec, Waypoint};
use stein_scanmatch::SolverConfig;

fn spec(waypoints: Vec<Waypoint>, resample: bool) -> TrajectorySpec {
    TrajectorySpec {
        waypoints,
        hold: 0.0,
        scan_rate: 5.0,
        imu_rate: 100.0,
        imu_noise: Default::default(),
        resample_scans: resample,
        seed: 1,
    }
}

fn at(time: f64, translation: [f64; 3]) -> Waypoint {
    Waypoint {
        time,
        rotation: [0.0; 3],
        translation,
    }
}

fn max_error(traj: &Trajectory, filter: &FilterConfig) -> f64 {
    let g = traj.ground_truth[0];
    let initial = NavState {
        velocity: g.velocity,
        ..NavState::at_rest(g.pose, g.time)
    };
    let solver = SolverConfig {
        particle_count: 5,
        ..SolverConfig::default()
    };
    let run = run_fusion(&traj.scans, Some(&traj.imu), &initial, &solver, filter, 3).unwrap();
    assert_eq!(run.poses.len(), traj.scans.len());
    run.poses
        .iter()
        .zip(&traj.ground_truth)
        .map(|(p, g)| (p.state.pose.translation - g.pose.translation).norm())
        .fold(0.0, f64::max)
}

#[test]
fn static_sensor_stays_put() {
    let scene = SceneSpec::new(SceneKind::Box);
    let traj = generate_trajectory(&spec(vec![at(0.0, [0.0; 3]), at(2.0, [0.0; 3])], false), &scene).unwrap();
    let err = max_error(&traj, &FilterConfig::default());
    assert!(err < 1e-3, "max deviation {err}");
}

#[test]
fn lidar_only_tracks_a_straight_line_in_a_closed_scene() {
    let scene = SceneSpec::new(SceneKind::Box).with_seed(2);
    let traj = generate_trajectory(&spec(vec![at(0.0, [-0.3, 0.0, 0.0]), at(2.0, [0.3, 0.1, 0.0])], false), &scene)
        .unwrap();
    let filter = FilterConfig {
        propagation: PropagationMode::ConstantVelocity,
        ..FilterConfig::default()
    };
    let err = max_error(&traj, &filter);
    assert!(err < 0.02, "max deviation {err}");
}

#[test]
fn missing_imu_is_rejected_in_imu_mode() {
    let scene = SceneSpec::new(SceneKind::Box);
    let traj = generate_trajectory(&spec(vec![at(0.0, [0.0; 3]), at(1.0, [0.0; 3])], false), &scene).unwrap();
    let initial = NavState::at_rest(traj.ground_truth[0].pose, 0.0);
    let res = run_fusion(&traj.scans, None, &initial, &SolverConfig::default(), &FilterConfig::default(), 0);
    assert!(res.is_err());
}
