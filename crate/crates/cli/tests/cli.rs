use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stein-scanmatch");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
seed = 4

[solver]
particle_count = 5

[scene]
kind = "corridor"
extent = 10.0
density = 4.0
offset = [0.0, 0.0, 0.01, 0.1, 0.05, 0.0]

[oracle]
samples = 30

[trajectory]
scan_rate = 5.0
imu_rate = 100.0
waypoints = [
  { time = 0.0, translation = [0.0, 0.0, 0.0] },
  { time = 1.0, translation = [0.5, 0.0, 0.0] },
]

[trajectory.imu_noise]
accel_density = 0.02
gyro_density = 0.002
"#;

fn twice(command: &str, report: &str) {
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "run.toml", SMALL);
        ok(
            tmp.path(),
            &[command, "--config", "run.toml", "--threads", "1", "--out", "o"],
        );
        bodies.push(fs::read(tmp.path().join("o").join(report)).unwrap());
    }
    assert!(!bodies[0].is_empty());
    assert_eq!(bodies[0], bodies[1], "{command} report differs between runs");
}

#[test]
fn align_is_deterministic() {
    twice("align", "align_report.json");
}

#[test]
fn oracle_is_deterministic() {
    twice("oracle", "oracle_report.json");
}

#[test]
fn fuse_is_deterministic() {
    twice("fuse", "fuse_report.json");
    twice("fuse", "trajectory.tum");
}

#[test]
fn reports_echo_config_seed_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.toml", SMALL);
    ok(tmp.path(), &["oracle", "--config", "run.toml", "--seed", "9", "--out", "o"]);
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("o/oracle_report.json")).unwrap()).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["config"]["solver"]["particle_count"], 5);
    assert_eq!(v["scene_hash"].as_str().unwrap().len(), 64);
    assert!(tmp.path().join("o/resolved_config.toml").exists());
}

#[test]
fn misspelled_key_exits_two_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.toml", "[solver]\nparticle_cuont = 3\n");
    let out = run(tmp.path(), &["align", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("particle_cuont"));
}

#[test]
fn zero_density_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "d.toml", "[scene]\nkind = \"box\"\ndensity = 0.0\n");
    let out = run(tmp.path(), &["gen-scene", "--config", "d.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["align", "nope.csv", "nope2.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_input_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.csv", "0,0,0\n1,0,0\n");
    let out = run(tmp.path(), &["align", "s.csv", "s.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_scene_round_trips_and_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "b.toml", "[scene]\nkind = \"blobs\"\nseed = 7\n");
    ok(tmp.path(), &["gen-scene", "--config", "b.toml", "--out", "g1"]);
    ok(tmp.path(), &["gen-scene", "--config", "b.toml", "--out", "g2"]);
    for f in ["source.csv", "target.csv", "ground_truth.txt"] {
        assert_eq!(
            fs::read(tmp.path().join("g1").join(f)).unwrap(),
            fs::read(tmp.path().join("g2").join(f)).unwrap()
        );
    }
    // Aligning the written clouds reloads them; writing them back is bitwise stable.
    let src = tmp.path().join("g1/source.csv");
    let cloud = stein_scanmatch::pointcloud::load_cloud(&src, stein_scanmatch::pointcloud::CloudFormat::CsvXyz).unwrap();
    let again = tmp.path().join("again.csv");
    stein_scanmatch::pointcloud::write_csv(&cloud, &again).unwrap();
    assert_eq!(fs::read(&src).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn identical_clouds_keep_the_prior() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "b.toml", "[scene]\nkind = \"box\"\n");
    ok(tmp.path(), &["gen-scene", "--config", "b.toml", "--out", "g"]);
    ok(
        tmp.path(),
        &["align", "g/target.csv", "g/target.csv", "--particles", "1", "--out", "a"],
    );
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/align_report.json")).unwrap()).unwrap();
    assert_eq!(v["converged"], true);
    let tum: Vec<f64> = v["pose_tum"]
        .as_str()
        .unwrap()
        .split(' ')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!(tum[1..4].iter().all(|x| x.abs() < 1e-9));
    assert!((tum[7] - 1.0).abs() < 1e-12);
}

#[test]
fn corridor_covariance_is_dominated_by_the_axis() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["align", "--out", "a"]);
    let csv = fs::read_to_string(tmp.path().join("a/covariance.csv")).unwrap();
    let diag: Vec<f64> = csv
        .lines()
        .enumerate()
        .map(|(i, l)| l.split(',').nth(i).unwrap().parse().unwrap())
        .collect();
    assert!(diag[3] > 10.0 * diag[4] && diag[3] > 10.0 * diag[5], "{diag:?}");
}

#[test]
fn svn_needs_no_more_iterations_than_svgd_on_the_corridor() {
    let tmp = tempfile::tempdir().unwrap();
    let mut iters = Vec::new();
    for mode in ["svn", "svgd"] {
        ok(tmp.path(), &["align", "--mode", mode, "--seed", "1", "--out", mode]);
        let v: serde_json::Value = serde_json::from_slice(
            &fs::read(tmp.path().join(mode).join("align_report.json")).unwrap(),
        )
        .unwrap();
        iters.push(v["iterations"].as_u64().unwrap());
    }
    assert!(iters[0] <= iters[1], "{iters:?}");
}

#[test]
fn constant_velocity_runs_without_imu() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.toml", SMALL);
    ok(
        tmp.path(),
        &["fuse", "--config", "run.toml", "--propagation", "constant-velocity", "--out", "f"],
    );
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("f/fuse_report.json")).unwrap()).unwrap();
    assert_eq!(v["lidar_only"], true);
    let gains = fs::read_to_string(tmp.path().join("f/gain_norms.csv")).unwrap();
    assert_eq!(gains.lines().count(), 1 + v["scans"].as_u64().unwrap() as usize);
}

#[test]
fn static_trajectory_stays_put() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"
[scene]
kind = "box"

[trajectory]
scan_rate = 5.0
imu_rate = 100.0
resample_scans = false
waypoints = [{ time = 0.0 }, { time = 2.0 }]
"#;
    write(tmp.path(), "s.toml", cfg);
    ok(tmp.path(), &["fuse", "--config", "s.toml", "--out", "f"]);
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("f/fuse_report.json")).unwrap()).unwrap();
    let max = v["max_translation_error"].as_f64().unwrap();
    assert!(max < 1e-3, "max deviation {max}");
}

#[test]
fn ablation_marks_single_particle_consistency_unavailable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[ablation]\nparticles = [1, 4]\nseeds = [0, 1]\nmodes = [\"svn\"]\n");
    write(tmp.path(), "a.toml", &cfg);
    ok(tmp.path(), &["ablation", "--config", "a.toml", "--out", "ab"]);
    let csv = fs::read_to_string(tmp.path().join("ab/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[1].contains("n/a"));
    assert!(lines[2].starts_with("4,") && !lines[2].contains("n/a"));
}
