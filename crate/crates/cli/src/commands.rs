use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::Serialize;
use stein_scanmatch::fusion::{run_fusion, ImuSample, NavState, PropagationMode};
use stein_scanmatch::manifold::se3_log;
use stein_scanmatch::oracle::{
    ablation_sweep, consistency, mc_icp_distribution, nne, summarize, AblationRow, AblationSummary,
    ConsistencyReport,
};
use stein_scanmatch::pointcloud::{load_cloud, write_csv, CloudFormat};
use stein_scanmatch::scenes::{generate_pair, generate_trajectory, scene_hash, ScenePair};
use stein_scanmatch::stein::{solve_icp, PoseWithCovariance};
use stein_scanmatch::{Error, PointCloud, Pose, SolverConfig};

use crate::config::RunConfig;
use crate::output::{matrix_csv, rows, tum_line, OutDir};

/// Creates the output directory and echoes the resolved config into it.
fn out_dir(cfg: &RunConfig) -> Result<OutDir, Error> {
    let dir = OutDir::create(cfg.io.out.as_deref().unwrap_or(Path::new("out")))?;
    dir.write("resolved_config.toml", &cfg.to_toml())?;
    Ok(dir)
}

fn load(path: &Path) -> Result<PointCloud, Error> {
    load_cloud(path, CloudFormat::from_path(path))
}

struct Inputs {
    source: PointCloud,
    target: PointCloud,
    ground_truth: Option<Pose>,
    scene_hash: Option<String>,
}

fn inputs(cfg: &RunConfig) -> Result<Inputs, Error> {
    match (&cfg.io.source, &cfg.io.target) {
        (Some(s), Some(t)) => Ok(Inputs {
            source: load(s)?,
            target: load(t)?,
            ground_truth: None,
            scene_hash: None,
        }),
        (None, None) => {
            let pair = generate_pair(&cfg.scene)?;
            let hash = scene_hash(&pair);
            let ScenePair {
                source,
                target,
                ground_truth,
            } = pair;
            Ok(Inputs {
                source,
                target,
                ground_truth: Some(ground_truth),
                scene_hash: Some(hash),
            })
        }
        _ => Err(Error::InvalidConfig(
            "give both source and target paths, or neither to use the scene".into(),
        )),
    }
}

#[derive(Serialize)]
struct PoseError {
    translation: f64,
    rotation: f64,
}

fn pose_error(estimate: &Pose, truth: &Pose) -> PoseError {
    let e = se3_log(&(truth.inverse() * *estimate));
    PoseError {
        translation: e.translation().norm(),
        rotation: e.rotation().norm(),
    }
}

#[derive(Serialize)]
struct AlignReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    scene_hash: Option<String>,
    pose_tum: String,
    covariance: Vec<[f64; 6]>,
    iterations: usize,
    converged: bool,
    frozen_updates: usize,
    update_norms: &'a [f64],
    error: Option<PoseError>,
}

pub fn align(cfg: &RunConfig) -> Result<(), Error> {
    let inp = inputs(cfg)?;
    let prior = PoseWithCovariance::certain(Pose::identity());
    let out = solve_icp(&prior, &inp.source, &inp.target, &cfg.solver, cfg.seed)?;
    let dir = out_dir(cfg)?;
    let report = AlignReport {
        config: cfg,
        seed: cfg.seed,
        scene_hash: inp.scene_hash,
        pose_tum: tum_line(0.0, &out.pose),
        covariance: rows(&out.covariance),
        iterations: out.iterations,
        converged: out.converged,
        frozen_updates: out.frozen_updates,
        update_norms: &out.update_norms,
        error: inp.ground_truth.map(|gt| pose_error(&out.pose, &gt)),
    };
    dir.write_json("align_report.json", &report)?;
    dir.write("covariance.csv", &matrix_csv(&out.covariance))?;
    let mut norms = String::from("iteration,mean_squared_update_norm\n");
    for (i, n) in out.update_norms.iter().enumerate() {
        norms.push_str(&format!("{},{:.9e}\n", i + 1, n));
    }
    dir.write("update_norms.csv", &norms)?;
    println!("{}", report.pose_tum);
    Ok(())
}

/// Scans named `<timestamp>.<ext>`, sorted by time.
fn load_scan_dir(dir: &Path) -> Result<Vec<PointCloud>, Error> {
    let mut scans = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext.to_ascii_lowercase().as_str(), "csv" | "ply") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let t: f64 = stem.parse().map_err(|_| Error::Parse {
            path: path.clone(),
            line: 0,
            message: "scan file name must be its timestamp".into(),
        })?;
        scans.push(load(&path)?.with_timestamp(t));
    }
    scans.sort_by(|a, b| a.timestamp.unwrap().total_cmp(&b.timestamp.unwrap()));
    if scans.is_empty() {
        return Err(Error::InvalidConfig(format!("no scans in {}", dir.display())));
    }
    Ok(scans)
}

/// Rows `t,ax,ay,az,gx,gy,gz`; `#` lines are comments.
fn load_imu(path: &PathBuf) -> Result<Vec<ImuSample>, Error> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if vals.len() != 7 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: "expected 7 finite values".into(),
            });
        }
        samples.push(ImuSample {
            timestamp: vals[0],
            accel: Vector3::new(vals[1], vals[2], vals[3]),
            gyro: Vector3::new(vals[4], vals[5], vals[6]),
        });
    }
    Ok(samples)
}

#[derive(Serialize)]
struct FuseReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    scans: usize,
    lidar_only: bool,
    final_translation_error: Option<f64>,
    max_translation_error: Option<f64>,
    nne_trans: Option<f64>,
}

pub fn fuse(cfg: &RunConfig) -> Result<(), Error> {
    let (scans, imu, initial, truth) = match &cfg.io.scans {
        Some(dir) => {
            let scans = load_scan_dir(dir)?;
            let imu = cfg.io.imu.as_ref().map(load_imu).transpose()?;
            let t0 = scans[0].timestamp.unwrap();
            (scans, imu, NavState::at_rest(Pose::identity(), t0), None)
        }
        None => {
            let traj = generate_trajectory(&cfg.trajectory, &cfg.scene)?;
            let g = traj.ground_truth[0];
            let initial = NavState {
                velocity: g.velocity,
                ..NavState::at_rest(g.pose, g.time)
            };
            (traj.scans, Some(traj.imu), initial, Some(traj.ground_truth))
        }
    };
    let imu = match cfg.filter.propagation {
        PropagationMode::Imu => imu,
        PropagationMode::ConstantVelocity => None,
    };
    let run = run_fusion(&scans, imu.as_deref(), &initial, &cfg.solver, &cfg.filter, cfg.seed)?;

    let dir = out_dir(cfg)?;
    let mut tum = String::new();
    let mut cov = String::from("time,c00..c55 row-major [dp, dtheta]\n");
    let mut gains = String::from("time,kalman_gain_norm\n");
    for p in &run.poses {
        tum.push_str(&tum_line(p.time, &p.state.pose));
        tum.push('\n');
        let cells: Vec<String> = p.covariance.transpose().iter().map(|v| format!("{v:.9e}")).collect();
        cov.push_str(&format!("{:.9},{}\n", p.time, cells.join(",")));
        gains.push_str(&format!("{:.9},{:.9e}\n", p.time, p.gain_norm));
    }
    dir.write("trajectory.tum", &tum)?;
    dir.write("covariance.csv", &cov)?;
    dir.write("gain_norms.csv", &gains)?;

    let (final_err, max_err, nne_trans) = match &truth {
        Some(gt) => {
            let errs: Vec<Vector3<f64>> = run
                .poses
                .iter()
                .zip(gt)
                .map(|(p, g)| p.state.pose.translation - g.pose.translation)
                .collect();
            let covs: Vec<Matrix3<f64>> = run
                .poses
                .iter()
                .map(|p| p.covariance.fixed_view::<3, 3>(0, 0).into_owned())
                .collect();
            let max = errs.iter().map(|e| e.norm()).fold(0.0, f64::max);
            (
                errs.last().map(|e| e.norm()),
                Some(max),
                nne(&errs[1..], &covs[1..]).ok(),
            )
        }
        None => (None, None, None),
    };
    dir.write_json(
        "fuse_report.json",
        &FuseReport {
            config: cfg,
            seed: cfg.seed,
            scans: run.poses.len(),
            lidar_only: imu.is_none(),
            final_translation_error: final_err,
            max_translation_error: max_err,
            nne_trans,
        },
    )?;
    if let Some(last) = run.poses.last() {
        println!("{}", tum_line(last.time, &last.state.pose));
    }
    Ok(())
}

#[derive(Serialize)]
struct Estimate {
    /// Twist of the estimate relative to ground truth.
    error_twist: Vector6<f64>,
    covariance: Vec<[f64; 6]>,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct OracleSummary {
    samples: usize,
    converged: usize,
    divergent: usize,
    kept: usize,
    quantile: f64,
    mean: Vector6<f64>,
    covariance: Vec<[f64; 6]>,
}

#[derive(Serialize)]
struct OracleReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    scene_hash: String,
    estimate: Estimate,
    oracle: OracleSummary,
    consistency: ConsistencyReport,
}

fn scene_inputs(cfg: &RunConfig) -> Result<(ScenePair, String), Error> {
    let pair = generate_pair(&cfg.scene)?;
    let hash = scene_hash(&pair);
    Ok((pair, hash))
}

pub fn oracle(cfg: &RunConfig) -> Result<(), Error> {
    let (pair, hash) = scene_inputs(cfg)?;
    let prior = Pose::identity();
    let mc = mc_icp_distribution(
        &pair.source,
        &pair.target,
        &prior,
        &pair.ground_truth,
        &cfg.oracle,
        cfg.seed,
    )?;
    let est = solve_icp(
        &PoseWithCovariance::certain(prior),
        &pair.source,
        &pair.target,
        &cfg.solver,
        cfg.seed,
    )?;
    let err = se3_log(&(pair.ground_truth.inverse() * est.pose));
    let report = consistency(&err.0, &est.particle_covariance, &mc)?;
    let dir = out_dir(cfg)?;
    dir.write_json(
        "oracle_report.json",
        &OracleReport {
            config: cfg,
            seed: cfg.seed,
            scene_hash: hash,
            estimate: Estimate {
                error_twist: err.0,
                covariance: rows(&est.particle_covariance),
                iterations: est.iterations,
                converged: est.converged,
            },
            oracle: OracleSummary {
                samples: cfg.oracle.samples,
                converged: mc.samples.len(),
                divergent: mc.divergent.len(),
                kept: mc.kept.len(),
                quantile: mc.quantile,
                mean: mc.kept_mean,
                covariance: rows(&mc.kept_covariance),
            },
            consistency: report,
        },
    )?;
    println!(
        "kl_trans {:.4} nne_trans {:.4} kl_rot {:.4} nne_rot {:.4}",
        report.kl_trans, report.nne_trans, report.kl_rot, report.nne_rot
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    scene_hash: String,
    rows: Vec<AblationRow>,
    summary: Vec<AblationSummary>,
}

pub fn ablation(cfg: &RunConfig) -> Result<(), Error> {
    let (pair, hash) = scene_inputs(cfg)?;
    let prior = Pose::identity();
    let mc = mc_icp_distribution(
        &pair.source,
        &pair.target,
        &prior,
        &pair.ground_truth,
        &cfg.oracle,
        cfg.seed,
    )?;
    let mut all = Vec::new();
    for &mode in &cfg.ablation.modes {
        let solver = SolverConfig {
            mode,
            ..cfg.solver.clone()
        };
        all.extend(ablation_sweep(
            &pair.source,
            &pair.target,
            &prior,
            &pair.ground_truth,
            &cfg.ablation.particles,
            &cfg.ablation.seeds,
            &solver,
            &mc,
        )?);
    }
    let summary = summarize(&all);
    let dir = out_dir(cfg)?;
    let mut csv = String::from(
        "particles,mode,mean_iterations,mean_runtime_ms,mean_trans_error,mean_rot_error,kl_trans,nne_trans,kl_rot,nne_rot\n",
    );
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6e}"));
    for s in &summary {
        csv.push_str(&format!(
            "{},{:?},{:.2},{:.3},{:.6e},{:.6e},{},{},{},{}\n",
            s.particles,
            s.mode,
            s.mean_iterations,
            s.mean_runtime_ms,
            s.mean_trans_error,
            s.mean_rot_error,
            opt(s.mean_kl_trans),
            opt(s.mean_nne_trans),
            opt(s.mean_kl_rot),
            opt(s.mean_nne_rot),
        ));
    }
    dir.write("ablation.csv", &csv)?;
    dir.write_json(
        "ablation_report.json",
        &AblationReport {
            config: cfg,
            seed: cfg.seed,
            scene_hash: hash,
            rows: all,
            summary,
        },
    )?;
    print!("{csv}");
    Ok(())
}

pub fn gen_scene(cfg: &RunConfig) -> Result<(), Error> {
    let (pair, hash) = scene_inputs(cfg)?;
    let dir = out_dir(cfg)?;
    write_csv(&pair.source, &dir.path("source.csv"))?;
    write_csv(&pair.target, &dir.path("target.csv"))?;
    dir.write(
        "ground_truth.txt",
        &format!("# t x y z qx qy qz qw\n{}\n", tum_line(0.0, &pair.ground_truth)),
    )?;
    println!("{hash}");
    Ok(())
}
