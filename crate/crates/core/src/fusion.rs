//! Loosely coupled error-state Kalman filter over a 15-D navigation error,
//! corrected by scan-matching pose measurements with covariance.
//!
//! Error state `[δp, δv, δϑ, δb_a, δb_g]`: position, velocity and biases are
//! additive (world frame for `p`, `v`), attitude is a right perturbation
//! `R_true = R · exp(δϑ)`.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{hat, so3_exp, Pose, Rot3, Twist};
use crate::pointcloud::{KdTree, PointCloud};
use crate::stein::{solve_icp_with_tree, PoseWithCovariance, PriorWeight, SolverConfig};

pub type Vector15 = SVector<f64, 15>;
pub type Matrix15 = SMatrix<f64, 15, 15>;
/// Observation matrix selecting `[δp, δϑ]`.
pub type Observation = SMatrix<f64, 6, 15>;

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Block offsets within the error state.
pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ROT: usize = 6;
pub const BIAS_ACC: usize = 9;
pub const BIAS_GYRO: usize = 12;

/// Accel samples averaged for the initial roll and pitch.
pub const ALIGNMENT_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force in the body frame, m/s².
    pub accel: Vector3<f64>,
    /// Angular rate in the body frame, rad/s.
    pub gyro: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub timestamp: f64,
}

impl NavState {
    pub fn at_rest(pose: Pose, timestamp: f64) -> Self {
        NavState {
            pose,
            velocity: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            timestamp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.velocity.iter().all(|c| c.is_finite())
            && self.accel_bias.iter().all(|c| c.is_finite())
            && self.gyro_bias.iter().all(|c| c.is_finite())
    }

    /// Applies an error-state correction.
    pub fn inject(&self, dx: &Vector15) -> NavState {
        let block = |i: usize| Vector3::new(dx[i], dx[i + 1], dx[i + 2]);
        NavState {
            pose: Pose::new(
                self.pose.rotation * so3_exp(&block(ROT)),
                self.pose.translation + block(POS),
            ),
            velocity: self.velocity + block(VEL),
            accel_bias: self.accel_bias + block(BIAS_ACC),
            gyro_bias: self.gyro_bias + block(BIAS_GYRO),
            timestamp: self.timestamp,
        }
    }
}

/// Process noise as continuous-time densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessNoise {
    /// m/s²/√Hz.
    pub accel_density: f64,
    /// rad/s/√Hz.
    pub gyro_density: f64,
    /// m/s³/√Hz.
    pub accel_bias_walk: f64,
    /// rad/s²/√Hz.
    pub gyro_bias_walk: f64,
    /// Velocity random walk of the constant-velocity model, m/s²/√Hz.
    pub cv_accel_density: f64,
    /// Attitude random walk of the constant-velocity model, rad/s/√Hz.
    pub cv_gyro_density: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise {
            accel_density: 0.02,
            gyro_density: 0.002,
            accel_bias_walk: 1e-4,
            gyro_bias_walk: 1e-5,
            cv_accel_density: 1.0,
            cv_gyro_density: 0.1,
        }
    }
}

pub enum Propagation<'a> {
    /// Body-frame samples; intervals outside `[state time, t_end]` are
    /// clipped and the boundary readings linearly interpolated.
    Imu { samples: &'a [ImuSample], t_end: f64 },
    ConstantVelocity { dt: f64 },
}

fn set_block(m: &mut Matrix15, r: usize, c: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
}

fn add_diag(m: &mut Matrix15, r: usize, v: f64) {
    for i in r..r + 3 {
        m[(i, i)] += v;
    }
}

fn symmetrize(m: &Matrix15) -> Matrix15 {
    0.5 * (m + m.transpose())
}

/// One IMU interval with trapezoidal accel and mean gyro.
fn imu_step(
    state: &NavState,
    cov: &Matrix15,
    a: &ImuSample,
    b: &ImuSample,
    noise: &ProcessNoise,
) -> (NavState, Matrix15) {
    let dt = b.timestamp - a.timestamp;
    let r0 = state.pose.rotation;
    let omega = 0.5 * (a.gyro + b.gyro) - state.gyro_bias;
    let r1 = (r0 * so3_exp(&(omega * dt))).normalize();
    let f0 = a.accel - state.accel_bias;
    let f1 = b.accel - state.accel_bias;
    let acc = 0.5 * (r0 * f0 + r1 * f1) + GRAVITY;
    let v0 = state.velocity;
    let next = NavState {
        pose: Pose::new(r1, state.pose.translation + v0 * dt + 0.5 * acc * dt * dt),
        velocity: v0 + acc * dt,
        timestamp: b.timestamp,
        ..*state
    };

    let f_mean = 0.5 * (f0 + f1);
    let mut a_mat = Matrix15::zeros();
    set_block(&mut a_mat, POS, VEL, &Matrix3::identity());
    set_block(&mut a_mat, VEL, ROT, &(-r0.matrix() * hat(&f_mean)));
    set_block(&mut a_mat, VEL, BIAS_ACC, &(-r0.matrix()));
    set_block(&mut a_mat, ROT, ROT, &(-hat(&omega)));
    set_block(&mut a_mat, ROT, BIAS_GYRO, &(-Matrix3::identity()));
    let ad = a_mat * dt;
    let f = Matrix15::identity() + ad + 0.5 * ad * ad;

    let mut q = Matrix15::zeros();
    add_diag(&mut q, VEL, noise.accel_density.powi(2) * dt);
    add_diag(&mut q, ROT, noise.gyro_density.powi(2) * dt);
    add_diag(&mut q, BIAS_ACC, noise.accel_bias_walk.powi(2) * dt);
    add_diag(&mut q, BIAS_GYRO, noise.gyro_bias_walk.powi(2) * dt);
    (next, symmetrize(&(f * cov * f.transpose() + q)))
}

fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
    let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
    ImuSample {
        timestamp: t,
        accel: a.accel + (b.accel - a.accel) * s,
        gyro: a.gyro + (b.gyro - a.gyro) * s,
    }
}

fn check_monotonic(samples: &[ImuSample]) -> Result<()> {
    for w in samples.windows(2) {
        if !(w[1].timestamp > w[0].timestamp) {
            return Err(Error::NonMonotonicTimestamps {
                previous: w[0].timestamp,
                current: w[1].timestamp,
            });
        }
    }
    Ok(())
}

/// Propagates the state and its error covariance.
pub fn propagate(
    state: &NavState,
    cov: &Matrix15,
    input: Propagation<'_>,
    noise: &ProcessNoise,
) -> Result<(NavState, Matrix15)> {
    match input {
        Propagation::ConstantVelocity { dt } => {
            if !(dt > 0.0) {
                return Err(Error::NonMonotonicTimestamps {
                    previous: state.timestamp,
                    current: state.timestamp + dt,
                });
            }
            let next = NavState {
                pose: Pose::new(state.pose.rotation, state.pose.translation + state.velocity * dt),
                timestamp: state.timestamp + dt,
                ..*state
            };
            let mut f = Matrix15::identity();
            set_block(&mut f, POS, VEL, &(Matrix3::identity() * dt));
            let mut q = Matrix15::zeros();
            add_diag(&mut q, VEL, noise.cv_accel_density.powi(2) * dt);
            add_diag(&mut q, ROT, noise.cv_gyro_density.powi(2) * dt);
            add_diag(&mut q, BIAS_ACC, noise.accel_bias_walk.powi(2) * dt);
            add_diag(&mut q, BIAS_GYRO, noise.gyro_bias_walk.powi(2) * dt);
            Ok((next, symmetrize(&(f * cov * f.transpose() + q))))
        }
        Propagation::Imu { samples, t_end } => {
            check_monotonic(samples)?;
            let t0 = state.timestamp;
            if !(t_end > t0) {
                return Err(Error::NonMonotonicTimestamps {
                    previous: t0,
                    current: t_end,
                });
            }
            let covered = match (samples.first(), samples.last()) {
                (Some(f), Some(l)) => f.timestamp <= t0 && l.timestamp >= t_end,
                _ => false,
            };
            if !covered {
                return Err(Error::InvalidConfig(format!(
                    "IMU samples do not cover [{t0}, {t_end}]"
                )));
            }
            let mut state = *state;
            let mut cov = *cov;
            for w in samples.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if b.timestamp <= t0 || a.timestamp >= t_end {
                    continue;
                }
                let start = if a.timestamp < t0 { lerp(a, b, t0) } else { *a };
                let end = if b.timestamp > t_end { lerp(a, b, t_end) } else { *b };
                if end.timestamp > start.timestamp {
                    (state, cov) = imu_step(&state, &cov, &start, &end, noise);
                }
            }
            state.timestamp = t_end;
            Ok((state, cov))
        }
    }
}

/// `C` with identity blocks on `δp` and `δϑ`.
pub fn observation_matrix() -> Observation {
    let mut c = Observation::zeros();
    c.fixed_view_mut::<3, 3>(0, POS).copy_from(&Matrix3::identity());
    c.fixed_view_mut::<3, 3>(3, ROT).copy_from(&Matrix3::identity());
    c
}

/// Maps a solver twist `[θ; ρ]` (right perturbation of a pose with rotation
/// `r`) to the filter measurement layout `[δp; δϑ]`, to first order.
pub fn twist_to_measurement(r: &Rot3) -> Matrix6<f64> {
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(r.matrix());
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    g
}

/// Inverse of [`twist_to_measurement`].
pub fn measurement_to_twist(r: &Rot3) -> Matrix6<f64> {
    twist_to_measurement(r).transpose()
}

/// Solver-layout 6×6 prior covariance from the filter covariance.
pub fn prior_covariance(cov: &Matrix15, r: &Rot3) -> Matrix6<f64> {
    let c = observation_matrix();
    let m = measurement_to_twist(r);
    let p = m * (c * cov * c.transpose()) * m.transpose();
    0.5 * (p + p.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub state: NavState,
    pub covariance: Matrix15,
    pub gain: SMatrix<f64, 15, 6>,
}

/// `K = Σ Cᵀ (C Σ Cᵀ + R)⁻¹`, `δx = K z`, Joseph-form covariance.
pub fn kalman_update(
    state: &NavState,
    cov: &Matrix15,
    innovation: &Vector6<f64>,
    meas_cov: &Matrix6<f64>,
) -> Result<Update> {
    let c = observation_matrix();
    let s = c * cov * c.transpose() + meas_cov;
    let s = 0.5 * (s + s.transpose());
    let chol = s.cholesky().ok_or(Error::InnovationInversion)?;
    // K = Σ Cᵀ S⁻¹ = (S⁻¹ C Σ)ᵀ
    let gain = chol.solve(&(c * cov)).transpose();
    let dx = gain * innovation;
    let ikc = Matrix15::identity() - gain * c;
    let joseph = ikc * cov * ikc.transpose() + gain * meas_cov * gain.transpose();
    Ok(Update {
        state: state.inject(&dx),
        covariance: symmetrize(&joseph),
        gain,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Use the particle covariance of every scan match.
    Adaptive,
    /// Use a constant measurement covariance.
    Fixed,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(NoiseMode::Adaptive),
            "fixed" => Ok(NoiseMode::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown noise mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationMode {
    Imu,
    ConstantVelocity,
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imu" => Ok(PropagationMode::Imu),
            "constant-velocity" => Ok(PropagationMode::ConstantVelocity),
            other => Err(Error::InvalidConfig(format!("unknown propagation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub noise: NoiseMode,
    pub propagation: PropagationMode,
    /// Fixed-mode translation variance, m².
    pub fixed_translation_var: f64,
    /// Fixed-mode rotation variance, rad².
    pub fixed_rotation_var: f64,
    pub process: ProcessNoise,
    /// Initial standard deviations per block `[p, v, ϑ, b_a, b_g]`.
    pub initial_std: [f64; 5],
    /// Estimate the initial roll and pitch from the first accel samples.
    pub gravity_alignment: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            noise: NoiseMode::Adaptive,
            propagation: PropagationMode::Imu,
            fixed_translation_var: 1e-4,
            fixed_rotation_var: 1e-5,
            process: ProcessNoise::default(),
            initial_std: [1e-3, 0.05, 1e-3, 0.02, 1e-3],
            gravity_alignment: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_translation_var > 0.0 && self.fixed_rotation_var > 0.0) {
            return Err(Error::InvalidConfig("fixed noise variances must be > 0".into()));
        }
        if self.initial_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("initial_std entries must be >= 0".into()));
        }
        let p = &self.process;
        let all = [
            p.accel_density,
            p.gyro_density,
            p.accel_bias_walk,
            p.gyro_bias_walk,
            p.cv_accel_density,
            p.cv_gyro_density,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("process noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn initial_covariance(&self) -> Matrix15 {
        let mut p = Matrix15::zeros();
        for (b, s) in self.initial_std.iter().enumerate() {
            add_diag(&mut p, 3 * b, s * s);
        }
        p
    }

    /// Measurement covariance in `[δp, δϑ]` layout for one scan match.
    pub fn measurement_covariance(&self, particle_cov: &Matrix6<f64>, r: &Rot3) -> Matrix6<f64> {
        match self.noise {
            NoiseMode::Adaptive => {
                let g = twist_to_measurement(r);
                let m = g * particle_cov * g.transpose();
                0.5 * (m + m.transpose())
            }
            NoiseMode::Fixed => {
                let t = self.fixed_translation_var;
                let q = self.fixed_rotation_var;
                Matrix6::from_diagonal(&Vector6::new(t, t, t, q, q, q))
            }
        }
    }
}

/// Rotation with zero yaw that maps the mean specific force onto `+z`.
pub fn gravity_alignment(samples: &[ImuSample]) -> Option<Rot3> {
    let n = samples.len().min(ALIGNMENT_SAMPLES);
    if n == 0 {
        return None;
    }
    let mean = samples[..n].iter().fold(Vector3::zeros(), |acc, s| acc + s.accel) / n as f64;
    let f = mean.try_normalize(1e-9)?;
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2(f.y.hypot(f.z));
    Some(so3_exp(&Vector3::new(0.0, pitch, 0.0)) * so3_exp(&Vector3::new(roll, 0.0, 0.0)))
}

fn yaw_of(r: &Rot3) -> f64 {
    let m = r.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPose {
    pub time: f64,
    pub state: NavState,
    /// Pose block of the filter covariance, `[δp, δϑ]` layout.
    pub covariance: Matrix6<f64>,
    /// Frobenius norm of the Kalman gain; zero for the first scan.
    pub gain_norm: f64,
    pub icp_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionRun {
    pub poses: Vec<FusedPose>,
    /// Final full covariance.
    pub covariance: Matrix15,
}

/// Runs the filter over a scan stream.
///
/// Each scan is matched against the previous scan placed at its estimated
/// pose; the first scan fixes the initial state.
pub fn run_fusion(
    scans: &[PointCloud],
    imu: Option<&[ImuSample]>,
    initial: &NavState,
    solver: &SolverConfig,
    filter: &FilterConfig,
    seed: u64,
) -> Result<FusionRun> {
    filter.validate()?;
    solver.validate()?;
    let times: Vec<f64> = scans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.timestamp
                .ok_or_else(|| Error::InvalidConfig(format!("scan {i} has no timestamp")))
        })
        .collect::<Result<_>>()?;
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotonicTimestamps {
                previous: w[0],
                current: w[1],
            });
        }
    }
    if let Some(samples) = imu {
        check_monotonic(samples)?;
    }
    let imu = match filter.propagation {
        PropagationMode::Imu => Some(imu.ok_or_else(|| {
            Error::InvalidConfig("IMU propagation requested without IMU samples".into())
        })?),
        PropagationMode::ConstantVelocity => None,
    };
    let Some(&t0) = times.first() else {
        return Ok(FusionRun {
            poses: Vec::new(),
            covariance: filter.initial_covariance(),
        });
    };

    let mut state = NavState {
        timestamp: t0,
        ..*initial
    };
    if let (Some(samples), true) = (imu, filter.gravity_alignment) {
        let from = samples.partition_point(|s| s.timestamp < t0);
        if let Some(level) = gravity_alignment(&samples[from..]) {
            let yaw = so3_exp(&Vector3::new(0.0, 0.0, yaw_of(&state.pose.rotation)));
            state.pose.rotation = yaw * level;
        }
    }
    let mut cov = filter.initial_covariance();
    let solver = SolverConfig {
        prior_weight: PriorWeight::Gaussian,
        ..solver.clone()
    };
    let c = observation_matrix();

    let mut poses = vec![FusedPose {
        time: t0,
        state,
        covariance: c * cov * c.transpose(),
        gain_norm: 0.0,
        icp_iterations: 0,
    }];
    let mut map = KdTree::build(&scans[0].transformed(&state.pose))?;

    for (j, scan) in scans.iter().enumerate().skip(1) {
        let t = times[j];
        let input = match imu {
            Some(samples) => Propagation::Imu { samples, t_end: t },
            None => Propagation::ConstantVelocity {
                dt: t - state.timestamp,
            },
        };
        (state, cov) = propagate(&state, &cov, input, &filter.process)?;

        let r = state.pose.rotation;
        let prior = PoseWithCovariance::new(state.pose, prior_covariance(&cov, &r));
        let icp = solve_icp_with_tree(&prior, scan, &map, &solver, seed.wrapping_add(j as u64))?;
        let z = twist_to_measurement(&r) * icp.mean_twist.0;
        let meas_cov = filter.measurement_covariance(&icp.particle_covariance, &r);
        let update = kalman_update(&state, &cov, &z, &meas_cov)?;
        state = update.state;
        cov = update.covariance;
        log::debug!(
            "scan {j}: icp iterations {}, gain norm {:.3e}",
            icp.iterations,
            update.gain.norm()
        );
        poses.push(FusedPose {
            time: t,
            state,
            covariance: c * cov * c.transpose(),
            gain_norm: update.gain.norm(),
            icp_iterations: icp.iterations,
        });
        map = KdTree::build(&scan.transformed(&state.pose))?;
    }
    Ok(FusionRun {
        poses,
        covariance: cov,
    })
}

/// Re-expresses a solver twist in filter layout and back, for callers that
/// need the measurement directly.
pub fn measurement_twist(z: &Vector6<f64>, r: &Rot3) -> Twist {
    Twist(measurement_to_twist(r) * z)
}
