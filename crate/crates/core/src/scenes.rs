//! Synthetic scenes with exact ground truth: point-cloud pairs on simple
//! geometries and multi-scan trajectories with synthesized IMU readings.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{ImuSample, GRAVITY};
use crate::manifold::{pose_boxplus, se3_exp, se3_log, so3_exp, Pose, Twist};
use crate::pointcloud::{Point, PointCloud};

/// Corridor cross-section, meters.
pub const CORRIDOR_WIDTH: f64 = 3.0;
pub const TUNNEL_RADIUS: f64 = 2.0;
const BLOB_COUNT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Square duct along x, `extent` long, open at both ends.
    Corridor,
    /// Single square plane `z = 0`.
    Plane,
    /// Cylinder along x, `extent` long.
    Tunnel,
    /// Closed room with half-sizes `(0.5, 0.4, 0.3)·extent`.
    Box,
    /// Random spheres inside an `extent` cube.
    Blobs,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(SceneKind::Corridor),
            "plane" => Ok(SceneKind::Plane),
            "tunnel" => Ok(SceneKind::Tunnel),
            "box" => Ok(SceneKind::Box),
            "blobs" => Ok(SceneKind::Blobs),
            other => Err(Error::InvalidConfig(format!("unknown scene kind {other:?}"))),
        }
    }
}

impl SceneKind {
    pub fn default_extent(self) -> f64 {
        match self {
            SceneKind::Corridor | SceneKind::Tunnel => 40.0,
            SceneKind::Plane => 10.0,
            SceneKind::Box => 4.0,
            SceneKind::Blobs => 6.0,
        }
    }

    /// Gives roughly two thousand points per cloud at the default extent.
    pub fn default_density(self) -> f64 {
        match self {
            SceneKind::Corridor => 4.0,
            SceneKind::Tunnel => 4.0,
            SceneKind::Plane => 20.0,
            SceneKind::Box => 40.0,
            SceneKind::Blobs => 40.0,
        }
    }
}

/// Extent and density default per kind when omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SceneSpecFields")]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Meters.
    pub extent: f64,
    /// Points per square meter of surface.
    pub density: f64,
    pub noise_sigma: f64,
    /// Ground-truth source-to-target transform as a twist `[θ; ρ]`.
    pub offset: Twist,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneSpecFields {
    kind: SceneKind,
    extent: Option<f64>,
    density: Option<f64>,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default = "Twist::zero")]
    offset: Twist,
    #[serde(default)]
    seed: u64,
}

impl From<SceneSpecFields> for SceneSpec {
    fn from(f: SceneSpecFields) -> Self {
        SceneSpec {
            kind: f.kind,
            extent: f.extent.unwrap_or(f.kind.default_extent()),
            density: f.density.unwrap_or(f.kind.default_density()),
            noise_sigma: f.noise_sigma,
            offset: f.offset,
            seed: f.seed,
        }
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind) -> Self {
        SceneSpec {
            kind,
            extent: kind.default_extent(),
            density: kind.default_density(),
            noise_sigma: 0.0,
            offset: Twist::zero(),
            seed: 0,
        }
    }

    pub fn with_offset(mut self, offset: Twist) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::InvalidConfig("scene extent must be > 0".into()));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::InvalidConfig("scene density must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("scene noise_sigma must be >= 0".into()));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidConfig("scene offset must be finite".into()));
        }
        Ok(())
    }

    /// Unit direction of the least constrained translation, if any.
    pub fn degenerate_axis(&self) -> Option<Vector3<f64>> {
        match self.kind {
            SceneKind::Corridor | SceneKind::Tunnel => Some(Vector3::x()),
            _ => None,
        }
    }
}

/// A surface patch that can be sampled uniformly.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// `origin + a·u + b·v` for `a, b ∈ [0, 1]`.
    Rect { origin: Point, u: Vector3<f64>, v: Vector3<f64> },
    /// Lateral surface of a cylinder along x.
    Cylinder { radius: f64, x0: f64, x1: f64 },
    Sphere { center: Point, radius: f64 },
}

impl Surface {
    pub fn area(&self) -> f64 {
        match self {
            Surface::Rect { u, v, .. } => u.cross(v).norm(),
            Surface::Cylinder { radius, x0, x1 } => 2.0 * std::f64::consts::PI * radius * (x1 - x0),
            Surface::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        match self {
            Surface::Rect { origin, u, v } => {
                origin + u * rng.random::<f64>() + v * rng.random::<f64>()
            }
            Surface::Cylinder { radius, x0, x1 } => {
                let x = rng.random_range(*x0..*x1);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Point::new(x, radius * a.cos(), radius * a.sin())
            }
            Surface::Sphere { center, radius } => {
                let d = loop {
                    let g = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                    let n: f64 = g.norm();
                    if n > 1e-12 {
                        break g / n;
                    }
                };
                center + d * *radius
            }
        }
    }

    /// Euclidean distance from `x` to the surface.
    pub fn distance(&self, x: &Point) -> f64 {
        match self {
            Surface::Rect { origin, u, v } => {
                // Closest point on the parallelogram, assuming u ⟂ v.
                let d = x - origin;
                let a = (d.dot(u) / u.norm_squared()).clamp(0.0, 1.0);
                let b = (d.dot(v) / v.norm_squared()).clamp(0.0, 1.0);
                (d - u * a - v * b).norm()
            }
            Surface::Cylinder { radius, x0, x1 } => {
                let radial = (x.yz().norm() - radius).abs();
                let axial = if x.x < *x0 {
                    x0 - x.x
                } else if x.x > *x1 {
                    x.x - x1
                } else {
                    0.0
                };
                radial.hypot(axial)
            }
            Surface::Sphere { center, radius } => ((x - center).norm() - radius).abs(),
        }
    }
}

fn rect(origin: [f64; 3], u: [f64; 3], v: [f64; 3]) -> Surface {
    Surface::Rect {
        origin: Point::from(origin),
        u: Vector3::from(u),
        v: Vector3::from(v),
    }
}

/// Axis-aligned box faces with the given half-sizes, centered at the origin.
fn box_faces(hx: f64, hy: f64, hz: f64, ends: bool) -> Vec<Surface> {
    let (x2, y2, z2) = (2.0 * hx, 2.0 * hy, 2.0 * hz);
    let mut faces = vec![
        rect([-hx, -hy, -hz], [x2, 0.0, 0.0], [0.0, 0.0, z2]),
        rect([-hx, hy, -hz], [x2, 0.0, 0.0], [0.0, 0.0, z2]),
        rect([-hx, -hy, -hz], [x2, 0.0, 0.0], [0.0, y2, 0.0]),
        rect([-hx, -hy, hz], [x2, 0.0, 0.0], [0.0, y2, 0.0]),
    ];
    if ends {
        faces.push(rect([-hx, -hy, -hz], [0.0, y2, 0.0], [0.0, 0.0, z2]));
        faces.push(rect([hx, -hy, -hz], [0.0, y2, 0.0], [0.0, 0.0, z2]));
    }
    faces
}

/// The surfaces of a scene in the target frame.
pub fn scene_surfaces(spec: &SceneSpec) -> Vec<Surface> {
    let l = spec.extent;
    let w = 0.5 * CORRIDOR_WIDTH;
    match spec.kind {
        SceneKind::Corridor => box_faces(0.5 * l, w, w, false),
        SceneKind::Plane => vec![rect([-0.5 * l, -0.5 * l, 0.0], [l, 0.0, 0.0], [0.0, l, 0.0])],
        SceneKind::Tunnel => vec![Surface::Cylinder {
            radius: TUNNEL_RADIUS,
            x0: -0.5 * l,
            x1: 0.5 * l,
        }],
        SceneKind::Box => box_faces(0.5 * l, 0.4 * l, 0.3 * l, true),
        SceneKind::Blobs => {
            // Geometry draws from its own stream so that the sampled points
            // do not shift the blob layout.
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_B10B);
            (0..BLOB_COUNT)
                .map(|_| Surface::Sphere {
                    center: Point::from_fn(|_, _| rng.random_range(-0.5 * l..0.5 * l)),
                    radius: rng.random_range(0.1 * l..0.2 * l),
                })
                .collect()
        }
    }
}

/// Samples `density · area` points per surface, in surface order.
pub fn sample_surfaces<R: Rng>(surfaces: &[Surface], density: f64, rng: &mut R) -> Vec<Point> {
    let mut pts = Vec::new();
    for s in surfaces {
        let n = (s.area() * density).round().max(1.0) as usize;
        pts.extend((0..n).map(|_| s.sample(rng)));
    }
    pts
}

fn add_noise<R: Rng>(pts: &mut [Point], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        for p in pts.iter_mut() {
            *p += Vector3::from_fn(|_, _| normal.sample(rng));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates into the target frame.
    pub ground_truth: Pose,
}

/// Samples the target on the scene geometry and the source independently in
/// the frame `gt⁻¹`, adding i.i.d. Gaussian noise to both.
pub fn generate_pair(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let surfaces = scene_surfaces(spec);
    let gt = se3_exp(&spec.offset);
    let gt_inv = gt.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut target = sample_surfaces(&surfaces, spec.density, &mut rng);
    let mut source: Vec<Point> = sample_surfaces(&surfaces, spec.density, &mut rng)
        .iter()
        .map(|p| gt_inv.transform_point(p))
        .collect();
    add_noise(&mut target, spec.noise_sigma, &mut rng);
    add_noise(&mut source, spec.noise_sigma, &mut rng);
    Ok(ScenePair {
        source: PointCloud::new(source)?,
        target: PointCloud::new(target)?,
        ground_truth: gt,
    })
}

/// SHA-256 over the coordinates of both clouds and the ground truth, as hex.
pub fn scene_hash(pair: &ScenePair) -> String {
    let mut h = Sha256::new();
    for cloud in [&pair.source, &pair.target] {
        h.update((cloud.len() as u64).to_le_bytes());
        for p in cloud.points() {
            for c in p.iter() {
                h.update(c.to_le_bytes());
            }
        }
    }
    for c in pair.ground_truth.to_matrix().iter() {
        h.update(c.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub time: f64,
    /// Axis-angle orientation, radians.
    #[serde(default)]
    pub rotation: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl Waypoint {
    pub fn pose(&self) -> Pose {
        Pose::new(
            so3_exp(&Vector3::from(self.rotation)),
            Vector3::from(self.translation),
        )
    }
}

/// Continuous-time white-noise densities and bias random walks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuNoise {
    /// m/s²/√Hz.
    pub accel_density: f64,
    /// rad/s/√Hz.
    pub gyro_density: f64,
    /// m/s³/√Hz.
    pub accel_bias_walk: f64,
    /// rad/s²/√Hz.
    pub gyro_bias_walk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
    /// Seconds the last waypoint is held after it is reached.
    #[serde(default)]
    pub hold: f64,
    pub scan_rate: f64,
    pub imu_rate: f64,
    #[serde(default)]
    pub imu_noise: ImuNoise,
    /// Draw every scan independently from the geometry; when false all
    /// scans share one world-frame sample.
    #[serde(default = "default_true")]
    pub resample_scans: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub pose: Pose,
    /// World-frame velocity.
    pub velocity: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Body-frame scans, timestamped.
    pub scans: Vec<PointCloud>,
    pub imu: Vec<ImuSample>,
    /// Ground truth at every scan time.
    pub ground_truth: Vec<TrajectoryPoint>,
}

/// Piecewise constant-twist motion through the waypoints.
#[derive(Clone, Debug)]
pub struct ScrewPath {
    waypoints: Vec<(f64, Pose)>,
    /// Body twist rate of each segment, per second.
    rates: Vec<Twist>,
    end: f64,
}

impl ScrewPath {
    pub fn new(spec: &TrajectorySpec) -> Result<Self> {
        let wp = &spec.waypoints;
        if wp.is_empty() {
            return Err(Error::DegenerateTrajectory("no waypoints".into()));
        }
        if !(spec.hold >= 0.0 && spec.hold.is_finite()) {
            return Err(Error::DegenerateTrajectory("hold must be >= 0".into()));
        }
        let mut rates = Vec::with_capacity(wp.len().saturating_sub(1));
        for pair in wp.windows(2) {
            let dt = pair[1].time - pair[0].time;
            if !(dt > 0.0) {
                return Err(Error::DegenerateTrajectory(format!(
                    "waypoint times {} and {} are not increasing",
                    pair[0].time, pair[1].time
                )));
            }
            let rel = se3_log(&(pair[0].pose().inverse() * pair[1].pose()));
            rates.push(Twist(rel.0 / dt));
        }
        let end = wp[wp.len() - 1].time + spec.hold;
        if !(end > wp[0].time) {
            return Err(Error::DegenerateTrajectory("trajectory has zero duration".into()));
        }
        Ok(ScrewPath {
            waypoints: wp.iter().map(|w| (w.time, w.pose())).collect(),
            rates,
            end,
        })
    }

    pub fn start(&self) -> f64 {
        self.waypoints[0].0
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    fn segment(&self, t: f64) -> Option<usize> {
        let last = self.waypoints.len() - 1;
        if last == 0 || t >= self.waypoints[last].0 {
            return None;
        }
        Some(
            self.waypoints[..last]
                .iter()
                .rposition(|(t0, _)| *t0 <= t)
                .unwrap_or(0),
        )
    }

    /// Pose, body twist rate `[ω; v]` at time `t`.
    pub fn state(&self, t: f64) -> (Pose, Twist) {
        match self.segment(t) {
            Some(i) => {
                let (t0, base) = self.waypoints[i];
                let rate = self.rates[i];
                (pose_boxplus(&base, &Twist(rate.0 * (t - t0))), rate)
            }
            None => (self.waypoints[self.waypoints.len() - 1].1, Twist::zero()),
        }
    }

    /// World-frame velocity at `t`.
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let (pose, rate) = self.state(t);
        pose.rotation * rate.translation()
    }

    /// Noise-free specific force and angular rate in the body frame.
    pub fn imu(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (pose, rate) = self.state(t);
        let (w, v) = (rate.rotation(), rate.translation());
        let accel = w.cross(&v) - pose.rotation.transpose() * GRAVITY;
        (accel, w)
    }
}

/// Renders scans along the path and synthesizes the IMU stream.
pub fn generate_trajectory(spec: &TrajectorySpec, scene: &SceneSpec) -> Result<Trajectory> {
    scene.validate()?;
    if !(spec.scan_rate > 0.0 && spec.imu_rate > 0.0) {
        return Err(Error::DegenerateTrajectory("rates must be > 0".into()));
    }
    let path = ScrewPath::new(spec)?;
    let surfaces = scene_surfaces(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ scene.seed.rotate_left(32));

    let span = path.end() - path.start();
    let n_scans = (span * spec.scan_rate + 1e-9).floor() as usize + 1;
    let shared = if spec.resample_scans {
        None
    } else {
        Some(sample_surfaces(&surfaces, scene.density, &mut rng))
    };
    let mut scans = Vec::with_capacity(n_scans);
    let mut ground_truth = Vec::with_capacity(n_scans);
    for j in 0..n_scans {
        let t = path.start() + j as f64 / spec.scan_rate;
        let (pose, _) = path.state(t);
        let world = match &shared {
            Some(pts) => pts.clone(),
            None => sample_surfaces(&surfaces, scene.density, &mut rng),
        };
        let inv = pose.inverse();
        let mut body: Vec<Point> = world.iter().map(|p| inv.transform_point(p)).collect();
        add_noise(&mut body, scene.noise_sigma, &mut rng);
        scans.push(PointCloud::new(body)?.with_timestamp(t));
        ground_truth.push(TrajectoryPoint {
            time: t,
            pose,
            velocity: path.velocity(t),
        });
    }

    let dt = 1.0 / spec.imu_rate;
    let n_imu = (span * spec.imu_rate + 1e-9).floor() as usize + 1;
    let n = &spec.imu_noise;
    let white = |density: f64| density * spec.imu_rate.sqrt();
    let walk = |density: f64| density * dt.sqrt();
    let mut accel_bias = Vector3::zeros();
    let mut gyro_bias = Vector3::zeros();
    let gauss = |rng: &mut ChaCha8Rng, s: f64| -> Vector3<f64> {
        if s > 0.0 {
            Vector3::from_fn(|_, _| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
        } else {
            Vector3::zeros()
        }
    };
    let mut imu = Vec::with_capacity(n_imu);
    for i in 0..n_imu {
        let t = path.start() + i as f64 * dt;
        let (a, w) = path.imu(t);
        imu.push(ImuSample {
            timestamp: t,
            accel: a + accel_bias + gauss(&mut rng, white(n.accel_density)),
            gyro: w + gyro_bias + gauss(&mut rng, white(n.gyro_density)),
        });
        accel_bias += gauss(&mut rng, walk(n.accel_bias_walk));
        gyro_bias += gauss(&mut rng, walk(n.gyro_bias_walk));
    }

    Ok(Trajectory {
        scans,
        imu,
        ground_truth,
    })
}
