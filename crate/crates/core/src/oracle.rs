//! Monte-Carlo reference distributions for scan matching and the
//! consistency metrics used to score estimated covariances against them.

use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{pose_boxplus, se3_log, Pose, Twist};
use crate::pointcloud::{KdTree, PointCloud};
use crate::stein::{solve_icp_with_tree, PoseWithCovariance, SolverConfig, SolverMode};

/// Fewest converged samples accepted for a distribution.
pub const MIN_CONVERGED: usize = 10;
const KL_REGULARIZATION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Rotation,
    Translation,
}

impl Block {
    fn offset(self) -> usize {
        match self {
            Block::Rotation => 0,
            Block::Translation => 3,
        }
    }

    pub fn of_vector(self, v: &Vector6<f64>) -> Vector3<f64> {
        v.fixed_rows::<3>(self.offset()).into_owned()
    }

    pub fn of_matrix(self, m: &Matrix6<f64>) -> Matrix3<f64> {
        let o = self.offset();
        m.fixed_view::<3, 3>(o, o).into_owned()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: usize,
    /// Per-axis standard deviation of the initial-pose perturbation `[θ; ρ]`.
    pub init_sigma: [f64; 6],
    /// Standard deviation of the noise added to every source point, meters.
    pub point_sigma: f64,
    /// Fraction of converged samples kept, ranked by twist norm.
    pub quantile: f64,
    /// Single-particle solver run for every sample.
    pub solver: SolverConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 1000,
            init_sigma: [0.05, 0.05, 0.05, 0.1, 0.1, 0.1],
            point_sigma: 0.02,
            quantile: 0.9,
            solver: SolverConfig {
                early_stop_eps: 1e-10,
                ..SolverConfig::gauss_newton()
            },
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::InvalidConfig("MC samples must be >= 2".into()));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::InvalidConfig("quantile must be in (0, 1]".into()));
        }
        if self.init_sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0))
            || !(self.point_sigma.is_finite() && self.point_sigma >= 0.0)
        {
            return Err(Error::InvalidConfig("MC sigmas must be >= 0".into()));
        }
        if self.solver.particle_count != 1 {
            return Err(Error::InvalidConfig("MC solver must use one particle".into()));
        }
        self.solver.validate()
    }
}

/// Sample mean and `1/(M-1)` covariance.
pub fn sample_moments(twists: &[Twist]) -> (Vector6<f64>, Matrix6<f64>) {
    let m = twists.len() as f64;
    let mean = twists.iter().fold(Vector6::zeros(), |a, t| a + t.0) / m;
    let mut cov = Matrix6::zeros();
    for t in twists {
        let d = t.0 - mean;
        cov += d * d.transpose();
    }
    cov /= (m - 1.0).max(1.0);
    (mean, 0.5 * (cov + cov.transpose()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDistribution {
    /// Converged twists relative to ground truth, in sample order.
    pub samples: Vec<Twist>,
    /// Indices of samples whose solve failed or did not converge.
    pub divergent: Vec<usize>,
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    /// Samples kept by the quantile cut-off, in sample order.
    pub kept: Vec<Twist>,
    pub kept_mean: Vector6<f64>,
    pub kept_covariance: Matrix6<f64>,
    pub quantile: f64,
}

/// The `⌈q·n⌉` samples with the smallest twist norm, in original order.
pub fn quantile_filter(samples: &[Twist], q: f64) -> Vec<Twist> {
    let keep = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len().max(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .0
            .norm()
            .total_cmp(&samples[b].0.norm())
            .then(a.cmp(&b))
    });
    let mut chosen = order[..keep.min(samples.len())].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| samples[i]).collect()
}

/// Runs the single-particle solver from perturbed starts on noisy copies of
/// the source.
///
/// Sample `i` starts at `prior · exp(δ)` with `δ ~ N(0, init_sigma²)`, adds
/// `N(0, point_sigma²)` to every source point, and records
/// `log(gt⁻¹ · T̂)`. Each sample draws from its own seeded stream, so the
/// result does not depend on scheduling.
pub fn mc_icp_distribution(
    source: &PointCloud,
    target: &PointCloud,
    prior: &Pose,
    ground_truth: &Pose,
    config: &McConfig,
    seed: u64,
) -> Result<McDistribution> {
    config.validate()?;
    let tree = KdTree::build(target)?;
    let gt_inv = ground_truth.inverse();
    let results: Vec<Option<Twist>> = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let delta = Twist(Vector6::from_fn(|j, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * config.init_sigma[j]
            }));
            let noisy: PointCloud = if config.point_sigma > 0.0 {
                source
                    .points()
                    .iter()
                    .map(|p| {
                        p + Vector3::from_fn(|_, _| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * config.point_sigma
                        })
                    })
                    .collect()
            } else {
                source.clone()
            };
            let start = PoseWithCovariance::certain(pose_boxplus(prior, &delta));
            match solve_icp_with_tree(&start, &noisy, &tree, &config.solver, 0) {
                Ok(out) if out.converged && out.pose.is_finite() => {
                    Some(se3_log(&(gt_inv * out.pose)))
                }
                _ => None,
            }
        })
        .collect();

    let divergent: Vec<usize> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.is_none().then_some(i))
        .collect();
    let samples: Vec<Twist> = results.into_iter().flatten().collect();
    if samples.len() < MIN_CONVERGED {
        return Err(Error::TooFewConverged {
            converged: samples.len(),
            required: MIN_CONVERGED,
        });
    }
    if !divergent.is_empty() {
        log::warn!("{} of {} MC samples diverged", divergent.len(), config.samples);
    }
    let (mean, covariance) = sample_moments(&samples);
    let kept = quantile_filter(&samples, config.quantile);
    let (kept_mean, kept_covariance) = sample_moments(&kept);
    Ok(McDistribution {
        samples,
        divergent,
        mean,
        covariance,
        kept,
        kept_mean,
        kept_covariance,
        quantile: config.quantile,
    })
}

/// `KL(a ‖ b)` between the 3-D Gaussians of one block.
pub fn gaussian_kl(
    mean_a: &Vector6<f64>,
    cov_a: &Matrix6<f64>,
    mean_b: &Vector6<f64>,
    cov_b: &Matrix6<f64>,
    block: Block,
) -> Result<f64> {
    let reg = Matrix3::identity() * KL_REGULARIZATION;
    let sa = block.of_matrix(cov_a) + reg;
    let sb = block.of_matrix(cov_b) + reg;
    let ca = sa.cholesky().ok_or(Error::NotPositiveDefinite("KL covariance a"))?;
    let cb = sb.cholesky().ok_or(Error::NotPositiveDefinite("KL covariance b"))?;
    let d = block.of_vector(mean_b) - block.of_vector(mean_a);
    let trace = cb.solve(&sa).trace();
    let maha = d.dot(&cb.solve(&d));
    let log_det = |l: &Matrix3<f64>| 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let kl = 0.5 * (trace + maha - 3.0 + log_det(&cb.l()) - log_det(&ca.l()));
    Ok(kl.max(0.0))
}

/// `sqrt(Σ eᵢᵀ Σᵢ⁻¹ eᵢ / (3M))`.
pub fn nne(errors: &[Vector3<f64>], covariances: &[Matrix3<f64>]) -> Result<f64> {
    if errors.len() != covariances.len() {
        return Err(Error::DimensionMismatch {
            expected: errors.len(),
            found: covariances.len(),
        });
    }
    if errors.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut sum = 0.0;
    for (e, c) in errors.iter().zip(covariances) {
        let chol = c.cholesky().ok_or(Error::NotPositiveDefinite("NNE covariance"))?;
        sum += e.dot(&chol.solve(e));
    }
    Ok((sum / (3 * errors.len()) as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub kl_trans: f64,
    pub kl_rot: f64,
    pub nne_trans: f64,
    pub nne_rot: f64,
    pub quantile: f64,
}

/// Scores an estimate (twist and covariance relative to ground truth)
/// against the quantile-filtered MC samples: KL of the estimate from the
/// MC Gaussian, and NNE of the MC samples about the estimate mean under
/// the estimate covariance.
pub fn consistency(
    estimate_mean: &Vector6<f64>,
    estimate_cov: &Matrix6<f64>,
    mc: &McDistribution,
) -> Result<ConsistencyReport> {
    let score = |block: Block| -> Result<(f64, f64)> {
        let kl = gaussian_kl(estimate_mean, estimate_cov, &mc.kept_mean, &mc.kept_covariance, block)?;
        let cov = block.of_matrix(estimate_cov);
        let mu = block.of_vector(estimate_mean);
        let errors: Vec<Vector3<f64>> = mc.kept.iter().map(|t| block.of_vector(&t.0) - mu).collect();
        let covs = vec![cov; errors.len()];
        Ok((kl, nne(&errors, &covs)?))
    };
    let (kl_trans, nne_trans) = score(Block::Translation)?;
    let (kl_rot, nne_rot) = score(Block::Rotation)?;
    Ok(ConsistencyReport {
        kl_trans,
        kl_rot,
        nne_trans,
        nne_rot,
        quantile: mc.quantile,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub particles: usize,
    pub seed: u64,
    pub mode: SolverMode,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_ms: f64,
    /// Translation and rotation norms of `log(gt⁻¹ · T̂)`.
    pub trans_error: f64,
    pub rot_error: f64,
    /// Absent for a single particle, whose covariance is zero.
    pub consistency: Option<ConsistencyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub particles: usize,
    pub mode: SolverMode,
    pub mean_iterations: f64,
    pub mean_runtime_ms: f64,
    pub mean_trans_error: f64,
    pub mean_rot_error: f64,
    pub mean_kl_trans: Option<f64>,
    pub mean_nne_trans: Option<f64>,
    pub mean_kl_rot: Option<f64>,
    pub mean_nne_rot: Option<f64>,
}

/// Runs the solver for every `(K, seed)` and scores each run against `mc`.
#[allow(clippy::too_many_arguments)]
pub fn ablation_sweep(
    source: &PointCloud,
    target: &PointCloud,
    prior: &Pose,
    ground_truth: &Pose,
    particle_counts: &[usize],
    seeds: &[u64],
    solver: &SolverConfig,
    mc: &McDistribution,
) -> Result<Vec<AblationRow>> {
    let tree = KdTree::build(target)?;
    let gt_inv = ground_truth.inverse();
    let start = PoseWithCovariance::certain(*prior);
    let mut rows = Vec::new();
    for &k in particle_counts {
        let config = SolverConfig {
            particle_count: k,
            ..solver.clone()
        };
        for &seed in seeds {
            let clock = Instant::now();
            let out = solve_icp_with_tree(&start, source, &tree, &config, seed)?;
            let runtime_ms = clock.elapsed().as_secs_f64() * 1e3;
            let err = se3_log(&(gt_inv * out.pose));
            let consistency = if k > 1 {
                Some(consistency(&err.0, &out.particle_covariance, mc)?)
            } else {
                None
            };
            rows.push(AblationRow {
                particles: k,
                seed,
                mode: config.mode,
                iterations: out.iterations,
                converged: out.converged,
                runtime_ms,
                trans_error: err.translation().norm(),
                rot_error: err.rotation().norm(),
                consistency,
            });
        }
    }
    Ok(rows)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per-`(K, mode)` means over seeds, in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut keys: Vec<(usize, SolverMode)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.particles, r.mode)) {
            keys.push((r.particles, r.mode));
        }
    }
    keys.into_iter()
        .map(|(k, mode)| {
            let group: Vec<&AblationRow> =
                rows.iter().filter(|r| r.particles == k && r.mode == mode).collect();
            let opt = |f: fn(&ConsistencyReport) -> f64| {
                let vals: Vec<f64> = group.iter().filter_map(|r| r.consistency.as_ref().map(f)).collect();
                (!vals.is_empty()).then(|| mean_of(vals.into_iter()))
            };
            AblationSummary {
                particles: k,
                mode,
                mean_iterations: mean_of(group.iter().map(|r| r.iterations as f64)),
                mean_runtime_ms: mean_of(group.iter().map(|r| r.runtime_ms)),
                mean_trans_error: mean_of(group.iter().map(|r| r.trans_error)),
                mean_rot_error: mean_of(group.iter().map(|r| r.rot_error)),
                mean_kl_trans: opt(|c| c.kl_trans),
                mean_nne_trans: opt(|c| c.nne_trans),
                mean_kl_rot: opt(|c| c.kl_rot),
                mean_nne_rot: opt(|c| c.nne_rot),
            }
        })
        .collect()
}
